use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DISCRIMINATOR_WIDTH};
use super::penalties::{
    cond_cad_loss, conditional_domain_adversarial, fuse_concat, ib_penalty, irm_penalty, mix_with,
    modality_gap, ogm_coefficients, quantile_risk, style_randomize, uniformity_loss,
};
use super::{AlgorithmConfig, AlgorithmKind, Family};
use crate::data::{BatchMode, Minibatch};
use crate::error::{Error, Result};
use crate::model::{init_learner, LearnerParams, FEATURE_DIM};
use crate::numerics::{
    affine, affine_backward, softmax_cross_entropy, softmax_rows, Matrix, OptimizerConfig,
    OptimizerState, Rng,
};

/// Per-step record emitted by [`AlgorithmState::update`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Objective the learner stepped on.
    pub loss: f64,
    /// Classification cross-entropy component.
    pub ce: f64,
    pub penalties: BTreeMap<String, f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
struct Adversary {
    disc: Discriminator<f32>,
    opt: OptimizerState<f32>,
}

#[derive(Clone, Debug)]
struct StyleHead {
    w: Matrix<f32>,
    b: Matrix<f32>,
    opt: OptimizerState<f32>,
}

#[derive(Clone, Debug)]
enum Auxiliary {
    None,
    /// CDANN with fewer than two training modalities has no domain signal to adversarially remove.
    Adversary(Option<Adversary>),
    Style(StyleHead),
    /// DLMG's raw gap weight `w`; the applied weight is `sigmoid(w)`.
    GapWeight(Matrix<f32>),
    /// ERM++ running sum of parameters and the number of summed snapshots.
    Average(Option<(LearnerParams<f64>, u64)>),
}

/// Learner, optimizer and algorithm-specific auxiliaries of one training run.
#[derive(Clone, Debug)]
pub struct AlgorithmState {
    config: AlgorithmConfig,
    learner: LearnerParams<f32>,
    optimizer: OptimizerState<f32>,
    num_envs: usize,
    step: u64,
    rng: Rng,
    aux: Auxiliary,
}

fn learner_optimizer(config: &AlgorithmConfig, lr: f64, params: &[&Matrix<f32>]) -> Result<OptimizerState<f32>> {
    let wd = config.get("weight_decay")?;
    let opt = match config.kind.family() {
        Family::Mml => OptimizerConfig::sgd_momentum(lr, config.get("momentum")?)
            .with_patience(config.get("patience")? as u32),
        Family::Dg if config.kind == AlgorithmKind::Cdann => {
            OptimizerConfig::adam(lr).with_beta1(config.get("beta1")?)
        }
        Family::Dg => OptimizerConfig::adam(lr),
    };
    OptimizerState::new(opt.with_weight_decay(wd), params)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AlgorithmState {
    /// Fresh state for `num_envs` training modalities. The learner is drawn from the
    /// learner-init stream of `seed`; auxiliary randomness uses a separate stream.
    pub fn new(config: AlgorithmConfig, input_dim: usize, num_classes: usize, num_envs: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_envs == 0 {
            return Err(Error::Config("training needs at least one modality".into()));
        }
        let learner = init_learner(seed, input_dim, num_classes)?;
        let mut rng = Rng::derive("algorithm", seed);
        let dg_lr = config.get("lr")?;
        let adam = |lr: f64| OptimizerConfig::adam(lr);
        let aux = match config.kind {
            AlgorithmKind::Cdann if num_envs >= 2 => {
                let mut r = rng.fork("discriminator");
                let disc = Discriminator::new(&mut r, FEATURE_DIM + num_classes, DISCRIMINATOR_WIDTH, num_envs);
                let opt = OptimizerState::new(
                    adam(dg_lr)
                        .with_beta1(config.get("beta1")?)
                        .with_weight_decay(config.get("d_weight_decay")?),
                    &disc.tensors(),
                )?;
                Auxiliary::Adversary(Some(Adversary { disc, opt }))
            }
            AlgorithmKind::Cdann => Auxiliary::Adversary(None),
            AlgorithmKind::Urm => {
                let mut r = rng.fork("discriminator");
                let disc = Discriminator::new(&mut r, FEATURE_DIM, DISCRIMINATOR_WIDTH, 2);
                let opt = OptimizerState::new(adam(dg_lr), &disc.tensors())?;
                Auxiliary::Adversary(Some(Adversary { disc, opt }))
            }
            AlgorithmKind::SagNet => {
                let mut r = rng.fork("style-head");
                let bound = 1.0 / (FEATURE_DIM as f64).sqrt();
                let w = Matrix::from_vec(
                    FEATURE_DIM,
                    num_classes,
                    (0..FEATURE_DIM * num_classes)
                        .map(|_| r.uniform_range(-bound, bound) as f32)
                        .collect(),
                )?;
                let b = Matrix::zeros(1, num_classes);
                let opt = OptimizerState::new(adam(dg_lr), &[&w, &b])?;
                Auxiliary::Style(StyleHead { w, b, opt })
            }
            AlgorithmKind::Dlmg => Auxiliary::GapWeight(Matrix::zeros(1, 1)),
            AlgorithmKind::ErmPlusPlus => Auxiliary::Average(None),
            _ => Auxiliary::None,
        };
        let lr = if config.kind == AlgorithmKind::Eqrm && config.get("burnin_iters")? == 0.0 {
            config.get("eqrm_lr")?
        } else {
            dg_lr
        };
        let mut tensors = learner.tensor_refs();
        if let Auxiliary::GapWeight(w) = &aux {
            tensors.push(w);
        }
        let optimizer = learner_optimizer(&config, lr, &tensors)?;
        Ok(Self {
            config,
            learner,
            optimizer,
            num_envs,
            step: 0,
            rng,
            aux,
        })
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.config.kind
    }

    pub fn learner(&self) -> &LearnerParams<f32> {
        &self.learner
    }

    /// Number of completed updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    pub fn has_discriminator(&self) -> bool {
        matches!(self.aux, Auxiliary::Adversary(Some(_)))
    }

    /// DLMG's current gap weight `sigmoid(w)`.
    pub fn gap_weight(&self) -> Option<f64> {
        match &self.aux {
            Auxiliary::GapWeight(w) => Some(sigmoid(w.get(0, 0) as f64)),
            _ => None,
        }
    }

    /// First step included in the ERM++ parameter average.
    pub fn average_start(&self) -> u64 {
        (self.config.steps / 2) as u64
    }

    /// Parameters used for evaluation: the running average for ERM++ once it has
    /// started, the live learner otherwise.
    pub fn eval_params(&self) -> LearnerParams<f32> {
        match &self.aux {
            Auxiliary::Average(Some((sum, count))) => {
                let mut avg = sum.clone();
                for t in avg.tensors_mut() {
                    t.scale_in_place(1.0 / *count as f64);
                }
                avg.cast()
            }
            _ => self.learner.clone(),
        }
    }

    /// One learner step on `batch` (plus any auxiliary steps).
    pub fn update(&mut self, batch: &Minibatch) -> Result<StepMetrics> {
        let family = self.config.kind.family();
        if family == Family::Mml && batch.mode != BatchMode::Aligned {
            return Err(Error::Config(format!(
                "{} needs instance-aligned batches",
                self.config.kind
            )));
        }
        if batch.parts.len() != self.num_envs {
            return Err(Error::Dimension(format!(
                "state trains on {} modalities but the batch has {}",
                self.num_envs,
                batch.parts.len()
            )));
        }
        self.apply_schedule()?;
        let mut penalties = BTreeMap::new();
        let (loss, ce, grads, extra) = match family {
            Family::Mml => self.mml_gradients(batch, &mut penalties)?,
            Family::Dg => self.dg_gradients(batch, &mut penalties)?,
        };
        if !loss.is_finite() || !ce.is_finite() || !grads.is_finite() {
            return Err(Error::NumericOverflow(format!(
                "{} step {} produced a non-finite loss or gradient",
                self.config.kind, self.step
            )));
        }
        let lr = self.optimizer.lr();
        {
            let mut params = self.learner.tensors_mut();
            let mut grad_refs = grads.tensor_refs();
            if let (Auxiliary::GapWeight(w), Some(dw)) = (&mut self.aux, extra.as_ref()) {
                params.push(w);
                grad_refs.push(dw);
            }
            self.optimizer.step(&mut params, &grad_refs, loss)?;
        }
        if let Auxiliary::Average(acc) = &mut self.aux {
            if self.step >= (self.config.steps / 2) as u64 {
                let live: LearnerParams<f64> = self.learner.cast();
                match acc {
                    Some((sum, count)) => {
                        sum.add_scaled(&live, 1.0)?;
                        *count += 1;
                    }
                    None => *acc = Some((live, 1)),
                }
            }
        }
        let metrics = StepMetrics {
            step: self.step,
            loss,
            ce,
            penalties,
            lr,
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Optimizer resets at the annealing and burn-in switches.
    fn apply_schedule(&mut self) -> Result<()> {
        let switch = match self.config.kind {
            AlgorithmKind::Irm | AlgorithmKind::IbErm => {
                let anneal = self.config.get("anneal_iters")? as u64;
                (anneal > 0 && self.step == anneal).then(|| self.optimizer.lr())
            }
            AlgorithmKind::Eqrm => {
                let burnin = self.config.get("burnin_iters")? as u64;
                (burnin > 0 && self.step == burnin)
                    .then(|| self.config.get("eqrm_lr"))
                    .transpose()?
            }
            _ => None,
        };
        if let Some(lr) = switch {
            self.optimizer = learner_optimizer(&self.config, lr, &self.learner.tensor_refs())?;
        }
        Ok(())
    }

    fn annealed_lambda(&self) -> Result<f64> {
        let anneal = self.config.get("anneal_iters")? as u64;
        Ok(if self.step >= anneal {
            self.config.get("lambda")?
        } else {
            1.0
        })
    }

    #[allow(clippy::type_complexity)]
    fn mml_gradients(
        &mut self,
        batch: &Minibatch,
        penalties: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64, LearnerParams<f32>, Option<Matrix<f32>>)> {
        let k = batch.parts.len();
        let rows = batch.parts[0].len();
        let labels = &batch.parts[0].labels;
        let x = Matrix::vstack(&batch.parts.iter().map(|p| &p.x).collect::<Vec<_>>())?;
        let (features, cache) = self.learner.featurize(&x)?;
        let slices: Vec<Matrix<f32>> = (0..k).map(|m| features.row_slice(m * rows, (m + 1) * rows)).collect();
        let slice_refs: Vec<&Matrix<f32>> = slices.iter().collect();
        let fused = fuse_concat(&slice_refs)?;
        let logits = self.learner.classify(&fused)?;
        let (ce, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let mut grads = self.learner.zeros_like();
        let d_fused = self.learner.classifier_backward(&fused, &d_logits, &mut grads)?;
        let mut coeffs = vec![1.0f64; k];
        let mut loss = ce as f64;
        let mut d_slices: Vec<Matrix<f32>> = vec![d_fused.scale(1.0 / k as f32); k];
        let mut d_w = None;
        match self.config.kind {
            AlgorithmKind::Ogm => {
                let scores = slices
                    .iter()
                    .map(|f| {
                        let p = softmax_rows(&self.learner.classify(f)?);
                        Ok(labels.iter().enumerate().map(|(r, &y)| p.get(r, y as usize) as f64).sum::<f64>()
                            / rows as f64)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                coeffs = ogm_coefficients(&scores, self.config.get("alpha")?);
                for (m, c) in coeffs.iter().enumerate() {
                    penalties.insert(format!("ogm_coeff_{m}"), *c);
                }
            }
            AlgorithmKind::Dlmg => {
                let Auxiliary::GapWeight(w) = &self.aux else {
                    unreachable!("DLMG state carries a gap weight")
                };
                let raw = w.get(0, 0) as f64;
                let s = sigmoid(raw);
                let gw = self.config.get("gap_weight")?;
                let mut dw = Matrix::zeros(1, 1);
                if k >= 2 {
                    let label_refs: Vec<&[u32]> = vec![labels.as_slice(); k];
                    let (gap, dgap) = modality_gap(&slice_refs, &label_refs)?;
                    let gap = gap as f64;
                    loss += gw * s * gap;
                    for (d, g) in d_slices.iter_mut().zip(&dgap) {
                        d.add_scaled(g, (gw * s) as f32)?;
                    }
                    dw.set(0, 0, (gw * s * (1.0 - s) * gap) as f32);
                    penalties.insert("gap".into(), gap);
                }
                penalties.insert("gap_weight".into(), s);
                d_w = Some(dw);
            }
            _ => {}
        }
        for (d, &c) in d_slices.iter_mut().zip(&coeffs) {
            if c != 1.0 {
                d.scale_in_place(c as f32);
            }
        }
        let d_features = Matrix::vstack(&d_slices.iter().collect::<Vec<_>>())?;
        self.learner.featurizer_backward(&cache, &d_features, &mut grads)?;
        Ok((loss, ce as f64, grads, d_w))
    }

    #[allow(clippy::type_complexity)]
    fn dg_gradients(
        &mut self,
        batch: &Minibatch,
        penalties: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64, LearnerParams<f32>, Option<Matrix<f32>>)> {
        let kind = self.config.kind;
        if kind == AlgorithmKind::Mixup {
            return self.mixup_gradients(batch, penalties);
        }
        let k = batch.parts.len();
        let mut bounds = Vec::with_capacity(k);
        let mut start = 0;
        for p in &batch.parts {
            bounds.push((start, start + p.len()));
            start += p.len();
        }
        let x = Matrix::vstack(&batch.parts.iter().map(|p| &p.x).collect::<Vec<_>>())?;
        let labels: Vec<u32> = batch.parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        let (features, cache) = self.learner.featurize(&x)?;
        let mut grads = self.learner.zeros_like();

        if kind == AlgorithmKind::SagNet && self.config.get("adv_weight")? != 0.0 {
            let (loss, ce, d_features) = self.sagnet_features(&features, &labels, &mut grads, penalties)?;
            self.learner.featurizer_backward(&cache, &d_features, &mut grads)?;
            return Ok((loss, ce, grads, None));
        }

        let logits = self.learner.classify(&features)?;
        let (ce, mut d_logits) = softmax_cross_entropy(&logits, &labels)?;
        let ce = ce as f64;
        let mut loss = ce;
        let mut d_extra = Matrix::zeros(features.rows(), features.cols());
        let slice = |m: &Matrix<f32>, (a, b): (usize, usize)| m.row_slice(a, b);

        match kind {
            AlgorithmKind::Irm => {
                let lambda = self.annealed_lambda()?;
                let mut total = 0.0;
                for (e, &(a, b)) in bounds.iter().enumerate() {
                    let (pen, d) = irm_penalty(&slice(&logits, (a, b)), &batch.parts[e].labels)?;
                    total += pen as f64 / k as f64;
                    let scale = (lambda / k as f64) as f32;
                    for r in a..b {
                        for (o, &g) in d_logits.row_mut(r).iter_mut().zip(d.row(r - a)) {
                            *o += scale * g;
                        }
                    }
                }
                loss += lambda * total;
                penalties.insert("irm".into(), total);
                penalties.insert("lambda".into(), lambda);
            }
            AlgorithmKind::IbErm => {
                let lambda = self.annealed_lambda()?;
                let parts: Vec<Matrix<f32>> = bounds.iter().map(|&r| slice(&features, r)).collect();
                let (pen, d) = ib_penalty(&parts.iter().collect::<Vec<_>>())?;
                for (&(a, _), g) in bounds.iter().zip(&d) {
                    add_rows(&mut d_extra, a, g, lambda as f32);
                }
                loss += lambda * pen as f64;
                penalties.insert("ib".into(), pen as f64);
                penalties.insert("lambda".into(), lambda);
            }
            AlgorithmKind::Cdann => {
                if let Auxiliary::Adversary(Some(adv)) = &mut self.aux {
                    let parts: Vec<Matrix<f32>> = bounds.iter().map(|&r| slice(&features, r)).collect();
                    let label_parts: Vec<&[u32]> = batch.parts.iter().map(|p| p.labels.as_slice()).collect();
                    let out = conditional_domain_adversarial(
                        &parts.iter().collect::<Vec<_>>(),
                        &label_parts,
                        self.learner.num_classes(),
                        &mut adv.disc,
                        &mut adv.opt,
                        self.config.get("lambda")?,
                        self.config.get("grad_penalty")?,
                        self.config.get("d_steps")? as usize,
                    )?;
                    for (&(a, _), g) in bounds.iter().zip(&out.d_features) {
                        add_rows(&mut d_extra, a, g, 1.0);
                    }
                    loss += out.learner_loss;
                    penalties.insert("disc_loss".into(), out.discriminator_loss);
                    penalties.insert("grad_penalty".into(), out.gradient_penalty);
                    penalties.insert("adversarial".into(), out.learner_loss);
                }
            }
            AlgorithmKind::CondCAD => {
                let lambda = self.config.get("lambda")?;
                let domains: Vec<usize> = bounds
                    .iter()
                    .enumerate()
                    .flat_map(|(e, &(a, b))| std::iter::repeat_n(e, b - a))
                    .collect();
                let (pen, d) = cond_cad_loss(&features, &labels, &domains, self.config.get("temperature")? as f32)?;
                d_extra.add_scaled(&d, lambda as f32)?;
                loss += lambda * pen as f64;
                penalties.insert("cond_cad".into(), pen as f64);
            }
            AlgorithmKind::Eqrm if self.step >= self.config.get("burnin_iters")? as u64 => {
                let mut risks = Vec::with_capacity(k);
                let mut per_env = Vec::with_capacity(k);
                for &(a, b) in &bounds {
                    let (r, d) = softmax_cross_entropy(&slice(&logits, (a, b)), &labels[a..b])?;
                    risks.push(r as f64);
                    per_env.push(d);
                }
                let q = quantile_risk(&risks, self.config.get("quantile")?)?;
                for ((&(a, _), d), &w) in bounds.iter().zip(&per_env).zip(&q.weights) {
                    for r in 0..d.rows() {
                        for (o, &g) in d_logits.row_mut(a + r).iter_mut().zip(d.row(r)) {
                            *o = w as f32 * g;
                        }
                    }
                }
                loss = q.value;
                penalties.insert("quantile_risk".into(), q.value);
                penalties.insert("bandwidth".into(), q.bandwidth);
            }
            AlgorithmKind::Urm => {
                let Auxiliary::Adversary(Some(adv)) = &mut self.aux else {
                    unreachable!("URM state carries a discriminator")
                };
                let out = uniformity_loss(&features, &mut adv.disc, &mut adv.opt, self.config.get("lambda")?, &mut self.rng)?;
                d_extra.add_scaled(&out.d_features[0], 1.0)?;
                loss += out.learner_loss;
                penalties.insert("disc_loss".into(), out.discriminator_loss);
                penalties.insert("uniformity".into(), out.learner_loss);
            }
            _ => {}
        }
        let mut d_features = self.learner.classifier_backward(&features, &d_logits, &mut grads)?;
        d_features.add_scaled(&d_extra, 1.0)?;
        self.learner.featurizer_backward(&cache, &d_features, &mut grads)?;
        Ok((loss, ce, grads, None))
    }

    /// Classifier on style-randomized features, style head on content-randomized features,
    /// and the adversarial push of the style head toward uniform predictions.
    fn sagnet_features(
        &mut self,
        features: &Matrix<f32>,
        labels: &[u32],
        grads: &mut LearnerParams<f32>,
        penalties: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64, Matrix<f32>)> {
        let w_adv = self.config.get("adv_weight")?;
        let sr = style_randomize(features, &mut self.rng)?;
        let Auxiliary::Style(head) = &mut self.aux else {
            unreachable!("SagNet state carries a style head")
        };
        // Style head step on detached content-randomized features.
        let style_logits = affine(&sr.content, &head.w, &head.b)?;
        let (style_ce, d_style_logits) = softmax_cross_entropy(&style_logits, labels)?;
        let (_, dw, db) = affine_backward(&sr.content, &head.w, &d_style_logits)?;

        // Adversarial: -mean over classes of log-softmax, gradient (p - 1/C) / B.
        let p = softmax_rows(&style_logits);
        let c = p.cols() as f32;
        let b = p.rows() as f32;
        let mut adv = 0.0f64;
        let mut d_adv_logits = p.clone();
        for r in 0..p.rows() {
            let lse = crate::numerics::log_sum_exp(style_logits.row(r));
            adv -= style_logits.row(r).iter().map(|&z| (z - lse) as f64).sum::<f64>() / c as f64;
            d_adv_logits.row_mut(r).iter_mut().for_each(|v| *v = (*v - 1.0 / c) / b);
        }
        adv /= b as f64;
        let d_content = d_adv_logits.matmul_nt(&head.w)?.scale(w_adv as f32);
        head.opt.step(&mut [&mut head.w, &mut head.b], &[&dw, &db], style_ce as f64)?;

        let logits = self.learner.classify(&sr.style)?;
        let (ce, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let d_style = self.learner.classifier_backward(&sr.style, &d_logits, grads)?;
        let mut d_features = sr.style_backward(&d_style);
        d_features.add_scaled(&sr.content_backward(&d_content), 1.0)?;
        penalties.insert("style_ce".into(), style_ce as f64);
        penalties.insert("adversarial".into(), adv);
        Ok((ce as f64 + w_adv * adv, ce as f64, d_features))
    }

    /// Inter-modality mixup over the ring of pairs `(e, e + 1)` of a random modality order.
    #[allow(clippy::type_complexity)]
    fn mixup_gradients(
        &mut self,
        batch: &Minibatch,
        penalties: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64, LearnerParams<f32>, Option<Matrix<f32>>)> {
        let k = batch.parts.len();
        let alpha = self.config.get("alpha")?;
        let order = self.rng.permutation(k);
        let mut mixed = Vec::with_capacity(k);
        for i in 0..k {
            let (a, b) = (&batch.parts[order[i]], &batch.parts[order[(i + 1) % k]]);
            let lambda = self.rng.beta(alpha, alpha)?;
            mixed.push(mix_with(a, b, lambda)?);
        }
        let x = Matrix::vstack(&mixed.iter().map(|m| &m.x).collect::<Vec<_>>())?;
        let (features, cache) = self.learner.featurize(&x)?;
        let logits = self.learner.classify(&features)?;
        let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        let mut start = 0;
        for m in &mixed {
            let n = m.labels_a.len();
            let part = logits.row_slice(start, start + n);
            let (la, da) = softmax_cross_entropy(&part, &m.labels_a)?;
            let (lb, db) = softmax_cross_entropy(&part, &m.labels_b)?;
            let l = m.lambda as f32;
            loss += (m.lambda * la as f64 + (1.0 - m.lambda) * lb as f64) / k as f64;
            let mut d = da.scale(l / k as f32);
            d.add_scaled(&db, (1.0 - l) / k as f32)?;
            add_rows(&mut d_logits, start, &d, 1.0);
            start += n;
        }
        penalties.insert("mix_lambda".into(), mixed.iter().map(|m| m.lambda).sum::<f64>() / k as f64);
        let mut grads = self.learner.zeros_like();
        let d_features = self.learner.classifier_backward(&features, &d_logits, &mut grads)?;
        self.learner.featurizer_backward(&cache, &d_features, &mut grads)?;
        Ok((loss, loss, grads, None))
    }
}

fn add_rows(dst: &mut Matrix<f32>, start: usize, src: &Matrix<f32>, scale: f32) {
    for r in 0..src.rows() {
        for (o, &g) in dst.row_mut(start + r).iter_mut().zip(src.row(r)) {
            *o += scale * g;
        }
    }
}
