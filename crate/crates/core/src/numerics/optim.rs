//! Adam and SGD with momentum, both with L2 weight decay folded into the gradient.
//!
//! SGD additionally carries a reduce-on-plateau schedule: an exponential moving
//! average of the training loss is compared with the best value seen so far, and
//! after `patience` consecutive steps without improvement the learning rate is
//! multiplied by `plateau_factor`.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: u32,
    pub plateau_factor: f64,
    /// Weight of the previous value in the loss EMA driving the plateau schedule.
    pub loss_smoothing: f64,
}

pub const DEFAULT_PATIENCE: u32 = 70;
pub const DEFAULT_PLATEAU_FACTOR: f64 = 0.5;

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: DEFAULT_PATIENCE,
            plateau_factor: DEFAULT_PLATEAU_FACTOR,
            loss_smoothing: 0.9,
        }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            ..Self::adam(lr)
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_beta1(mut self, beta1: f64) -> Self {
        self.beta1 = beta1;
        self
    }

    pub fn with_patience(mut self, patience: u32) -> Self {
        self.patience = patience;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T: Real = f32> {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    /// Adam first moments, or SGD velocities.
    first: Vec<Matrix<T>>,
    /// Adam second moments; empty for SGD.
    second: Vec<Matrix<T>>,
    ema_loss: Option<f64>,
    best_loss: f64,
    bad_steps: u32,
    reductions: u32,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, params: &[&Matrix<T>]) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Matrix<T>> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        let second = match config.kind {
            OptimizerKind::Adam => zeros.clone(),
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Ok(Self {
            lr: config.lr,
            config,
            step: 0,
            first: zeros,
            second,
            ema_loss: None,
            best_loss: f64::INFINITY,
            bad_steps: 0,
            reductions: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn kind(&self) -> OptimizerKind {
        self.config.kind
    }

    /// Current learning rate (after any plateau reductions).
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Fresh state with the same configuration and buffer shapes.
    pub fn reset(&mut self) {
        for b in self.first.iter_mut().chain(self.second.iter_mut()) {
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        self.lr = self.config.lr;
        self.step = 0;
        self.ema_loss = None;
        self.best_loss = f64::INFINITY;
        self.bad_steps = 0;
        self.reductions = 0;
    }

    /// One step of whichever optimizer this state was built for. `loss` feeds the
    /// plateau schedule and is ignored by Adam.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[&Matrix<T>], loss: f64) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Adam => self.adam_step(params, grads),
            OptimizerKind::SgdMomentum => self.sgd_momentum_step(params, grads, loss),
        }
    }

    pub fn adam_step(&mut self, params: &mut [&mut Matrix<T>], grads: &[&Matrix<T>]) -> Result<()> {
        if self.config.kind != OptimizerKind::Adam {
            return Err(Error::Config("adam_step on a non-Adam state".into()));
        }
        self.check_shapes(params, grads)?;
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let wd = T::from_f64(c.weight_decay);
        let step_size = T::from_f64(self.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(c.epsilon);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gv = gv + wd * *pv;
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let denom = vv.sqrt() * inv_sqrt_bc2 + eps;
                *pv -= step_size * *mv / denom;
            }
        }
        Self::ensure_finite(params, "adam_step")
    }

    pub fn sgd_momentum_step(
        &mut self,
        params: &mut [&mut Matrix<T>],
        grads: &[&Matrix<T>],
        loss: f64,
    ) -> Result<()> {
        if self.config.kind != OptimizerKind::SgdMomentum {
            return Err(Error::Config("sgd_momentum_step on a non-SGD state".into()));
        }
        self.check_shapes(params, grads)?;
        self.step += 1;
        let mu = T::from_f64(self.config.momentum);
        let wd = T::from_f64(self.config.weight_decay);
        let lr = T::from_f64(self.lr);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let vel = self.first[i].data_mut();
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(vel) {
                *vv = mu * *vv + gv + wd * *pv;
                *pv -= lr * *vv;
            }
        }
        self.observe_loss(loss);
        Self::ensure_finite(params, "sgd_momentum_step")
    }

    fn observe_loss(&mut self, loss: f64) {
        if !loss.is_finite() {
            return;
        }
        let s = self.config.loss_smoothing;
        let ema = match self.ema_loss {
            None => loss,
            Some(prev) => s * prev + (1.0 - s) * loss,
        };
        self.ema_loss = Some(ema);
        if ema < self.best_loss {
            self.best_loss = ema;
            self.bad_steps = 0;
        } else {
            self.bad_steps += 1;
            if self.bad_steps >= self.config.patience {
                self.lr *= self.config.plateau_factor;
                self.bad_steps = 0;
                self.reductions += 1;
            }
        }
    }

    fn check_shapes(&self, params: &[&mut Matrix<T>], grads: &[&Matrix<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "optimizer built for {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), b) in params.iter().zip(grads).zip(&self.first) {
            if !p.same_shape(g) || !p.same_shape(b) {
                return Err(Error::Dimension(format!(
                    "parameter {:?} / gradient {:?} / buffer {:?}",
                    p.shape(),
                    g.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    fn ensure_finite(params: &[&mut Matrix<T>], what: &str) -> Result<()> {
        if params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericOverflow(what.into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(state: &mut OptimizerState<f64>, p: &mut Matrix<f64>, g: &Matrix<f64>, loss: f64) {
        state.step(&mut [p], &[g], loss).unwrap();
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = Matrix::<f64>::from_rows(&[[1.0, -2.0]]).unwrap();
        let orig = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1), &[&p]).unwrap();
        for _ in 0..10 {
            step_once(&mut s, &mut p, &g, 0.0);
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut p = Matrix::<f64>::zeros(1, 3);
        let g = Matrix::from_rows(&[[0.3, -5.0, 1e-3]]).unwrap();
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.01), &[&p]).unwrap();
        step_once(&mut s, &mut p, &g, 0.0);
        for (pv, gv) in p.data().iter().zip(g.data()) {
            assert!((pv + 0.01 * gv.signum()).abs() < 1e-7, "{pv}");
        }
    }

    #[test]
    fn sgd_without_momentum_is_plain_sgd() {
        let mut p = Matrix::<f64>::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let mut s = OptimizerState::new(OptimizerConfig::sgd_momentum(0.1, 0.0), &[&p]).unwrap();
        step_once(&mut s, &mut p, &g, 1.0);
        assert_eq!(p.data(), &[1.0 - 0.05, 2.0 + 0.1]);
    }

    #[test]
    fn plateau_reduces_once_after_patience() {
        let mut p = Matrix::<f64>::zeros(1, 1);
        let g = Matrix::zeros(1, 1);
        let cfg = OptimizerConfig::sgd_momentum(0.1, 0.9).with_patience(5);
        let mut s = OptimizerState::new(cfg, &[&p]).unwrap();
        for _ in 0..6 {
            step_once(&mut s, &mut p, &g, 2.0);
        }
        assert_eq!(s.reductions(), 1);
        assert!((s.lr() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn default_patience_is_seventy() {
        assert_eq!(OptimizerConfig::sgd_momentum(0.1, 0.9).patience, 70);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut p = Matrix::<f64>::zeros(1, 1);
        let g = Matrix::zeros(1, 1);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1), &[&p]).unwrap();
        assert!(s.sgd_momentum_step(&mut [&mut p], &[&g], 0.0).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Matrix::<f64>::zeros(1, 2);
        let g = Matrix::zeros(2, 1);
        let mut s = OptimizerState::new(OptimizerConfig::adam(0.1), &[&p]).unwrap();
        assert!(matches!(
            s.adam_step(&mut [&mut p], &[&g]),
            Err(Error::Dimension(_))
        ));
    }
}
