//! Finite-difference gradient suites, run by the test suite and by the `gradcheck` command.

use serde::Serialize;

use crate::algorithms::{
    cond_cad_loss, ib_penalty, irm_penalty, modality_gap, Discriminator, StyleRandomized,
};
use crate::error::Result;
use crate::model::LearnerParams;
use crate::numerics::{finite_difference_gradient, relative_error, softmax_cross_entropy, Matrix, Rng};

/// Central-difference step used by every suite.
pub const FD_STEP: f64 = 1e-5;
pub const LEARNER_TOLERANCE: f64 = 1e-5;
pub const PENALTY_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per learner tensor; the full vector is covered by a directional check.
pub const COORDS_PER_TENSOR: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("sized")
}

fn learner_loss(p: &LearnerParams<f64>, x: &Matrix<f64>, labels: &[u32]) -> f64 {
    let logits = p.logits(x).expect("shapes fixed by the case");
    softmax_cross_entropy(&logits, labels).expect("labels in range").0
}

/// Relative error of the learner's cross-entropy gradient on one random case: sampled
/// coordinates per tensor, plus the derivative along a random unit direction over all
/// parameters.
pub fn learner_case(seed: u64, input_dim: usize, classes: usize, batch: usize, trailing_relu: bool) -> Result<f64> {
    let mut rng = Rng::derive("gradcheck-learner", seed);
    let mut params = LearnerParams::<f64>::init(&mut rng, input_dim, classes)?.with_trailing_relu(trailing_relu);
    // Nonzero biases so every term of the backward pass is exercised.
    for t in params.tensors_mut().into_iter().skip(1).step_by(2) {
        t.data_mut().iter_mut().for_each(|v| *v = 0.1 * rng.normal());
    }
    let x = normal_matrix(&mut rng, batch, input_dim);
    let labels: Vec<u32> = (0..batch).map(|_| rng.below(classes) as u32).collect();
    let (_, grads, _) = params.forward_loss_backward(&x, &labels)?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let size = params.tensors()[t].data().len();
        let picks = rng.sample_without_replacement(size, COORDS_PER_TENSOR.min(size))?;
        for j in picks {
            let orig = params.tensors()[t].data()[j];
            params.tensors_mut()[t].data_mut()[j] = orig + FD_STEP;
            let hi = learner_loss(&params, &x, &labels);
            params.tensors_mut()[t].data_mut()[j] = orig - FD_STEP;
            let lo = learner_loss(&params, &x, &labels);
            params.tensors_mut()[t].data_mut()[j] = orig;
            numeric.push((hi - lo) / (2.0 * FD_STEP));
            analytic.push(grads.tensors()[t].data()[j]);
        }
    }
    let coordinate_error = relative_error(&analytic, &numeric);

    let flat = params.to_flat();
    let g = grads.to_flat();
    let mut dir: Vec<f64> = (0..flat.len()).map(|_| rng.normal()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let mut probe = params.clone();
    let mut shifted = |s: f64| -> Result<f64> {
        let moved: Vec<f64> = flat.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        probe.set_from_flat(&moved)?;
        Ok(learner_loss(&probe, &x, &labels))
    };
    let hi = shifted(FD_STEP)?;
    let lo = shifted(-FD_STEP)?;
    let fd = (hi - lo) / (2.0 * FD_STEP);
    let exact: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
    let directional_error = relative_error(&[exact], &[fd]);
    Ok(coordinate_error.max(directional_error))
}

/// Ten learner cases at `D_in = 16, C = 5, B = 4`, half with a trailing ReLU.
pub fn learner_suite(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        worst = worst.max(learner_case(seed.wrapping_add(case as u64), 16, 5, 4, case % 2 == 1)?);
    }
    Ok(CheckOutcome {
        name: "learner cross-entropy".into(),
        cases,
        max_relative_error: worst,
        tolerance: LEARNER_TOLERANCE,
    })
}

fn fd_error(x: &Matrix<f64>, analytic: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> Result<f64> {
    let (r, c) = x.shape();
    let fd = finite_difference_gradient(|v| f(&Matrix::from_vec(r, c, v.to_vec()).expect("sized")), x.data(), FD_STEP)?;
    Ok(relative_error(analytic.data(), &fd))
}

pub fn irm_suite(seed: u64, cases: usize) -> Result<CheckOutcome> {
    let mut rng = Rng::derive("gradcheck-irm", seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (b, c) = (1 + case % 6, 2 + case % 5);
        let logits = normal_matrix(&mut rng, b, c).scale(2.0);
        let labels: Vec<u32> = (0..b).map(|_| rng.below(c) as u32).collect();
        let (_, grad) = irm_penalty(&logits, &labels)?;
        worst = worst.max(fd_error(&logits, &grad, |l| irm_penalty(l, &labels).expect("valid").0)?);
    }
    Ok(CheckOutcome {
        name: "IRM penalty".into(),
        cases,
        max_relative_error: worst,
        tolerance: PENALTY_TOLERANCE,
    })
}

/// Remaining penalty gradients: information bottleneck, modality gap, conditional
/// contrastive bottleneck, style randomization and the discriminator gradient penalty.
pub fn penalty_suites(seed: u64, cases: usize) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::derive("gradcheck-penalties", seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..cases {
        let a = normal_matrix(&mut rng, 4, 3);
        let b = normal_matrix(&mut rng, 5, 3);
        let (_, g) = ib_penalty(&[&a, &b])?;
        worst[0] = worst[0].max(fd_error(&a, &g[0], |x| ib_penalty(&[x, &b]).expect("valid").0)?);

        let labels: Vec<u32> = (0..4).map(|_| rng.below(2) as u32).collect();
        let other = normal_matrix(&mut rng, 4, 3).map(|v| v + 1.0);
        let (_, g) = modality_gap(&[&a, &other], &[&labels, &labels])?;
        worst[1] = worst[1].max(fd_error(&a, &g[0], |x| modality_gap(&[x, &other], &[&labels, &labels]).expect("valid").0)?);

        let f = normal_matrix(&mut rng, 8, 4);
        let cl: Vec<u32> = (0..8).map(|_| rng.below(2) as u32).collect();
        let dom: Vec<usize> = (0..8).map(|_| rng.below(2)).collect();
        let (_, g) = cond_cad_loss(&f, &cl, &dom, 0.5)?;
        worst[2] = worst[2].max(fd_error(&f, &g, |x| cond_cad_loss(x, &cl, &dom, 0.5).expect("valid").0)?);

        let x = normal_matrix(&mut rng, 5, 4);
        let up = normal_matrix(&mut rng, 5, 4);
        let perm = rng.permutation(5);
        let u: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
        let sr = StyleRandomized::new(&x, perm.clone(), u.clone())?;
        let g = sr.style_backward(&up);
        worst[3] = worst[3].max(fd_error(&x, &g, |xx| {
            let s = StyleRandomized::new(xx, perm.clone(), u.clone()).expect("valid");
            s.style.hadamard(&up).expect("shape").sum()
        })?);

        let mut disc = Discriminator::<f64>::new(&mut rng, 3, 6, 2);
        let dl: Vec<u32> = (0..4).map(|_| rng.below(2) as u32).collect();
        let (_, _, grads) = disc.loss_and_grads(&a, &dl, 0.7)?;
        let flat = disc.to_flat();
        let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
        let fd = finite_difference_gradient(
            |p| {
                disc.set_from_flat(p);
                disc.loss_and_grads(&a, &dl, 0.7).expect("valid").0
            },
            &flat,
            FD_STEP,
        )?;
        disc.set_from_flat(&flat);
        worst[4] = worst[4].max(relative_error(&analytic, &fd));
    }
    let names = [
        "information-bottleneck penalty",
        "modality gap",
        "conditional contrastive bottleneck",
        "style randomization",
        "discriminator gradient penalty",
    ];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(n, w)| CheckOutcome {
            name: n.to_string(),
            cases,
            max_relative_error: w,
            tolerance: PENALTY_TOLERANCE,
        })
        .collect())
}

/// Every suite, learner first.
pub fn all_suites(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![learner_suite(seed, 10)?, irm_suite(seed, 10)?];
    out.extend(penalty_suites(seed, 5)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_learner_case_is_within_tolerance() {
        let err = learner_case(3, 6, 3, 4, false).unwrap();
        assert!(err <= LEARNER_TOLERANCE, "{err}");
    }

    #[test]
    fn penalty_suites_pass() {
        for o in penalty_suites(1, 3).unwrap() {
            assert!(o.passed(), "{} {}", o.name, o.max_relative_error);
        }
        let irm = irm_suite(1, 10).unwrap();
        assert!(irm.passed(), "{}", irm.max_relative_error);
    }
}
