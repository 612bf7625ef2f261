//! A linear stand-in for a self-supervised perceptor trained in isolation.
//!
//! Two views of each instance are made by zeroing a random `mask_ratio` fraction of its
//! elements; the projection is trained with a symmetric InfoNCE loss over cosine
//! similarities, where the other instances of the batch act as negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Matrix, OptimizerConfig, OptimizerState, Real, Rng};

pub const DEFAULT_MASK_RATIO: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyPerceptorConfig {
    /// Output width; `None` keeps the input width.
    pub embed_dim: Option<usize>,
    pub mask_ratio: f64,
    pub temperature: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ToyPerceptorConfig {
    fn default() -> Self {
        Self {
            embed_dim: None,
            mask_ratio: DEFAULT_MASK_RATIO,
            temperature: 0.1,
            steps: 200,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPerceptor {
    /// `D_raw x D` map from raw features to the embedding space.
    pub projection: Matrix<f32>,
    pub config: ToyPerceptorConfig,
}

impl ToyPerceptor {
    pub fn embed(&self, raw: &Matrix<f32>) -> Result<Matrix<f32>> {
        raw.matmul(&self.projection)
    }
}

/// Zeroes each element independently with probability `ratio`.
pub fn mask_view(rng: &mut Rng, x: &Matrix<f32>, ratio: f64) -> Matrix<f32> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if rng.uniform() < ratio {
            *v = 0.0;
        }
    }
    out
}

/// Symmetric InfoNCE loss of the two views under `projection`, and its gradient.
pub fn info_nce<T: Real>(
    projection: &Matrix<T>,
    view_a: &Matrix<T>,
    view_b: &Matrix<T>,
    temperature: T,
) -> Result<(T, Matrix<T>)> {
    let b = view_a.rows();
    let (za, na) = normalize_rows(&view_a.matmul(projection)?);
    let (zb, nb) = normalize_rows(&view_b.matmul(projection)?);
    let inv_t = T::one() / temperature;
    let sim = za.matmul_nt(&zb)?.scale(inv_t);
    let targets: Vec<u32> = (0..b as u32).collect();
    let half = T::from_f64(0.5);
    let (l1, g1) = softmax_cross_entropy(&sim, &targets)?;
    let (l2, g2) = softmax_cross_entropy(&sim.transpose(), &targets)?;
    let mut d_sim = g1.add(&g2.transpose())?;
    d_sim.scale_in_place(half * inv_t);
    let d_za = d_sim.matmul(&zb)?;
    let d_zb = d_sim.matmul_tn(&za)?;
    let d_a = normalize_backward(&za, &na, &d_za);
    let d_b = normalize_backward(&zb, &nb, &d_zb);
    let mut grad = view_a.matmul_tn(&d_a)?;
    grad.add_scaled(&view_b.matmul_tn(&d_b)?, T::one())?;
    Ok(((l1 + l2) * half, grad))
}

fn normalize_rows<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let floor = T::from_f64(1e-12);
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
        row.iter_mut().for_each(|v| *v = *v / n);
        norms.push(n);
    }
    (out, norms)
}

fn normalize_backward<T: Real>(z: &Matrix<T>, norms: &[T], dz: &Matrix<T>) -> Matrix<T> {
    let mut out = dz.clone();
    for r in 0..z.rows() {
        let zr = z.row(r);
        let dot: T = zr.iter().zip(dz.row(r)).map(|(&a, &b)| a * b).sum();
        for (o, &zv) in out.row_mut(r).iter_mut().zip(zr) {
            *o = (*o - zv * dot) / norms[r];
        }
    }
    out
}

/// Trains a projection on `raw` alone; the result is deterministic in `seed`.
pub fn train_toy_perceptor(raw: &Matrix<f32>, config: &ToyPerceptorConfig, seed: u64) -> Result<ToyPerceptor> {
    let d_raw = raw.cols();
    let d = config.embed_dim.unwrap_or(d_raw);
    if d_raw < 2 || d == 0 {
        return Err(Error::Config("toy perceptor needs D_raw >= 2 and embed_dim >= 1".into()));
    }
    if !(config.mask_ratio > 0.0 && config.mask_ratio < 1.0) {
        return Err(Error::Config(format!("mask ratio {} outside (0, 1)", config.mask_ratio)));
    }
    if config.batch_size < 2 || config.batch_size > raw.rows() {
        return Err(Error::Config(format!(
            "contrastive batch must hold 2..={} instances, got {}",
            raw.rows(),
            config.batch_size
        )));
    }
    if !(config.temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let mut rng = Rng::derive("toy-perceptor", seed);
    let std = (1.0 / d_raw as f64).sqrt();
    let mut projection = Matrix::from_vec(
        d_raw,
        d,
        (0..d_raw * d).map(|_| (rng.normal() * std) as f32).collect(),
    )?;
    let mut opt = OptimizerState::new(OptimizerConfig::adam(config.lr), &[&projection])?;
    for _ in 0..config.steps {
        let idx = rng.sample_without_replacement(raw.rows(), config.batch_size)?;
        let x = raw.select_rows(&idx)?;
        let a = mask_view(&mut rng, &x, config.mask_ratio);
        let b = mask_view(&mut rng, &x, config.mask_ratio);
        let (loss, grad) = info_nce(&projection, &a, &b, config.temperature as f32)?;
        opt.step(&mut [&mut projection], &[&grad], loss as f64)?;
    }
    Ok(ToyPerceptor {
        projection,
        config: config.clone(),
    })
}
