//! Synthetic modality-generalization scenarios.
//!
//! Every modality shares the label vector. Its columns are laid out as
//! `[invariant | spurious | filler]`:
//! - invariant: the class template `mu_y ~ N(0, I)` plus `noise_scale * N(0, I)`, with one
//!   template per class shared by all modalities;
//! - spurious: `rho_m * nu_y + sqrt(1 - rho_m^2) * N(0, I)` where `nu_c` are balanced,
//!   standardized class codes, so each column correlates with its code at `rho_m`;
//! - filler: `noise_scale * N(0, I)`.
//!
//! The last modality is the held-out one. It can be rotated by an orthogonal matrix (and
//! given its own `space_id`) or re-embedded by a toy perceptor trained on it alone.

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{sha256_hex, ModalityMatrix};
use super::manifest::{Dataset, DatasetManifest, ModalityEntry, MANIFEST_FILE};
use super::perceptor::{train_toy_perceptor, ToyPerceptorConfig};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const SYNTHETIC_SPACE: &str = "synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    /// Number of training modalities `K`; one held-out modality is added after them.
    pub num_train_modalities: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub num_instances: usize,
    pub invariant_dim: usize,
    pub spurious_dim: usize,
    /// One entry per modality, held-out last. Empty means no spurious signal anywhere.
    pub spurious_correlation: Vec<f64>,
    pub noise_scale: f64,
    pub rotate_test: bool,
    /// Angle of the Givens rotations applied to random column pairs; `None` draws a
    /// uniformly random (Haar) orthogonal matrix instead.
    pub rotation_angle: Option<f64>,
    pub test_perceptor: Option<ToyPerceptorConfig>,
    /// Replaces labels with a permutation of themselves, shared by all modalities.
    pub shuffle_labels: bool,
    /// Optional names, held-out last; defaults to `m0..mK`.
    pub modality_names: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            num_train_modalities: 2,
            dim: 64,
            num_classes: 10,
            num_instances: 2000,
            invariant_dim: 16,
            spurious_dim: 16,
            spurious_correlation: Vec::new(),
            noise_scale: 1.0,
            rotate_test: false,
            rotation_angle: Some(FRAC_PI_4),
            test_perceptor: None,
            shuffle_labels: false,
            modality_names: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn num_modalities(&self) -> usize {
        self.num_train_modalities + 1
    }

    pub fn names(&self) -> Vec<String> {
        if self.modality_names.is_empty() {
            (0..self.num_modalities()).map(|k| format!("m{k}")).collect()
        } else {
            self.modality_names.clone()
        }
    }

    pub fn held_out_name(&self) -> String {
        self.names().pop().expect("at least one modality")
    }

    pub fn correlation(&self, modality: usize) -> f64 {
        self.spurious_correlation.get(modality).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_train_modalities == 0 {
            return bad("need at least one training modality".into());
        }
        if self.dim == 0 || self.num_instances == 0 || self.num_classes < 2 {
            return bad("dim and num_instances must be positive and num_classes >= 2".into());
        }
        if self.invariant_dim + self.spurious_dim > self.dim {
            return bad(format!(
                "invariant_dim + spurious_dim = {} exceeds dim {}",
                self.invariant_dim + self.spurious_dim,
                self.dim
            ));
        }
        let k = self.num_modalities();
        if !self.spurious_correlation.is_empty() && self.spurious_correlation.len() != k {
            return bad(format!("spurious_correlation needs {k} entries"));
        }
        if let Some(r) = self.spurious_correlation.iter().find(|r| !(-1.0..=1.0).contains(*r)) {
            return bad(format!("correlation {r} outside [-1, 1]"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and nonnegative".into());
        }
        if self.rotation_angle.is_some_and(|a| !a.is_finite()) {
            return bad("rotation_angle must be finite".into());
        }
        if !self.modality_names.is_empty() && self.modality_names.len() != k {
            return bad(format!("modality_names needs {k} entries"));
        }
        let names = self.names();
        if (1..k).any(|i| names[..i].contains(&names[i])) {
            return bad("modality names must be unique".into());
        }
        Ok(())
    }
}

/// Balanced `+-1` codes per column, standardized over classes (zero mean, unit variance).
fn class_codes(rng: &mut Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut codes = vec![vec![0.0; dim]; classes];
    for j in 0..dim {
        let perm = rng.permutation(classes);
        let col: Vec<f64> = (0..classes)
            .map(|r| if r < classes / 2 { 1.0 } else { -1.0 })
            .collect();
        let mean = col.iter().sum::<f64>() / classes as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / classes as f64).sqrt();
        for (r, &c) in perm.iter().enumerate() {
            codes[c][j] = (col[r] - mean) / std;
        }
    }
    codes
}

/// A random orthogonal `dim x dim` matrix.
///
/// With `angle`, columns are paired by a random perfect matching and each pair is rotated
/// by `+-angle`; without it the matrix is Haar-distributed (Gram-Schmidt on a Gaussian
/// matrix with sign correction).
pub fn random_orthogonal(rng: &mut Rng, dim: usize, angle: Option<f64>) -> Matrix<f64> {
    match angle {
        Some(theta) => {
            let mut q = Matrix::identity(dim);
            let perm = rng.permutation(dim);
            for pair in perm.chunks_exact(2) {
                let (i, j) = (pair[0], pair[1]);
                let t = if rng.below(2) == 0 { theta } else { -theta };
                let (c, s) = (t.cos(), t.sin());
                q.set(i, i, c);
                q.set(j, j, c);
                q.set(i, j, -s);
                q.set(j, i, s);
            }
            q
        }
        None => {
            // Rows of `q` are orthonormalized Gaussian vectors.
            let mut q = Matrix::from_vec(dim, dim, (0..dim * dim).map(|_| rng.normal()).collect())
                .expect("square");
            for i in 0..dim {
                for _ in 0..2 {
                    for k in 0..i {
                        let dot: f64 = q.row(i).iter().zip(q.row(k)).map(|(a, b)| a * b).sum();
                        let prev = q.row(k).to_vec();
                        q.row_mut(i).iter_mut().zip(&prev).for_each(|(a, b)| *a -= dot * b);
                    }
                }
                let n = q.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                q.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
            q
        }
    }
}

fn rotate(m: &Matrix<f32>, q: &Matrix<f64>) -> Result<Matrix<f32>> {
    Ok(m.cast::<f64>().matmul(q)?.cast())
}

/// Builds the dataset in memory; digests in the manifest describe the MBED images.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (n, c, d) = (spec.num_instances, spec.num_classes, spec.dim);
    let (inv, sp) = (spec.invariant_dim, spec.spurious_dim);
    let mut root = Rng::derive("synthetic", seed);
    let mut label_rng = root.fork("labels");
    let mut template_rng = root.fork("templates");
    let mut code_rng = root.fork("codes");
    let mut shuffle_rng = root.fork("shuffle");
    let mut rotation_rng = root.fork("rotation");

    let labels: Vec<u32> = (0..n).map(|_| label_rng.below(c) as u32).collect();
    let templates: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..inv).map(|_| template_rng.normal()).collect())
        .collect();
    let codes = class_codes(&mut code_rng, c, sp);

    let names = spec.names();
    let mut matrices = Vec::with_capacity(names.len());
    for k in 0..names.len() {
        let mut rng = root.fork(&format!("modality-{k}"));
        let rho = spec.correlation(k);
        let resid = (1.0 - rho * rho).max(0.0).sqrt();
        let mut data = Vec::with_capacity(n * d);
        for &y in &labels {
            let y = y as usize;
            for t in &templates[y] {
                data.push((t + spec.noise_scale * rng.normal()) as f32);
            }
            for nu in &codes[y] {
                data.push((rho * nu + resid * rng.normal()) as f32);
            }
            for _ in inv + sp..d {
                data.push((spec.noise_scale * rng.normal()) as f32);
            }
        }
        matrices.push(Matrix::from_vec(n, d, data)?);
    }

    let mut space_ids = vec![SYNTHETIC_SPACE.to_string(); names.len()];
    let test = names.len() - 1;
    if spec.rotate_test {
        let q = random_orthogonal(&mut rotation_rng, d, spec.rotation_angle);
        matrices[test] = rotate(&matrices[test], &q)?;
        space_ids[test] = format!("{SYNTHETIC_SPACE}-rotated");
    }
    if let Some(cfg) = &spec.test_perceptor {
        let p = train_toy_perceptor(&matrices[test], cfg, seed)?;
        matrices[test] = p.embed(&matrices[test])?;
        space_ids[test] = "toy-perceptor".into();
    }

    let labels = if spec.shuffle_labels {
        let perm = shuffle_rng.permutation(n);
        perm.iter().map(|&i| labels[i]).collect()
    } else {
        labels
    };

    let mut entries = Vec::with_capacity(names.len());
    let mut modalities = Vec::with_capacity(names.len());
    for ((name, x), space_id) in names.iter().zip(matrices).zip(space_ids) {
        let m = ModalityMatrix::new(x, labels.clone())?;
        entries.push(ModalityEntry {
            name: name.clone(),
            file: PathBuf::from(format!("{name}.mbed")),
            dim: m.dim(),
            space_id,
            sha256: sha256_hex(&m.to_bytes()),
        });
        modalities.push(m);
    }
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        num_classes: c,
        num_instances: n,
        perceptor: Some(SYNTHETIC_SPACE.into()),
        modalities: entries,
    };
    Dataset::from_parts(manifest, modalities)
}

/// Writes the synthetic dataset to `out_dir` (MBED files plus `manifest.json`).
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64, out_dir: &Path) -> Result<Dataset> {
    let ds = synthesize(spec, seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (entry, m) in ds.manifest.modalities.iter().zip(&ds.modalities) {
        m.save(&out_dir.join(&entry.file))?;
    }
    ds.manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(ds)
}
