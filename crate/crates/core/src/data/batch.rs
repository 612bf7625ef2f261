use serde::{Deserialize, Serialize};

use super::format::ModalityMatrix;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    /// One index set shared by every modality, so rows are instance-paired.
    Aligned,
    /// A fresh index set per modality.
    Independent,
}

/// One modality's slice of a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Matrix<f32>,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn gather(m: &ModalityMatrix, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            x: m.embeddings.select_rows(indices)?,
            labels: indices.iter().map(|&i| m.labels[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-modality batches for one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub mode: BatchMode,
    pub parts: Vec<Batch>,
}

/// Draws `batch` rows per source without replacement from the source's index pool.
///
/// In aligned mode every source must share the same pool and receives the same rows.
pub fn sample_minibatch(
    rng: &mut Rng,
    sources: &[(&ModalityMatrix, &[usize])],
    batch: usize,
    mode: BatchMode,
) -> Result<Minibatch> {
    if sources.is_empty() || batch == 0 {
        return Err(Error::Config("minibatch needs at least one source and batch >= 1".into()));
    }
    if let Some((_, pool)) = sources.iter().find(|(_, pool)| pool.len() < batch) {
        return Err(Error::Config(format!(
            "batch {batch} exceeds the {} available rows",
            pool.len()
        )));
    }
    let pick = |rng: &mut Rng, pool: &[usize]| -> Result<Vec<usize>> {
        Ok(rng
            .sample_without_replacement(pool.len(), batch)?
            .into_iter()
            .map(|j| pool[j])
            .collect())
    };
    let parts = match mode {
        BatchMode::Aligned => {
            let pool = sources[0].1;
            if sources.iter().any(|(_, p)| *p != pool) {
                return Err(Error::Config("aligned batches need one shared index pool".into()));
            }
            let idx = pick(rng, pool)?;
            sources
                .iter()
                .map(|(m, _)| Batch::gather(m, &idx))
                .collect::<Result<_>>()?
        }
        BatchMode::Independent => sources
            .iter()
            .map(|(m, pool)| {
                let idx = pick(rng, pool)?;
                Batch::gather(m, &idx)
            })
            .collect::<Result<_>>()?,
    };
    Ok(Minibatch { mode, parts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modality(n: usize, offset: f32) -> ModalityMatrix {
        let e = Matrix::from_vec(n, 1, (0..n).map(|i| i as f32 + offset).collect()).unwrap();
        ModalityMatrix::new(e, (0..n as u32).collect()).unwrap()
    }

    #[test]
    fn aligned_shares_rows() {
        let (a, b) = (modality(20, 0.0), modality(20, 100.0));
        let pool: Vec<usize> = (0..20).collect();
        let mb = sample_minibatch(&mut Rng::new(1), &[(&a, &pool), (&b, &pool)], 4, BatchMode::Aligned).unwrap();
        assert_eq!(mb.parts[0].labels, mb.parts[1].labels);
        for r in 0..4 {
            assert_eq!(mb.parts[0].x.get(r, 0) + 100.0, mb.parts[1].x.get(r, 0));
        }
    }

    #[test]
    fn independent_draws_differ() {
        let (a, b) = (modality(50, 0.0), modality(50, 0.0));
        let pool: Vec<usize> = (0..50).collect();
        let mb = sample_minibatch(&mut Rng::new(2), &[(&a, &pool), (&b, &pool)], 8, BatchMode::Independent).unwrap();
        assert_ne!(mb.parts[0].labels, mb.parts[1].labels);
    }

    #[test]
    fn no_repeats_and_respects_pool() {
        let a = modality(30, 0.0);
        let pool: Vec<usize> = (10..30).collect();
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let mb = sample_minibatch(&mut rng, &[(&a, &pool)], 20, BatchMode::Independent).unwrap();
            let mut l = mb.parts[0].labels.clone();
            l.sort_unstable();
            assert_eq!(l, (10..30).collect::<Vec<u32>>());
        }
        assert!(sample_minibatch(&mut rng, &[(&a, &pool)], 21, BatchMode::Aligned).is_err());
    }
}
