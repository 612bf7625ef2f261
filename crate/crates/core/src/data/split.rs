use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// A partition of `0..n` into training and held-out indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Split {
    /// True when `train` and `val` are disjoint and together cover `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Shuffles `0..n` with the split stream of `seed`, then cuts off
/// `round(n * holdout_fraction)` indices for validation.
pub fn make_splits(n: usize, holdout_fraction: f64, seed: u64) -> Result<Split> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let perm = Rng::derive("split", seed).permutation(n);
    let n_val = ((n as f64) * holdout_fraction).round() as usize;
    let (train, val) = perm.split_at(n - n_val);
    Ok(Split {
        train: train.to_vec(),
        val: val.to_vec(),
    })
}
