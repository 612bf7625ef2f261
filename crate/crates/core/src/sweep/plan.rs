use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{hparam_table, AlgorithmConfig, AlgorithmKind};
use crate::data::{load_dataset, sha256_hex, Dataset, Regime, DEFAULT_HOLDOUT_FRACTION};
use crate::error::{Error, Result};
use crate::numerics::{stream_seed, Rng};
use crate::selection::{Provenance, SCHEMA_VERSION};

pub const DEFAULT_TRIALS: usize = 9;
pub const DEFAULT_SEEDS: usize = 3;
pub const DEFAULT_EVAL_BATCH: usize = 512;
/// Datasets with at least this many instances get the long step budget.
pub const LARGE_DATASET_INSTANCES: usize = 20_000;
pub const SHORT_STEPS: usize = 5_000;
pub const LONG_STEPS: usize = 10_000;

/// Step budget for a dataset of `num_instances` rows.
pub fn default_steps(num_instances: usize) -> usize {
    if num_instances >= LARGE_DATASET_INSTANCES {
        LONG_STEPS
    } else {
        SHORT_STEPS
    }
}

/// Hyperparameters of `trial`: the default column for trial 0, otherwise one independent
/// draw per entry from a stream keyed by `(kind, entry, trial, sweep_seed)`.
pub fn sample_trial_config(kind: AlgorithmKind, trial: usize, sweep_seed: u64, steps: usize) -> AlgorithmConfig {
    let mut config = AlgorithmConfig::defaults(kind, steps);
    if trial == 0 {
        return config;
    }
    for entry in hparam_table(kind) {
        let tag = format!("hparam/{}/{}/{trial}", kind.name(), entry.name);
        let value = entry.sample(&mut Rng::derive(&tag, sweep_seed));
        config.hparams.insert(entry.name.to_string(), value);
    }
    config
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_seeds() -> usize {
    DEFAULT_SEEDS
}
fn default_eval_batch() -> usize {
    DEFAULT_EVAL_BATCH
}
fn default_holdout() -> f64 {
    DEFAULT_HOLDOUT_FRACTION
}
fn all_algorithms() -> Vec<AlgorithmKind> {
    AlgorithmKind::ALL.to_vec()
}

/// What to sweep: one dataset, one test modality, a set of algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    /// Manifest file or dataset directory; relative paths resolve against the plan file.
    pub dataset: PathBuf,
    pub test_modality: String,
    /// Expected regime; checked against the manifest when given.
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<AlgorithmKind>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Overrides the size-based step budget.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default)]
    pub loo: bool,
    #[serde(default)]
    pub sweep_seed: u64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

impl RunPlan {
    pub fn new(dataset: impl Into<PathBuf>, test_modality: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            test_modality: test_modality.into(),
            regime: None,
            algorithms: all_algorithms(),
            trials: DEFAULT_TRIALS,
            seeds: DEFAULT_SEEDS,
            steps: None,
            eval_batch_size: DEFAULT_EVAL_BATCH,
            loo: false,
            sweep_seed: 0,
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("run plan", e.to_string()))
    }

    /// Reads a plan, resolving a relative dataset path against the plan's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = Self::from_json(&text)?;
        if plan.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                plan.dataset = dir.join(&plan.dataset);
            }
        }
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("run plan: {m}")));
        if self.algorithms.is_empty() {
            return bad("no algorithms".into());
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return bad("duplicate algorithm".into());
        }
        if self.trials == 0 || self.seeds == 0 || self.eval_batch_size == 0 {
            return bad("trials, seeds and eval_batch_size must be positive".into());
        }
        if self.steps == Some(0) {
            return bad("steps must be positive".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction));
        }
        Ok(())
    }
}

/// One unit of sweep work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Job {
    pub algorithm: AlgorithmKind,
    pub trial: usize,
    pub seed_index: usize,
}

/// A validated plan bound to its loaded dataset.
#[derive(Clone, Debug)]
pub struct SweepContext {
    pub plan: RunPlan,
    pub dataset: Dataset,
    pub dataset_id: String,
    pub steps: usize,
    pub plan_hash: String,
    pub regime: Regime,
    pub test_index: usize,
    /// Indices of the training modalities, in manifest order.
    pub training: Vec<usize>,
}

impl SweepContext {
    pub fn load(plan: RunPlan) -> Result<Self> {
        let dataset = load_dataset(&plan.dataset)?;
        Self::new(plan, dataset)
    }

    pub fn new(plan: RunPlan, dataset: Dataset) -> Result<Self> {
        plan.validate()?;
        let manifest = &dataset.manifest;
        let test_index = manifest.modality_index(&plan.test_modality)?;
        let regime = manifest.regime(&plan.test_modality)?;
        if let Some(expected) = plan.regime {
            if expected != regime {
                return Err(Error::Config(format!(
                    "plan expects a {expected} regime but {} is {regime} in {}",
                    plan.test_modality, manifest.name
                )));
            }
        }
        let training: Vec<usize> = (0..manifest.modalities.len()).filter(|&i| i != test_index).collect();
        if training.is_empty() {
            return Err(Error::Config("dataset has no training modality besides the test one".into()));
        }
        if plan.loo && training.len() < 2 {
            return Err(Error::Config(
                "leave-one-out needs at least two training modalities".into(),
            ));
        }
        let dim = manifest.modalities[0].dim;
        if manifest.modalities.iter().any(|m| m.dim != dim) {
            return Err(Error::Dimension("all modalities must share one embedding dimension".into()));
        }
        let steps = plan.steps.unwrap_or_else(|| default_steps(manifest.num_instances));
        let dataset_id = dataset.id();
        let hash_input = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "dataset_id": dataset_id,
            "test_modality": plan.test_modality,
            "algorithms": plan.algorithms,
            "trials": plan.trials,
            "seeds": plan.seeds,
            "steps": steps,
            "eval_batch_size": plan.eval_batch_size,
            "loo": plan.loo,
            "sweep_seed": plan.sweep_seed,
            "holdout_fraction": plan.holdout_fraction,
        });
        let plan_hash = sha256_hex(hash_input.to_string().as_bytes())[..16].to_string();
        Ok(Self {
            plan,
            dataset,
            dataset_id,
            steps,
            plan_hash,
            regime,
            test_index,
            training,
        })
    }

    pub fn training_names(&self) -> Vec<String> {
        self.training
            .iter()
            .map(|&i| self.dataset.manifest.modalities[i].name.clone())
            .collect()
    }

    /// Every (algorithm, trial, seed) job in a fixed order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::with_capacity(self.plan.algorithms.len() * self.plan.trials * self.plan.seeds);
        for &algorithm in &self.plan.algorithms {
            for trial in 0..self.plan.trials {
                for seed_index in 0..self.plan.seeds {
                    jobs.push(Job {
                        algorithm,
                        trial,
                        seed_index,
                    });
                }
            }
        }
        jobs
    }

    /// Training runs a job performs: one per leave-one-out sub-run plus the full run.
    pub fn runs_per_job(&self) -> usize {
        if self.plan.loo {
            self.training.len() + 1
        } else {
            1
        }
    }

    /// Seed shared by every algorithm and trial at `seed_index`: it fixes the data split,
    /// the learner initialization and the batch order.
    pub fn run_seed(&self, seed_index: usize) -> u64 {
        stream_seed(&format!("run-seed/{seed_index}"), self.plan.sweep_seed)
    }

    pub fn config(&self, job: &Job) -> AlgorithmConfig {
        sample_trial_config(job.algorithm, job.trial, self.plan.sweep_seed, self.steps)
    }

    pub fn provenance(&self, job: &Job) -> Provenance {
        Provenance {
            schema_version: SCHEMA_VERSION,
            plan_hash: self.plan_hash.clone(),
            dataset_id: self.dataset_id.clone(),
            dataset: self.dataset.manifest.name.clone(),
            perceptor: self.dataset.manifest.perceptor.clone(),
            regime: self.regime,
            test_modality: self.plan.test_modality.clone(),
            algorithm: job.algorithm,
            trial: job.trial,
            seed_index: job.seed_index,
            seed: self.run_seed(job.seed_index),
            steps: self.steps,
        }
    }
}
