use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::plan::{Job, SweepContext};
use crate::algorithms::{AlgorithmConfig, AlgorithmState, Family, StepMetrics};
use crate::data::{make_splits, sample_minibatch, BatchMode, Dataset, ModalityMatrix};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::selection::{evaluate_chunked, Accuracies, Provenance, SubRunRecord, TrialRecord, TrialStatus};

/// Steps between emitted metric records; the last step is always emitted.
pub const METRIC_INTERVAL: usize = 100;

/// Instance indices used by one seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSplits {
    /// Training rows of every training modality.
    pub train: Vec<usize>,
    /// Held-out rows: validation for training modalities.
    pub val: Vec<usize>,
    /// First half of the held-out rows of the test modality.
    pub test_val: Vec<usize>,
    /// Second half of the held-out rows of the test modality.
    pub test: Vec<usize>,
}

/// The test modality is scored only on instances never used for training in any modality.
pub fn data_splits(num_instances: usize, holdout_fraction: f64, seed: u64) -> Result<DataSplits> {
    let split = make_splits(num_instances, holdout_fraction, seed)?;
    if split.val.len() < 2 || split.train.is_empty() {
        return Err(Error::Config(format!(
            "{num_instances} instances leave too few rows for training, validation and test"
        )));
    }
    let half = split.val.len() / 2;
    Ok(DataSplits {
        test_val: split.val[..half].to_vec(),
        test: split.val[half..].to_vec(),
        train: split.train,
        val: split.val,
    })
}

/// Metric record tagged with the run that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(flatten)]
    pub provenance: Provenance,
    /// `"full"` or `"loo:<held-out modality>"`.
    pub run: String,
    pub metrics: StepMetrics,
}

/// Raised when a cancellation flag stops training.
pub(crate) fn cancelled() -> Error {
    Error::Config("run cancelled".into())
}

/// Trains `config` on `modalities` (indices into `dataset`) over `pool` rows.
pub fn train_model(
    config: &AlgorithmConfig,
    dataset: &Dataset,
    modalities: &[usize],
    pool: &[usize],
    seed: u64,
    mut on_metrics: impl FnMut(&StepMetrics),
    cancel: Option<&AtomicBool>,
) -> Result<AlgorithmState> {
    let mats: Vec<&ModalityMatrix> = modalities.iter().map(|&m| &dataset.modalities[m]).collect();
    let first = mats
        .first()
        .ok_or_else(|| Error::Config("training needs at least one modality".into()))?;
    let mut state = AlgorithmState::new(config.clone(), first.dim(), dataset.num_classes(), mats.len(), seed)?;
    let mode = match config.kind.family() {
        Family::Mml => BatchMode::Aligned,
        Family::Dg => BatchMode::Independent,
    };
    let sources: Vec<(&ModalityMatrix, &[usize])> = mats.iter().map(|&m| (m, pool)).collect();
    let batch = config.batch_size()?;
    let mut rng = Rng::derive("batches", seed);
    for step in 0..config.steps {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(cancelled());
        }
        let mb = sample_minibatch(&mut rng, &sources, batch, mode)?;
        let m = state.update(&mb)?;
        if step % METRIC_INTERVAL == 0 || step + 1 == config.steps {
            on_metrics(&m);
        }
    }
    Ok(state)
}

/// Everything one job produced, ready to append.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutput {
    pub subruns: Vec<SubRunRecord>,
    pub metrics: Vec<MetricRecord>,
    pub trial: TrialRecord,
}

fn error_text(e: &Error) -> String {
    format!("{}: {e}", e.code())
}

/// Record of a job that could not run to completion.
pub fn failed_trial(provenance: Provenance, config: &AlgorithmConfig, error: String) -> TrialRecord {
    TrialRecord {
        provenance,
        hparams: config.hparams.clone(),
        status: TrialStatus::Failed,
        error: Some(error),
        accuracies: Accuracies::default(),
    }
}

/// Runs one job: leave-one-out sub-runs (when planned), then the full run on every
/// training modality with evaluation on all splits any selector needs. Training
/// failures become failed records; cancellation is returned as an error.
pub fn run_trial(ctx: &SweepContext, job: &Job, cancel: Option<&AtomicBool>) -> Result<TrialOutput> {
    let provenance = ctx.provenance(job);
    let config = ctx.config(job);
    let seed = provenance.seed;
    let splits = data_splits(ctx.dataset.num_instances(), ctx.plan.holdout_fraction, seed)?;
    let chunk = ctx.plan.eval_batch_size;
    let names = &ctx.dataset.manifest.modalities;
    let mut metrics = Vec::new();
    let mut subruns = Vec::new();
    let mut accuracies = Accuracies::default();

    let is_cancel = |r: &Result<AlgorithmState>| {
        cancel.is_some_and(|c| c.load(Ordering::Relaxed)) && r.is_err()
    };

    if ctx.plan.loo {
        for &held in &ctx.training {
            let others: Vec<usize> = ctx.training.iter().copied().filter(|&m| m != held).collect();
            let run = format!("loo:{}", names[held].name);
            let trained = train_model(
                &config,
                &ctx.dataset,
                &others,
                &splits.train,
                seed,
                |m| {
                    metrics.push(MetricRecord {
                        provenance: provenance.clone(),
                        run: run.clone(),
                        metrics: m.clone(),
                    })
                },
                cancel,
            );
            if is_cancel(&trained) {
                return Err(cancelled());
            }
            let acc = trained.and_then(|s| evaluate_chunked(&s.eval_params(), &ctx.dataset.modalities[held], &splits.val, chunk));
            let name = names[held].name.clone();
            let record = match acc {
                Ok(a) => {
                    accuracies.loo.insert(name.clone(), a);
                    SubRunRecord {
                        provenance: provenance.clone(),
                        held_out: name,
                        status: TrialStatus::Ok,
                        error: None,
                        accuracy: Some(a),
                    }
                }
                Err(e) => {
                    accuracies.loo_failed.push(name.clone());
                    SubRunRecord {
                        provenance: provenance.clone(),
                        held_out: name,
                        status: TrialStatus::Failed,
                        error: Some(error_text(&e)),
                        accuracy: None,
                    }
                }
            };
            subruns.push(record);
        }
    }

    let trained = train_model(
        &config,
        &ctx.dataset,
        &ctx.training,
        &splits.train,
        seed,
        |m| {
            metrics.push(MetricRecord {
                provenance: provenance.clone(),
                run: "full".into(),
                metrics: m.clone(),
            })
        },
        cancel,
    );
    if is_cancel(&trained) {
        return Err(cancelled());
    }
    let evaluated = trained.and_then(|state| {
        let params = state.eval_params();
        for &m in &ctx.training {
            let a = evaluate_chunked(&params, &ctx.dataset.modalities[m], &splits.val, chunk)?;
            accuracies.train_val.insert(names[m].name.clone(), a);
        }
        let test = &ctx.dataset.modalities[ctx.test_index];
        accuracies.test_val = Some(evaluate_chunked(&params, test, &splits.test_val, chunk)?);
        accuracies.test = Some(evaluate_chunked(&params, test, &splits.test, chunk)?);
        Ok(())
    });
    let trial = match evaluated {
        Ok(()) => TrialRecord {
            provenance,
            hparams: config.hparams.clone(),
            status: TrialStatus::Ok,
            error: None,
            accuracies,
        },
        Err(e) => {
            let mut r = failed_trial(provenance, &config, error_text(&e));
            r.accuracies.loo = accuracies.loo;
            r.accuracies.loo_failed = accuracies.loo_failed;
            r
        }
    };
    Ok(TrialOutput {
        subruns,
        metrics,
        trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_partition_and_halve_the_holdout() {
        let s = data_splits(100, 0.2, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test_val.len(), s.test.len()), (80, 20, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test_val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(data_splits(3, 0.2, 0).is_err());
    }
}
