//! Trial records and the three hyperparameter selection protocols.
//!
//! Every selector scores the final checkpoint of each trial and picks, per seed, the
//! highest-scoring ok trial; ties go to the lowest trial index.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmKind;
use crate::data::{ModalityMatrix, Regime};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, LearnerParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// Final-checkpoint accuracies (percent) of one trial.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    /// Held-out rows of each training modality.
    pub train_val: BTreeMap<String, f64>,
    /// Leave-one-out sub-run accuracy keyed by the held-out training modality.
    pub loo: BTreeMap<String, f64>,
    /// Held-out modalities whose sub-run failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loo_failed: Vec<String>,
    pub test_val: Option<f64>,
    pub test: Option<f64>,
}

/// Where a record came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub plan_hash: String,
    pub dataset_id: String,
    pub dataset: String,
    pub perceptor: Option<String>,
    pub regime: Regime,
    pub test_modality: String,
    pub algorithm: AlgorithmKind,
    pub trial: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub steps: usize,
}

/// One (algorithm, trial, seed) training run on all training modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub hparams: BTreeMap<String, f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accuracies: Accuracies,
}

/// One leave-one-out sub-run: trained without `held_out`, evaluated on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubRunRecord {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub held_out: String,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accuracy: Option<f64>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    /// Accuracies in `[0, 100]`, and test accuracy present iff the trial succeeded.
    pub fn check(&self) -> Result<()> {
        let a = &self.accuracies;
        let all = a
            .train_val
            .values()
            .chain(a.loo.values())
            .chain(a.test_val.iter())
            .chain(a.test.iter());
        for &v in all {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::format("trial record", format!("accuracy {v} outside [0, 100]")));
            }
        }
        if a.test.is_some() != self.is_ok() {
            return Err(Error::format(
                "trial record",
                "test accuracy must be present exactly when the trial succeeded",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    /// Validation rows of the training modalities.
    Tm,
    /// Leave-one-training-modality-out cross-validation.
    Loo,
    /// Validation rows of the test modality.
    Oracle,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 3] = [SelectionMethod::Tm, SelectionMethod::Loo, SelectionMethod::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Tm => "tm",
            SelectionMethod::Loo => "loo",
            SelectionMethod::Oracle => "oracle",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            SelectionMethod::Tm => "Training-modality validation",
            SelectionMethod::Loo => "Leave-one-modality-out",
            SelectionMethod::Oracle => "Test-modality validation (oracle)",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SelectionMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown selection method {s:?} (tm, loo, oracle)")))
    }
}

/// The trial chosen for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub seed_index: usize,
    pub trial: usize,
    pub score: f64,
    pub test: f64,
}

/// Retrain the chosen hyperparameters on every training modality; the retrained model
/// supplies the reported accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainDirective {
    pub algorithm: AlgorithmKind,
    pub seed_index: usize,
    pub trial: usize,
    pub hparams: BTreeMap<String, f64>,
    pub modalities: Vec<String>,
}

fn check_group(records: &[TrialRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        let p = &first.provenance;
        if records.iter().any(|r| {
            r.provenance.algorithm != p.algorithm
                || r.provenance.test_modality != p.test_modality
                || r.provenance.dataset_id != p.dataset_id
        }) {
            return Err(Error::Config(
                "selection runs over records of one algorithm, dataset and test modality".into(),
            ));
        }
    }
    Ok(())
}

/// Per seed, the ok record maximizing `score`; records with `None` score are skipped.
fn argmax_per_seed(
    records: &[TrialRecord],
    what: &str,
    score: impl Fn(&TrialRecord) -> Result<Option<f64>>,
) -> Result<Vec<Choice>> {
    check_group(records)?;
    let mut best: BTreeMap<usize, Choice> = BTreeMap::new();
    let mut sorted: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
    sorted.sort_by_key(|r| (r.provenance.seed_index, r.provenance.trial));
    for r in sorted {
        let Some(s) = score(r)? else { continue };
        let Some(test) = r.accuracies.test else { continue };
        let seed = r.provenance.seed_index;
        if best.get(&seed).is_none_or(|b| s > b.score) {
            best.insert(
                seed,
                Choice {
                    seed_index: seed,
                    trial: r.provenance.trial,
                    score: s,
                    test,
                },
            );
        }
    }
    if best.is_empty() {
        return Err(Error::EmptySelection(format!("no ok trial carries a {what} score")));
    }
    Ok(best.into_values().collect())
}

/// Unweighted mean of the training modalities' validation accuracies.
pub fn select_training_modality(records: &[TrialRecord]) -> Result<Vec<Choice>> {
    argmax_per_seed(records, "training-modality", |r| {
        let v = &r.accuracies.train_val;
        Ok((!v.is_empty()).then(|| v.values().sum::<f64>() / v.len() as f64))
    })
}

/// Test-modality validation accuracy.
pub fn select_oracle(records: &[TrialRecord]) -> Result<Vec<Choice>> {
    argmax_per_seed(records, "test-validation", |r| Ok(r.accuracies.test_val))
}

/// Mean held-out accuracy over one sub-run per training modality. A trial whose
/// sub-run failed is not eligible; a trial missing a sub-run is an error.
pub fn select_loo(records: &[TrialRecord], training_modalities: &[String]) -> Result<Vec<(Choice, RetrainDirective)>> {
    if training_modalities.is_empty() {
        return Err(Error::Config("leave-one-out needs at least one training modality".into()));
    }
    let choices = argmax_per_seed(records, "leave-one-out", |r| {
        let loo = &r.accuracies.loo;
        if !r.accuracies.loo_failed.is_empty() {
            return Ok(None);
        }
        let mut sum = 0.0;
        for m in training_modalities {
            sum += *loo.get(m).ok_or_else(|| {
                Error::IncompleteTrial(format!(
                    "{} trial {} seed {} lacks the sub-run holding out {m}",
                    r.provenance.algorithm, r.provenance.trial, r.provenance.seed_index
                ))
            })?;
        }
        Ok(Some(sum / training_modalities.len() as f64))
    })?;
    Ok(choices
        .into_iter()
        .map(|c| {
            let r = records
                .iter()
                .find(|r| r.provenance.seed_index == c.seed_index && r.provenance.trial == c.trial)
                .expect("choice comes from the records");
            let d = RetrainDirective {
                algorithm: r.provenance.algorithm,
                seed_index: c.seed_index,
                trial: c.trial,
                hparams: r.hparams.clone(),
                modalities: training_modalities.to_vec(),
            };
            (c, d)
        })
        .collect())
}

/// Per-seed choices for `method`.
pub fn select(method: SelectionMethod, records: &[TrialRecord], training_modalities: &[String]) -> Result<Vec<Choice>> {
    match method {
        SelectionMethod::Tm => select_training_modality(records),
        SelectionMethod::Oracle => select_oracle(records),
        SelectionMethod::Loo => Ok(select_loo(records, training_modalities)?
            .into_iter()
            .map(|(c, _)| c)
            .collect()),
    }
}

/// Rows scored per forward pass by [`evaluate`].
pub const EVAL_CHUNK: usize = 512;

/// Percentage of `indices` rows of `matrix` whose arg-max prediction equals the label.
pub fn evaluate(params: &LearnerParams<f32>, matrix: &ModalityMatrix, indices: &[usize]) -> Result<f64> {
    evaluate_chunked(params, matrix, indices, EVAL_CHUNK)
}

pub fn evaluate_chunked(
    params: &LearnerParams<f32>,
    matrix: &ModalityMatrix,
    indices: &[usize],
    chunk: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation over an empty index set".into()));
    }
    let mut correct = 0usize;
    for part in indices.chunks(chunk.max(1)) {
        let x = matrix.embeddings.select_rows(part)?;
        let pred = argmax_rows(&params.logits(&x)?);
        correct += part
            .iter()
            .zip(pred)
            .filter(|(&i, p)| matrix.labels[i] == *p)
            .count();
    }
    Ok(100.0 * correct as f64 / indices.len() as f64)
}
