//! The thirteen training algorithms behind one update interface.
//!
//! Multi-modal learning kinds (`Concat`, `OGM`, `DLMG`) consume instance-aligned batches,
//! fuse per-modality features by their mean and train with SGD momentum. Domain
//! generalization kinds treat each training modality as a domain, consume independent
//! batches and train with Adam.

mod discriminator;
mod hparams;
mod penalties;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discriminator::Discriminator;
pub use hparams::{hparam_table, AlgorithmConfig, Distribution, HparamEntry};
pub use penalties::{
    cond_cad_loss, conditional_domain_adversarial, fuse_concat, ib_penalty, irm_penalty,
    mixup_batch, modality_gap, ogm_coefficients, quantile_risk, silverman_bandwidth,
    style_randomize, style_stats, uniformity_loss, AdversarialOutcome, MixedBatch, QuantileRisk,
    StyleRandomized, STYLE_STD_FLOOR,
};
pub use state::{AlgorithmState, StepMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlgorithmKind {
    Concat,
    #[serde(rename = "OGM")]
    Ogm,
    #[serde(rename = "DLMG")]
    Dlmg,
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "IRM")]
    Irm,
    Mixup,
    #[serde(rename = "CDANN")]
    Cdann,
    SagNet,
    #[serde(rename = "IB_ERM")]
    IbErm,
    CondCAD,
    #[serde(rename = "EQRM")]
    Eqrm,
    #[serde(rename = "ERM++")]
    ErmPlusPlus,
    #[serde(rename = "URM")]
    Urm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Mml,
    Dg,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Mml => "MML",
            Family::Dg => "DG",
        })
    }
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 13] = [
        AlgorithmKind::Concat,
        AlgorithmKind::Ogm,
        AlgorithmKind::Dlmg,
        AlgorithmKind::Erm,
        AlgorithmKind::Irm,
        AlgorithmKind::Mixup,
        AlgorithmKind::Cdann,
        AlgorithmKind::SagNet,
        AlgorithmKind::IbErm,
        AlgorithmKind::CondCAD,
        AlgorithmKind::Eqrm,
        AlgorithmKind::ErmPlusPlus,
        AlgorithmKind::Urm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Concat => "Concat",
            AlgorithmKind::Ogm => "OGM",
            AlgorithmKind::Dlmg => "DLMG",
            AlgorithmKind::Erm => "ERM",
            AlgorithmKind::Irm => "IRM",
            AlgorithmKind::Mixup => "Mixup",
            AlgorithmKind::Cdann => "CDANN",
            AlgorithmKind::SagNet => "SagNet",
            AlgorithmKind::IbErm => "IB_ERM",
            AlgorithmKind::CondCAD => "CondCAD",
            AlgorithmKind::Eqrm => "EQRM",
            AlgorithmKind::ErmPlusPlus => "ERM++",
            AlgorithmKind::Urm => "URM",
        }
    }

    pub fn family(self) -> Family {
        match self {
            AlgorithmKind::Concat | AlgorithmKind::Ogm | AlgorithmKind::Dlmg => Family::Mml,
            _ => Family::Dg,
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}
