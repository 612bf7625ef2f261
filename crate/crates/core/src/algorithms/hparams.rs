//! Hyperparameter defaults and random-search distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AlgorithmKind, Family};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Distribution {
    Fixed(f64),
    /// `U(lo, hi)`.
    Uniform(f64, f64),
    /// `10^U(lo, hi)`.
    Pow10(f64, f64),
    /// `2^U(lo, hi)`.
    Pow2(f64, f64),
    Choice(Vec<f64>),
}

impl Distribution {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Distribution::Fixed(v) => *v,
            Distribution::Uniform(lo, hi) => rng.uniform_range(*lo, *hi),
            Distribution::Pow10(lo, hi) => 10f64.powf(rng.uniform_range(*lo, *hi)),
            Distribution::Pow2(lo, hi) => 2f64.powf(rng.uniform_range(*lo, *hi)),
            Distribution::Choice(vs) => vs[rng.below(vs.len())],
        }
    }

    /// Closed interval (or finite set) that draws can land in.
    pub fn contains(&self, v: f64, integer: bool) -> bool {
        let within = |lo: f64, hi: f64| {
            if integer {
                v >= lo.round() && v <= hi.round()
            } else {
                v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)
            }
        };
        match self {
            Distribution::Fixed(x) => v == *x,
            Distribution::Uniform(lo, hi) => within(*lo, *hi),
            Distribution::Pow10(lo, hi) => within(10f64.powf(*lo), 10f64.powf(*hi)),
            Distribution::Pow2(lo, hi) => within(2f64.powf(*lo), 2f64.powf(*hi)),
            Distribution::Choice(vs) => vs.contains(&v),
        }
    }
}

/// One searchable hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct HparamEntry {
    pub name: &'static str,
    pub default: f64,
    pub distribution: Distribution,
    /// Counts are rounded to the nearest integer after drawing.
    pub integer: bool,
}

impl HparamEntry {
    fn new(name: &'static str, default: f64, distribution: Distribution) -> Self {
        Self {
            name,
            default,
            distribution,
            integer: false,
        }
    }

    fn count(name: &'static str, default: f64, distribution: Distribution) -> Self {
        Self {
            integer: true,
            ..Self::new(name, default, distribution)
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let v = self.distribution.sample(rng);
        if self.integer {
            v.round()
        } else {
            v
        }
    }

    /// Values a sweep may emit: the distribution's support plus the default itself.
    pub fn in_support(&self, v: f64) -> bool {
        v == self.default || self.distribution.contains(v, self.integer)
    }
}

/// The searchable hyperparameters of `kind` in a fixed order.
pub fn hparam_table(kind: AlgorithmKind) -> Vec<HparamEntry> {
    use AlgorithmKind as K;
    use Distribution::*;
    let mut t = vec![HparamEntry::count("batch_size", 32.0, Pow2(3.0, 5.5))];
    match kind.family() {
        Family::Mml => t.extend([
            HparamEntry::new("lr", 1e-3, Pow10(-4.5, -2.5)),
            HparamEntry::new("momentum", 0.9, Uniform(0.85, 0.95)),
            HparamEntry::new("weight_decay", 1e-4, Pow10(-4.5, -3.5)),
            HparamEntry::count("patience", 70.0, Uniform(60.0, 80.0)),
        ]),
        Family::Dg => t.extend([
            HparamEntry::new("lr", 5e-5, Pow10(-5.0, -3.5)),
            HparamEntry::new("weight_decay", 0.0, Fixed(0.0)),
        ]),
    }
    match kind {
        K::Ogm => t.push(HparamEntry::new("alpha", 0.1, Uniform(0.1, 0.3))),
        K::Dlmg => t.push(HparamEntry::new("gap_weight", 1.0, Fixed(1.0))),
        K::Irm | K::IbErm => t.extend([
            HparamEntry::new("lambda", 100.0, Pow10(-1.0, 5.0)),
            HparamEntry::count("anneal_iters", 500.0, Pow10(0.0, 4.0)),
        ]),
        K::Mixup => t.push(HparamEntry::new("alpha", 0.2, Pow10(-1.0, 1.0))),
        K::Cdann => t.extend([
            HparamEntry::new("lambda", 1.0, Pow10(-2.0, -2.0)),
            HparamEntry::new("d_weight_decay", 0.0, Pow10(-6.0, -2.0)),
            HparamEntry::count("d_steps", 1.0, Pow2(0.0, 3.0)),
            HparamEntry::new("grad_penalty", 0.0, Pow10(-2.0, 1.0)),
            HparamEntry::new("beta1", 0.5, Choice(vec![0.0, 0.5])),
        ]),
        K::SagNet => t.push(HparamEntry::new("adv_weight", 0.1, Pow10(-2.0, 1.0))),
        K::CondCAD => t.extend([
            HparamEntry::new(
                "lambda",
                0.1,
                Choice(vec![1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]),
            ),
            HparamEntry::new("temperature", 0.1, Choice(vec![0.05, 0.1])),
        ]),
        K::Eqrm => t.extend([
            HparamEntry::new("eqrm_lr", 1e-6, Pow10(-7.0, -5.0)),
            HparamEntry::new("quantile", 0.75, Uniform(0.5, 0.99)),
            HparamEntry::count("burnin_iters", 2500.0, Pow10(2.5, 3.5)),
        ]),
        K::Urm => t.push(HparamEntry::new("lambda", 0.1, Uniform(0.0, 0.2))),
        K::Concat | K::Erm | K::ErmPlusPlus => {}
    }
    t
}

/// Kind, hyperparameters and step budget of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    pub hparams: BTreeMap<String, f64>,
    pub steps: usize,
}

impl AlgorithmConfig {
    /// The default column for `kind`.
    pub fn defaults(kind: AlgorithmKind, steps: usize) -> Self {
        Self {
            kind,
            hparams: hparam_table(kind)
                .into_iter()
                .map(|e| (e.name.to_string(), e.default))
                .collect(),
            steps,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hparams.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.hparams.get(name).copied().ok_or_else(|| {
            Error::Config(format!("{} config lacks hyperparameter {name:?}", self.kind))
        })
    }

    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.get("batch_size")? as usize)
    }

    /// Sanity checks that any hand-written config must pass.
    pub fn validate(&self) -> Result<()> {
        for e in hparam_table(self.kind) {
            let v = self.get(e.name)?;
            if !v.is_finite() {
                return Err(Error::Config(format!("{} = {v} is not finite", e.name)));
            }
            if e.integer && (v < 0.0 || v.fract() != 0.0) {
                return Err(Error::Config(format!("{} must be a nonnegative integer, got {v}", e.name)));
            }
        }
        let positive = |name: &str| -> Result<()> {
            let v = self.get(name)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("batch_size")?;
        positive("lr")?;
        if self.get("weight_decay")? < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        use AlgorithmKind as K;
        match self.kind {
            K::Concat | K::Ogm | K::Dlmg => {
                let m = self.get("momentum")?;
                if !(0.0..1.0).contains(&m) {
                    return Err(Error::Config(format!("momentum {m} outside [0, 1)")));
                }
                positive("patience")?;
            }
            K::Mixup => positive("alpha")?,
            K::Cdann => {
                positive("d_steps")?;
                let b = self.get("beta1")?;
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::Config(format!("beta1 {b} outside [0, 1)")));
                }
            }
            K::CondCAD => positive("temperature")?,
            K::Eqrm => {
                positive("eqrm_lr")?;
                let q = self.get("quantile")?;
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::Config(format!("quantile {q} outside (0, 1)")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Every entry lies in its search support; required of sampled configs.
    pub fn check_support(&self) -> Result<()> {
        for e in hparam_table(self.kind) {
            let v = self.get(e.name)?;
            if !e.in_support(v) {
                return Err(Error::Config(format!(
                    "{} {} = {v} is outside its search distribution",
                    self.kind, e.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_column() {
        let dg = AlgorithmConfig::defaults(AlgorithmKind::Erm, 10);
        assert_eq!(dg.get("batch_size").unwrap(), 32.0);
        assert_eq!(dg.get("lr").unwrap(), 5e-5);
        assert_eq!(dg.get("weight_decay").unwrap(), 0.0);
        let mml = AlgorithmConfig::defaults(AlgorithmKind::Concat, 10);
        assert_eq!(mml.get("lr").unwrap(), 1e-3);
        assert_eq!(mml.get("momentum").unwrap(), 0.9);
        assert_eq!(mml.get("weight_decay").unwrap(), 1e-4);
        assert_eq!(mml.get("patience").unwrap(), 70.0);
        let get = |k, n| AlgorithmConfig::defaults(k, 1).get(n).unwrap();
        assert_eq!(get(AlgorithmKind::Ogm, "alpha"), 0.1);
        assert_eq!(get(AlgorithmKind::Mixup, "alpha"), 0.2);
        assert_eq!(get(AlgorithmKind::Eqrm, "quantile"), 0.75);
        assert_eq!(get(AlgorithmKind::Eqrm, "burnin_iters"), 2500.0);
        assert_eq!(get(AlgorithmKind::Irm, "lambda"), 100.0);
        assert_eq!(get(AlgorithmKind::IbErm, "anneal_iters"), 500.0);
        assert_eq!(get(AlgorithmKind::Cdann, "beta1"), 0.5);
        assert_eq!(get(AlgorithmKind::SagNet, "adv_weight"), 0.1);
        assert_eq!(get(AlgorithmKind::CondCAD, "temperature"), 0.1);
        assert_eq!(get(AlgorithmKind::Urm, "lambda"), 0.1);
        assert_eq!(get(AlgorithmKind::ErmPlusPlus, "lr"), 5e-5);
        for k in AlgorithmKind::ALL {
            let c = AlgorithmConfig::defaults(k, 1);
            c.validate().unwrap();
            c.check_support().unwrap();
        }
    }

    #[test]
    fn batch_draws_are_bounded_integers() {
        let e = &hparam_table(AlgorithmKind::Erm)[0];
        let mut rng = Rng::new(0);
        for _ in 0..10_000 {
            let b = e.sample(&mut rng);
            assert!((8.0..=45.0).contains(&b) && b.fract() == 0.0, "{b}");
            assert!(e.in_support(b));
        }
    }

    #[test]
    fn validation_catches_nonsense() {
        let c = AlgorithmConfig::defaults(AlgorithmKind::Concat, 1).with("momentum", 1.0);
        assert!(c.validate().is_err());
        let c = AlgorithmConfig::defaults(AlgorithmKind::Erm, 1).with("lr", 0.0);
        assert!(c.validate().is_err());
        let mut c = AlgorithmConfig::defaults(AlgorithmKind::Irm, 1);
        c.hparams.remove("lambda");
        assert!(c.validate().is_err());
        let c = AlgorithmConfig::defaults(AlgorithmKind::Irm, 1).with("lambda", 0.0);
        assert!(c.validate().is_ok());
        assert!(c.check_support().is_err());
    }
}
