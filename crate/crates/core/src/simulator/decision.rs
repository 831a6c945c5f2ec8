//! Detector behaviour inside the simulator.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::calibration::DetectorProfile;
use crate::detector::{decide, score_all, Decision};
use crate::error::{Error, Result};
use crate::fmap::FeatureTensor;
use crate::registry::Registry;

/// Decides whether a simulated sample is accepted as ID (and uploaded).
pub trait DecisionModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn accepts(&self, truly_ood: bool, rng: &mut dyn RngCore) -> bool;

    /// The model's `(tpr, tnr)`, used for the analytic columns.
    fn rates(&self) -> (f64, f64);
}

/// Independent Bernoulli decisions with fixed TPR/TNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDecisions {
    pub tpr: f64,
    pub tnr: f64,
}

impl DecisionModel for SyntheticDecisions {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn accepts(&self, truly_ood: bool, rng: &mut dyn RngCore) -> bool {
        let u: f64 = rng.random();
        if truly_ood {
            u >= self.tnr
        } else {
            u < self.tpr
        }
    }

    fn rates(&self) -> (f64, f64) {
        (self.tpr, self.tnr)
    }
}

/// Per-sample accept/reject outcomes of a real profile on real dumps;
/// simulated samples resample them uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPools {
    pub id_accept: Vec<bool>,
    pub ood_accept: Vec<bool>,
}

impl EmpiricalPools {
    pub fn from_dumps(
        profile: &DetectorProfile,
        id: &[FeatureTensor],
        ood: &[FeatureTensor],
    ) -> Result<Self> {
        let accept = |xs: &[FeatureTensor]| -> Result<Vec<bool>> {
            Ok(score_all(xs, profile)?
                .into_iter()
                .map(|s| decide(s, profile.threshold) == Decision::Id)
                .collect())
        };
        Ok(EmpiricalPools {
            id_accept: accept(id)?,
            ood_accept: accept(ood)?,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.id_accept.is_empty() || self.ood_accept.is_empty() {
            return Err(Error::invalid("empirical pools must both be nonempty"));
        }
        Ok(())
    }
}

impl DecisionModel for EmpiricalPools {
    fn name(&self) -> &'static str {
        "empirical"
    }

    fn accepts(&self, truly_ood: bool, rng: &mut dyn RngCore) -> bool {
        let pool = if truly_ood { &self.ood_accept } else { &self.id_accept };
        pool[rng.random_range(0..pool.len())]
    }

    fn rates(&self) -> (f64, f64) {
        let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
        (frac(&self.id_accept), 1.0 - frac(&self.ood_accept))
    }
}

/// What a decision factory may draw on.
#[derive(Debug, Clone, Default)]
pub struct DecisionConfig {
    pub tpr: f64,
    pub tnr: f64,
    pub pools: Option<EmpiricalPools>,
}

pub fn decision_registry() -> Registry<DecisionConfig, dyn DecisionModel> {
    let mut r: Registry<DecisionConfig, dyn DecisionModel> = Registry::new("detector mode");
    r.register("synthetic", |c: &DecisionConfig| {
        for (name, v) in [("tpr", c.tpr), ("tnr", c.tnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Box::new(SyntheticDecisions {
            tpr: c.tpr,
            tnr: c.tnr,
        }))
    });
    r.register("empirical", |c: &DecisionConfig| {
        let pools = c
            .pools
            .clone()
            .ok_or_else(|| Error::invalid("empirical detector mode needs scored dumps"))?;
        pools.validate()?;
        Ok(Box::new(pools))
    });
    r
}
