//! Inference-time scoring against a frozen profile.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{distance, DetectorProfile};
use crate::error::{Error, Result};
use crate::fmap::{embed, FeatureTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionOutcome {
    pub decision: Decision,
    pub score: f64,
    pub threshold_used: f64,
}

/// Distance of `x`'s embedding from the profile centroid.
pub fn score(x: &FeatureTensor, profile: &DetectorProfile) -> Result<f64> {
    if x.shape() != profile.input_shape {
        return Err(Error::invalid(format!(
            "tensor shape {} does not match profile shape {}",
            x.shape(),
            profile.input_shape
        )));
    }
    let e = embed(x, &profile.mask, profile.pool_k)?;
    distance(e.values(), &profile.centroid)
}

pub fn score_all(xs: &[FeatureTensor], profile: &DetectorProfile) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| score(x, profile)).collect()
}

/// ID iff `score <= threshold`.
pub fn decide(score: f64, threshold: f64) -> Decision {
    if score <= threshold {
        Decision::Id
    } else {
        Decision::Ood
    }
}

pub fn detect(x: &FeatureTensor, profile: &DetectorProfile) -> Result<DetectionOutcome> {
    let s = score(x, profile)?;
    Ok(DetectionOutcome {
        decision: decide(s, profile.threshold),
        score: s,
        threshold_used: profile.threshold,
    })
}
