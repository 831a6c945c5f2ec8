//! Score-based detection metrics and the closed-form accuracy/latency model
//! of the edge-cloud setup.

use serde::{Deserialize, Serialize};

use crate::calibration::upper_quantile;
use crate::error::{Error, Result};

/// Which side of the score axis is in-distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Polarity {
    /// Distances: small means ID, accepted when `score <= theta`.
    #[default]
    LowerIsID,
    /// Confidences (e.g. max-softmax): accepted when `score >= theta`.
    HigherIsID,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    #[serde(default)]
    pub polarity: Polarity,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Self {
        ScoreSet {
            id_scores,
            ood_scores,
            polarity: Polarity::LowerIsID,
        }
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::invalid("score sets must both be nonempty"));
        }
        if self
            .id_scores
            .iter()
            .chain(&self.ood_scores)
            .any(|s| !s.is_finite())
        {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(())
    }

    /// Scores mapped so that lower always means ID.
    fn oriented(&self, v: f64) -> f64 {
        match self.polarity {
            Polarity::LowerIsID => v,
            Polarity::HigherIsID => -v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
}

pub fn confusion_at_threshold(s: &ScoreSet, theta: f64) -> Result<Confusion> {
    s.validate()?;
    let t = s.oriented(theta);
    let kept = s.id_scores.iter().filter(|&&v| s.oriented(v) <= t).count();
    let rejected = s.ood_scores.iter().filter(|&&v| s.oriented(v) > t).count();
    let tpr = kept as f64 / s.id_scores.len() as f64;
    let tnr = rejected as f64 / s.ood_scores.len() as f64;
    Ok(Confusion {
        tpr,
        tnr,
        fpr: 1.0 - tnr,
    })
}

/// Refits the operating threshold on the ID scores so that TPR reaches
/// `tpr_target`, and returns `(tnr, theta)` at that threshold.
pub fn tnr_at_tpr(s: &ScoreSet, tpr_target: f64) -> Result<(f64, f64)> {
    s.validate()?;
    if !(tpr_target > 0.0 && tpr_target < 1.0) {
        return Err(Error::invalid(format!(
            "TPR target {tpr_target} outside (0, 1)"
        )));
    }
    let oriented: Vec<f64> = s.id_scores.iter().map(|&v| s.oriented(v)).collect();
    let theta = s.oriented(upper_quantile(&oriented, tpr_target));
    Ok((confusion_at_threshold(s, theta)?.tnr, theta))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// `0.5 * (TPR + TNR)`.
pub fn detection_accuracy(tpr: f64, tnr: f64) -> Result<f64> {
    check_unit("tpr", tpr)?;
    check_unit("tnr", tnr)?;
    Ok(0.5 * (tpr + tnr))
}

/// Mann-Whitney estimate of P(an ID score lies on the ID side of an OOD
/// score), ties counted as one half.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    s.validate()?;
    let mut pooled: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (s.oriented(v), false))
        .chain(s.ood_scores.iter().map(|&v| (s.oriented(v), true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of (1-based, tie-averaged) ranks held by OOD scores.
    let mut ood_rank_sum = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ood_in_group = pooled[i..j].iter().filter(|p| p.1).count();
        ood_rank_sum += avg_rank * ood_in_group as f64;
        i = j;
    }
    let n_id = s.id_scores.len() as f64;
    let n_ood = s.ood_scores.len() as f64;
    let u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// Mean (and optional spread) of the three latency components, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub t_edge: f64,
    pub t_comm: f64,
    pub t_server: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_comm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_server: Option<f64>,
}

impl LatencyParams {
    pub fn new(t_edge: f64, t_comm: f64, t_server: f64) -> Self {
        LatencyParams {
            t_edge,
            t_comm,
            t_server,
            std_edge: None,
            std_comm: None,
            std_server: None,
        }
    }

    pub fn with_std(mut self, edge: f64, comm: f64, server: f64) -> Self {
        self.std_edge = Some(edge);
        self.std_comm = Some(comm);
        self.std_server = Some(server);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            Some(self.t_edge),
            Some(self.t_comm),
            Some(self.t_server),
            self.std_edge,
            self.std_comm,
            self.std_server,
        ];
        if all.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "latency parameters must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn round_trip(&self) -> f64 {
        self.t_comm + self.t_server
    }
}

/// Probability of a correct outcome for the detector-gated classifier.
pub fn overall_accuracy(acc_m: f64, tpr: f64, tnr: f64, rho: f64) -> Result<f64> {
    check_unit("acc_m", acc_m)?;
    check_unit("tpr", tpr)?;
    check_unit("tnr", tnr)?;
    check_unit("rho", rho)?;
    Ok(acc_m * tpr * (1.0 - rho) + tnr * rho)
}

/// Fraction of the workload the edge uploads.
pub fn forward_rate(tpr: f64, tnr: f64, rho: f64) -> Result<f64> {
    check_unit("tpr", tpr)?;
    check_unit("tnr", tnr)?;
    check_unit("rho", rho)?;
    Ok(tpr * (1.0 - rho) + (1.0 - tnr) * rho)
}

/// Expected per-inference latency in ms.
pub fn expected_latency(lp: &LatencyParams, tpr: f64, tnr: f64, rho: f64) -> Result<f64> {
    lp.validate()?;
    Ok(lp.t_edge + lp.round_trip() * forward_rate(tpr, tnr, rho)?)
}

/// d(overall accuracy)/d(rho) = TNR - acc_M * TPR.
pub fn accuracy_slope(acc_m: f64, tpr: f64, tnr: f64) -> Result<f64> {
    check_unit("acc_m", acc_m)?;
    check_unit("tpr", tpr)?;
    check_unit("tnr", tnr)?;
    Ok(tnr - acc_m * tpr)
}

/// d(expected latency)/d(rho) = (T_C + T_S) * (FPR - TPR).
pub fn latency_slope(lp: &LatencyParams, tpr: f64, tnr: f64) -> Result<f64> {
    lp.validate()?;
    check_unit("tpr", tpr)?;
    check_unit("tnr", tnr)?;
    Ok(lp.round_trip() * ((1.0 - tnr) - tpr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub rho: f64,
    pub overall_accuracy: f64,
    pub expected_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub detection_accuracy: f64,
    pub auroc: f64,
    /// Operating threshold the rates were measured at.
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<RhoRow>,
}

/// Inputs for the per-rho rows of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub acc_m: f64,
    pub latency: LatencyParams,
    pub rho_grid: Vec<f64>,
}

impl MetricsReport {
    /// Rates at the refit threshold that attains `tpr_target`.
    pub fn at_tpr(s: &ScoreSet, tpr_target: f64) -> Result<Self> {
        let (_, theta) = tnr_at_tpr(s, tpr_target)?;
        Self::at_threshold(s, theta)
    }

    /// Rates at a fixed threshold (e.g. the profile's calibrated one).
    pub fn at_threshold(s: &ScoreSet, theta: f64) -> Result<Self> {
        let c = confusion_at_threshold(s, theta)?;
        Ok(MetricsReport {
            tpr: c.tpr,
            tnr: c.tnr,
            fpr: c.fpr,
            detection_accuracy: detection_accuracy(c.tpr, c.tnr)?,
            auroc: auroc(s)?,
            threshold: theta,
            rows: Vec::new(),
        })
    }

    pub fn with_system(mut self, model: &SystemModel) -> Result<Self> {
        self.rows = model
            .rho_grid
            .iter()
            .map(|&rho| {
                Ok(RhoRow {
                    rho,
                    overall_accuracy: overall_accuracy(model.acc_m, self.tpr, self.tnr, rho)?,
                    expected_latency_ms: expected_latency(&model.latency, self.tpr, self.tnr, rho)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn detection_error(&self) -> f64 {
        1.0 - self.detection_accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

/// Equal-width histogram of both populations over their pooled range.
pub fn score_histogram(s: &ScoreSet, bins: usize) -> Result<Vec<HistogramBin>> {
    s.validate()?;
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let all = s.id_scores.iter().chain(&s.ood_scores);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            id_count: 0,
            ood_count: 0,
        })
        .collect();
    let slot = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in &s.id_scores {
        out[slot(v)].id_count += 1;
    }
    for &v in &s.ood_scores {
        out[slot(v)].ood_count += 1;
    }
    Ok(out)
}
