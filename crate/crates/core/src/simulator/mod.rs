//! Seeded Monte-Carlo evaluation of the detector-gated edge-cloud setup over
//! a grid of OOD ratios, side by side with the closed-form model.
//!
//! Each grid point `i` runs on its own ChaCha8 stream (`seed`, stream `i`),
//! so points can be evaluated in parallel and still reproduce bit-for-bit.

mod decision;
mod latency;
mod synthetic;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decision::{
    decision_registry, DecisionConfig, DecisionModel, EmpiricalPools, SyntheticDecisions,
};
pub use latency::{latency_registry, ConstantLatency, GaussianLatency, LatencyModel};
pub use synthetic::synthetic_features;

use crate::error::{Error, Result};
use crate::metrics::{expected_latency, overall_accuracy, LatencyParams};

pub const SWEEP_CSV_HEADER: &str = "rho,empirical_accuracy,analytic_accuracy,empirical_latency_ms,analytic_latency_ms,forwarded_fraction";

pub const RNG_NAME: &str = "ChaCha8 (rand_chacha), one stream per rho index";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub rho_grid: Vec<f64>,
    pub samples_per_point: usize,
    pub acc_m: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub latency: LatencyParams,
    pub seed: u64,
    /// Registered name in [`decision_registry`].
    pub detector_mode: String,
    /// Registered name in [`latency_registry`].
    pub latency_model: String,
    #[serde(skip)]
    pub empirical: Option<EmpiricalPools>,
}

impl WorkloadSpec {
    pub fn synthetic(rho_grid: Vec<f64>, samples_per_point: usize, acc_m: f64, tpr: f64, tnr: f64, latency: LatencyParams, seed: u64) -> Self {
        WorkloadSpec {
            rho_grid,
            samples_per_point,
            acc_m,
            tpr,
            tnr,
            latency,
            seed,
            detector_mode: "synthetic".into(),
            latency_model: "constant".into(),
            empirical: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_grid.is_empty() {
            return Err(Error::invalid("rho grid is empty"));
        }
        if let Some(r) = self.rho_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("rho {r} outside [0, 1]")));
        }
        if self.samples_per_point == 0 {
            return Err(Error::invalid("samples per point must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.acc_m) {
            return Err(Error::invalid(format!("acc_m {} outside [0, 1]", self.acc_m)));
        }
        self.latency.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub empirical_accuracy: f64,
    pub analytic_accuracy: f64,
    pub empirical_latency_ms: f64,
    pub analytic_latency_ms: f64,
    pub forwarded_fraction: f64,
}

fn run_point(
    index: usize,
    rho: f64,
    spec: &WorkloadSpec,
    decisions: &dyn DecisionModel,
    latency: &dyn LatencyModel,
) -> Result<SweepRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let (mut correct, mut forwarded) = (0u64, 0u64);
    let mut total_ms = 0.0f64;
    for _ in 0..spec.samples_per_point {
        let truly_ood = rng.random::<f64>() < rho;
        let accepted = decisions.accepts(truly_ood, &mut rng);
        let mut ms = latency.edge(&mut rng);
        if accepted {
            forwarded += 1;
            ms += latency.round_trip(&mut rng);
        }
        // An uploaded OOD sample has no correct label.
        let ok = if truly_ood {
            !accepted
        } else {
            accepted && rng.random::<f64>() < spec.acc_m
        };
        correct += ok as u64;
        total_ms += ms;
    }

    let n = spec.samples_per_point as f64;
    let (tpr, tnr) = decisions.rates();
    Ok(SweepRow {
        rho,
        empirical_accuracy: correct as f64 / n,
        analytic_accuracy: overall_accuracy(spec.acc_m, tpr, tnr, rho)?,
        empirical_latency_ms: total_ms / n,
        analytic_latency_ms: expected_latency(&spec.latency, tpr, tnr, rho)?,
        forwarded_fraction: forwarded as f64 / n,
    })
}

/// Runs every grid point; rows come back in grid order.
pub fn run_sweep(spec: &WorkloadSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let decisions = decision_registry().create(
        &spec.detector_mode,
        &DecisionConfig {
            tpr: spec.tpr,
            tnr: spec.tnr,
            pools: spec.empirical.clone(),
        },
    )?;
    let latency = latency_registry().create(&spec.latency_model, &spec.latency)?;
    spec.rho_grid
        .par_iter()
        .enumerate()
        .map(|(i, &rho)| run_point(i, rho, spec, decisions.as_ref(), latency.as_ref()))
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rho,
            r.empirical_accuracy,
            r.analytic_accuracy,
            r.empirical_latency_ms,
            r.analytic_latency_ms,
            r.forwarded_fraction
        );
    }
    out
}

/// JSON header describing a run: the workload echo, seed, generator and versions.
pub fn run_metadata(spec: &WorkloadSpec) -> serde_json::Value {
    let (tpr, tnr) = match &spec.empirical {
        Some(p) if spec.detector_mode == "empirical" => p.rates(),
        _ => (spec.tpr, spec.tnr),
    };
    serde_json::json!({
        "spec": spec,
        "effective_rates": { "tpr": tpr, "tnr": tnr },
        "seed": spec.seed,
        "rng": RNG_NAME,
        "versions": { "earlin-core": env!("CARGO_PKG_VERSION") },
    })
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("slope fit needs two or more paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct x values"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
