//! Per-sample latency draws.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LatencyParams;
use crate::registry::Registry;

pub trait LatencyModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// Edge compute time in ms.
    fn edge(&self, rng: &mut dyn RngCore) -> f64;

    /// Communication plus server time in ms, for an uploaded sample.
    fn round_trip(&self, rng: &mut dyn RngCore) -> f64;
}

/// Every component takes its mean.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLatency(pub LatencyParams);

impl LatencyModel for ConstantLatency {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn edge(&self, _rng: &mut dyn RngCore) -> f64 {
        self.0.t_edge
    }

    fn round_trip(&self, _rng: &mut dyn RngCore) -> f64 {
        self.0.round_trip()
    }
}

/// Independent Gaussians per component, truncated to `[0, inf)` by rejection.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLatency {
    edge: Normal<f64>,
    comm: Normal<f64>,
    server: Normal<f64>,
}

impl GaussianLatency {
    pub fn new(lp: &LatencyParams) -> Result<Self> {
        lp.validate()?;
        let normal = |mean: f64, std: Option<f64>| {
            Normal::new(mean, std.unwrap_or(0.0))
                .map_err(|e| Error::invalid(format!("latency distribution: {e}")))
        };
        Ok(GaussianLatency {
            edge: normal(lp.t_edge, lp.std_edge)?,
            comm: normal(lp.t_comm, lp.std_comm)?,
            server: normal(lp.t_server, lp.std_server)?,
        })
    }
}

fn truncated(d: &Normal<f64>, rng: &mut dyn RngCore) -> f64 {
    // Means are non-negative, so each draw is accepted with probability >= 1/2.
    loop {
        let v = d.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
}

impl LatencyModel for GaussianLatency {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn edge(&self, rng: &mut dyn RngCore) -> f64 {
        truncated(&self.edge, rng)
    }

    fn round_trip(&self, rng: &mut dyn RngCore) -> f64 {
        truncated(&self.comm, rng) + truncated(&self.server, rng)
    }
}

pub fn latency_registry() -> Registry<LatencyParams, dyn LatencyModel> {
    let mut r: Registry<LatencyParams, dyn LatencyModel> = Registry::new("latency model");
    r.register("constant", |lp: &LatencyParams| {
        lp.validate()?;
        Ok(Box::new(ConstantLatency(*lp)))
    });
    r.register("gaussian", |lp: &LatencyParams| Ok(Box::new(GaussianLatency::new(lp)?)));
    r
}
