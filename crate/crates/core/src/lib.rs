//! Early out-of-distribution detection from shallow-layer feature maps.
//!
//! The pipeline: rank the channels of one shallow layer by their aggregate
//! variance over in-distribution data, keep the top half, max-pool them into
//! an embedding, and flag a sample as OOD when its embedding lies further
//! from the in-distribution centroid than a calibrated threshold.
//!
//! - [`fmap`]: tensor kernels (variance, channel selection, pooling, embedding)
//! - [`calibration`]: profile construction and the layer sweep
//! - [`detector`]: scoring and the ID/OOD decision
//! - [`metrics`]: TPR/TNR/AUROC and the closed-form accuracy/latency model
//! - [`io`]: FMAP tensors, manifests, profiles, metrics exports
//! - [`simulator`]: seeded Monte-Carlo sweeps over the OOD ratio

pub mod calibration;
pub mod detector;
pub mod error;
pub mod fmap;
pub mod io;
pub mod metrics;
pub mod registry;
pub mod simulator;

pub use calibration::{calibrate, CalibrationConfig, DetectorProfile};
pub use detector::{detect, score, Decision, DetectionOutcome};
pub use error::{Error, Result};
pub use fmap::{ChannelMask, Embedding, FeatureTensor, InfoVector, Shape};
pub use metrics::{LatencyParams, MetricsReport, Polarity, ScoreSet};
