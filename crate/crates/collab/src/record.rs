//! Per-sample outcomes and the JSON bodies exchanged on the wire.

use serde::{Deserialize, Serialize};

/// What the edge did with a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeDecision {
    /// Flagged OOD at the edge; nothing was sent.
    RejectedOOD,
    /// Accepted as ID and uploaded to the cloud.
    ForwardedID,
    /// Could not be processed locally (e.g. wrong tensor shape); nothing was sent.
    LocalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub sample_id: String,
    pub decision: EdgeDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_edge_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_comm_plus_server_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InferenceRecord {
    /// Checks the decision/field consistency rules.
    pub fn is_consistent(&self) -> bool {
        match self.decision {
            EdgeDecision::RejectedOOD => {
                self.predicted_label.is_none()
                    && self.t_comm_plus_server_ms.is_none()
                    && self.error.is_none()
            }
            EdgeDecision::ForwardedID => {
                self.predicted_label.is_some() != self.error.is_some()
            }
            EdgeDecision::LocalError => {
                self.error.is_some()
                    && self.predicted_label.is_none()
                    && self.t_comm_plus_server_ms.is_none()
            }
        }
    }
}

/// `200` body of `POST /v1/classify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: String,
    pub class_index: u32,
    pub server_ms: f64,
}

/// Non-`200` body: `{"error": code}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
}

pub mod codes {
    pub const MALFORMED_TENSOR: &str = "malformed_tensor";
    pub const UNKNOWN_SAMPLE: &str = "unknown_sample";
    pub const BACKEND_FAILURE: &str = "backend_failure";
}

pub const CLASSIFY_PATH: &str = "/v1/classify";
pub const HEALTH_PATH: &str = "/v1/health";
