//! Edge-cloud collaborative inference gated by an early OOD detector.
//!
//! The edge scores each sample's shallow-layer activation against a
//! [`DetectorProfile`](earlin_core::DetectorProfile). Samples flagged OOD
//! stop there and cost no network traffic. Kept samples have their raw
//! input uploaded as an FMAP body to the cloud node, which hands it to a
//! [`ClassifierBackend`].
//!
//! Wire protocol (HTTP/1.1):
//!
//! | request | response |
//! |---|---|
//! | `POST /v1/classify`, octet-stream FMAP body | `200 {"label","class_index","server_ms"}` |
//! | malformed body | `400 {"error":"malformed_tensor"}` |
//! | digest not known to the backend | `400 {"error":"unknown_sample"}` |
//! | backend failure | `503 {"error":"backend_failure"}` |
//! | `GET /v1/health` | `200 {"status":"ok"}` |

pub mod backend;
pub mod digest;
pub mod edge;
pub mod record;
pub mod server;
pub mod transport;

pub use backend::{backend_registry, BackendConfig, BackendError, ClassifierBackend, ExternalBackend, LookupBackend};
pub use digest::content_digest;
pub use edge::{edge_process, process_stream, write_jsonl, EdgeSample, EdgeSummary, LoadError};
pub use record::{ClassificationResult, EdgeDecision, InferenceRecord};
pub use server::{run_server, spawn_server, ServerConfig, ServerHandle};
pub use transport::{HttpTransport, Transport, TransportError};

/// Environment fallback for the server URL.
pub const ENV_SERVER_URL: &str = "EARLIN_SERVER_URL";
/// Environment fallback for the detector profile path.
pub const ENV_PROFILE: &str = "EARLIN_PROFILE";
