//! Edge-side client for the classify endpoint.

use std::error::Error as StdError;
use std::time::Duration;

use thiserror::Error;

use crate::record::{ClassificationResult, ErrorBody, CLASSIFY_PATH, HEALTH_PATH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Could not reach the server or the exchange broke off.
    #[error("{0}")]
    Connection(String),
    /// The server answered with a non-200 status.
    #[error("server returned {status}: {code}")]
    Rejected { status: u16, code: String },
    #[error("invalid response: {0}")]
    Protocol(String),
}

/// Uploads one FMAP body and returns the server's classification.
pub trait Transport: Send + Sync {
    fn classify(&self, body: &[u8]) -> Result<ClassificationResult, TransportError>;
}

/// Formats an error together with its source chain, so the root cause
/// ("Connection refused") is visible in records.
fn chain(e: &dyn StdError) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(c) = cur {
        let m = c.to_string();
        if !s.contains(&m) {
            s.push_str(": ");
            s.push_str(&m);
        }
        cur = c.source();
    }
    s
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// HTTP/1.1 transport over a pooled keep-alive client.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    base: String,
}

impl HttpTransport {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Connection(chain(&e)))?;
        Ok(HttpTransport {
            client,
            base: base.trim_end_matches('/').to_string(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<(), TransportError> {
        let resp = self
            .client
            .get(format!("{}{HEALTH_PATH}", self.base))
            .send()
            .map_err(|e| TransportError::Connection(chain(&e)))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(TransportError::Rejected {
                status: resp.status().as_u16(),
                code: String::new(),
            })
        }
    }
}

impl Transport for HttpTransport {
    fn classify(&self, body: &[u8]) -> Result<ClassificationResult, TransportError> {
        let resp = self
            .client
            .post(format!("{}{CLASSIFY_PATH}", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
            .body(body.to_vec())
            .send()
            .map_err(|e| TransportError::Connection(chain(&e)))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| TransportError::Connection(chain(&e)))?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| TransportError::Protocol(e.to_string()))
        } else {
            let code = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            Err(TransportError::Rejected {
                status: status.as_u16(),
                code,
            })
        }
    }
}
