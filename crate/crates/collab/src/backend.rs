//! Cloud-side classifier backends, selected by name through
//! [`backend_registry`].

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use earlin_core::io::Manifest;
use earlin_core::registry::Registry;
use thiserror::Error;

use crate::digest::content_digest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub label: String,
    pub class_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("unknown sample {0}")]
    UnknownSample(String),
    #[error("backend failure: {0}")]
    Failure(String),
}

/// A classifier the cloud node delegates to. Implementations are shared
/// across concurrent requests.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// `body` is the FMAP-encoded raw input, `digest` its SHA-256 hex.
    fn classify(&self, body: &[u8], digest: &str) -> Result<Classified, BackendError>;
}

/// Label table: sorted unique labels, `class_index` = position.
fn label_table<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    labels
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Payload-addressed lookup: content digest -> label.
#[derive(Debug, Clone)]
pub struct LookupBackend {
    by_digest: HashMap<String, u32>,
    labels: Vec<String>,
}

impl LookupBackend {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let pairs: Vec<(String, String)> = pairs.into_iter().collect();
        let labels = label_table(pairs.iter().map(|(_, l)| l.as_str()));
        let by_digest = pairs
            .into_iter()
            .map(|(d, l)| {
                let idx = labels.binary_search(&l).expect("label in table") as u32;
                (d, idx)
            })
            .collect();
        LookupBackend { by_digest, labels }
    }

    /// Registers every manifest entry that carries both an image file and a
    /// true label, keyed by the digest of the image file's bytes.
    pub fn from_manifest(manifest: &Manifest) -> std::io::Result<Self> {
        let mut pairs = Vec::new();
        for e in &manifest.entries {
            if let (Some(path), Some(label)) = (manifest.image_path(e), &e.true_label) {
                let bytes = std::fs::read(&path)?;
                pairs.push((content_digest(&bytes), label.clone()));
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl ClassifierBackend for LookupBackend {
    fn name(&self) -> &'static str {
        "lookup"
    }

    fn classify(&self, _body: &[u8], digest: &str) -> Result<Classified, BackendError> {
        let &idx = self
            .by_digest
            .get(digest)
            .ok_or_else(|| BackendError::UnknownSample(digest.to_string()))?;
        Ok(Classified {
            label: self.labels[idx as usize].clone(),
            class_index: idx,
        })
    }
}

/// Runs `sh -c <command>` per request, feeding the FMAP body on stdin and
/// reading one label line from stdout. `{digest}` in the command is
/// replaced by the body digest.
#[derive(Debug)]
pub struct ExternalBackend {
    command: String,
    timeout: Duration,
    /// Fixed label table, if configured; otherwise indices are assigned in
    /// first-seen order for the lifetime of the backend.
    fixed_labels: Option<Vec<String>>,
    seen_labels: Mutex<Vec<String>>,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>, timeout: Duration, labels: Option<Vec<String>>) -> Self {
        ExternalBackend {
            command: command.into(),
            timeout,
            fixed_labels: labels,
            seen_labels: Mutex::new(Vec::new()),
        }
    }

    fn index_of(&self, label: &str) -> Result<u32, BackendError> {
        if let Some(table) = &self.fixed_labels {
            return table
                .iter()
                .position(|l| l == label)
                .map(|i| i as u32)
                .ok_or_else(|| {
                    BackendError::Failure(format!("label `{label}` not in the label table"))
                });
        }
        let mut seen = self.seen_labels.lock().expect("label table lock");
        let idx = match seen.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                seen.push(label.to_string());
                seen.len() - 1
            }
        };
        Ok(idx as u32)
    }

    fn run(&self, body: &[u8], digest: &str) -> Result<String, BackendError> {
        let fail = |m: String| BackendError::Failure(m);
        let cmd = self.command.replace("{digest}", digest);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| fail(format!("spawn `{cmd}`: {e}")))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = body.to_vec();
        // A command that ignores stdin closes the pipe early; that is not an error.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(fail(format!("`{cmd}` timed out after {:?}", self.timeout)));
                }
                Ok(None) => thread::sleep(Duration::from_millis(1)),
                Err(e) => return Err(fail(format!("waiting for `{cmd}`: {e}"))),
            }
        };
        let _ = writer.join();
        let out = reader
            .join()
            .map_err(|_| fail("stdout reader panicked".into()))?
            .map_err(|e| fail(format!("reading output of `{cmd}`: {e}")))?;
        if !status.success() {
            return Err(fail(format!("`{cmd}` exited with {status}")));
        }
        let label = out.lines().next().unwrap_or("").trim().to_string();
        if label.is_empty() {
            return Err(fail(format!("`{cmd}` printed no label")));
        }
        Ok(label)
    }
}

impl ClassifierBackend for ExternalBackend {
    fn name(&self) -> &'static str {
        "external"
    }

    fn classify(&self, body: &[u8], digest: &str) -> Result<Classified, BackendError> {
        let label = self.run(body, digest)?;
        let class_index = self.index_of(&label)?;
        Ok(Classified { label, class_index })
    }
}

/// Everything a backend factory may need.
#[derive(Debug, Clone, Default)]
pub struct BackendConfig {
    pub manifest: Option<Manifest>,
    pub command: Option<String>,
    pub timeout: Option<Duration>,
    pub labels: Option<Vec<String>>,
}

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(10);

pub fn backend_registry() -> Registry<BackendConfig, dyn ClassifierBackend> {
    let mut r: Registry<BackendConfig, dyn ClassifierBackend> = Registry::new("backend");
    r.register("lookup", |c: &BackendConfig| {
        let m = c.manifest.as_ref().ok_or_else(|| {
            earlin_core::Error::InvalidInput("lookup backend needs a manifest".into())
        })?;
        Ok(Box::new(LookupBackend::from_manifest(m)?))
    });
    r.register("external", |c: &BackendConfig| {
        let cmd = c.command.clone().ok_or_else(|| {
            earlin_core::Error::InvalidInput("external backend needs a command".into())
        })?;
        Ok(Box::new(ExternalBackend::new(
            cmd,
            c.timeout.unwrap_or(DEFAULT_EXTERNAL_TIMEOUT),
            c.labels.clone(),
        )))
    });
    r
}
