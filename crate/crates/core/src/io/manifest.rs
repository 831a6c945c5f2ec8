//! Dataset manifests: a JSON array of sample entries.
//!
//! ```json
//! [{"sample_id": "c10-0001", "feature_path": "bn5/c10-0001.fmap",
//!   "image_path": "img/c10-0001.fmap", "true_label": "cat",
//!   "population": "ID", "split": "calibration"}]
//! ```
//!
//! Parsing is strict: unknown keys are rejected.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub feature_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<String>,
    pub population: Population,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

const REQUIRED: [&str; 4] = ["sample_id", "feature_path", "population", "split"];
const OPTIONAL: [&str; 2] = ["image_path", "true_label"];

fn str_field(entry: usize, obj: &Map<String, Value>, key: &str) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(Error::Parse(format!(
            "manifest entry {entry}: field `{key}` must be a string, got {other}"
        ))),
    }
}

fn parse_entry(i: usize, v: &Value) -> Result<ManifestEntry> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse(format!("manifest entry {i} is not an object")))?;
    if let Some(k) = obj
        .keys()
        .find(|k| !REQUIRED.contains(&k.as_str()) && !OPTIONAL.contains(&k.as_str()))
    {
        return Err(Error::UnknownField {
            entry: i,
            field: k.clone(),
        });
    }
    let required = |key: &str| {
        str_field(i, obj, key)?.ok_or_else(|| Error::MissingField {
            entry: i,
            field: key.to_string(),
        })
    };
    let population = match required("population")?.as_str() {
        "ID" => Population::Id,
        "OOD" => Population::Ood,
        other => {
            return Err(Error::UnknownPopulation {
                entry: i,
                value: other.to_string(),
            })
        }
    };
    let split = match required("split")?.as_str() {
        "calibration" => Split::Calibration,
        "test" => Split::Test,
        other => {
            return Err(Error::Parse(format!(
                "manifest entry {i}: unknown split `{other}`"
            )))
        }
    };
    Ok(ManifestEntry {
        sample_id: required("sample_id")?,
        feature_path: required("feature_path")?,
        image_path: str_field(i, obj, "image_path")?,
        true_label: str_field(i, obj, "true_label")?,
        population,
        split,
    })
}

impl Manifest {
    /// Parses and validates manifest JSON without touching the filesystem.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let items = root
            .as_array()
            .ok_or_else(|| Error::Parse("manifest must be a JSON array".into()))?;
        let entries: Vec<ManifestEntry> = items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_entry(i, v))
            .collect::<Result<_>>()?;
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(e.sample_id.clone()));
            }
        }
        Ok(Manifest {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn feature_path(&self, e: &ManifestEntry) -> PathBuf {
        self.resolve(&e.feature_path)
    }

    pub fn image_path(&self, e: &ManifestEntry) -> Option<PathBuf> {
        e.image_path.as_deref().map(|p| self.resolve(p))
    }

    /// Fails if any referenced feature file does not exist.
    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            let p = self.feature_path(e);
            if !p.is_file() {
                return Err(Error::InvalidInput(format!(
                    "sample `{}`: feature file {} not found",
                    e.sample_id,
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn select(&self, population: Population, split: Option<Split>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.population == population && split.is_none_or(|s| e.split == s))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }
}

/// Loads a manifest. Relative paths resolve against `base_dir`, or the
/// manifest's own directory when `None`. Every feature path must exist.
pub fn load_manifest(path: impl AsRef<Path>, base_dir: Option<&Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = match base_dir {
        Some(b) => b.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let m = Manifest::parse(&text, base)?;
    m.check_paths()?;
    Ok(m)
}
