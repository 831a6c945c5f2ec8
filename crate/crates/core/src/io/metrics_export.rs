use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{HistogramBin, MetricsReport};

pub const METRICS_CSV_HEADER: &str =
    "rho,overall_accuracy,expected_latency_ms,tpr,tnr,fpr,detection_accuracy,auroc";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Json,
}

impl MetricsFormat {
    /// Picks the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MetricsFormat::Csv),
            "json" => Ok(MetricsFormat::Json),
            other => Err(Error::invalid(format!("unknown metrics format `{other}`"))),
        }
    }
}

/// One line per rho row; a report without rows yields a single line with
/// the first three columns empty.
pub fn metrics_to_csv(r: &MetricsReport) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    let tail = format!(
        "{},{},{},{},{}",
        r.tpr, r.tnr, r.fpr, r.detection_accuracy, r.auroc
    );
    if r.rows.is_empty() {
        let _ = writeln!(out, ",,,{tail}");
    }
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{},{},{},{tail}",
            row.rho, row.overall_accuracy, row.expected_latency_ms
        );
    }
    out
}

pub fn export_metrics(report: &MetricsReport, path: impl AsRef<Path>, format: MetricsFormat) -> Result<()> {
    let body = match format {
        MetricsFormat::Csv => metrics_to_csv(report),
        MetricsFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    };
    fs::write(path, body)?;
    Ok(())
}

pub fn load_metrics_json(path: impl AsRef<Path>) -> Result<MetricsReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_histogram_csv(bins: &[HistogramBin], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,id_count,ood_count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.id_count, b.ood_count);
    }
    fs::write(path, out)?;
    Ok(())
}
