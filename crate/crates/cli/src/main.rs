//! `earlin`: calibrate and evaluate the early OOD detector, and run or
//! simulate the detector-gated edge-cloud pipeline.
//!
//! Machine-readable results go to files or stdout; the human summary goes
//! to stderr. Exit codes: 0 ok, 2 usage, 3 data error, 4 I/O error.

mod commands;
mod exit;

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use earlin_collab::{ENV_PROFILE, ENV_SERVER_URL};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "earlin", version, about = "Early OOD detection for edge-cloud collaborative inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a detector profile on the ID calibration split of a manifest.
    Calibrate(CalibrateArgs),
    /// Score ID and OOD features through a profile and report detection metrics.
    Eval(EvalArgs),
    /// Calibrate every candidate layer and pick the one that best rejects validation OOD.
    SweepLayers(SweepLayersArgs),
    /// Run the cloud classification node.
    Serve(ServeArgs),
    /// Run the edge node over a manifest, uploading only samples kept as ID.
    Edge(EdgeArgs),
    /// Monte-Carlo sweep of joint accuracy and latency over OOD ratios.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DetectorKnobs {
    /// Fraction of channels kept, by aggregate variance.
    #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
    pub select_frac: f64,
    /// Max-pooling window and stride.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub pool_k: u64,
    /// Share of calibration ID samples the threshold must accept.
    #[arg(long, default_value_t = 0.95, value_parser = parse_open_unit)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory feature paths resolve against (default: the manifest's directory).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Layer identifier recorded in the profile.
    #[arg(long)]
    pub layer: String,
    #[command(flatten)]
    pub knobs: DetectorKnobs,
    /// Profile output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = ENV_PROFILE)]
    pub profile: PathBuf,
    /// Directory of .fmap files, or a manifest (its ID test entries).
    #[arg(long)]
    pub id_features: PathBuf,
    /// Directory of .fmap files, or a manifest (its OOD test entries).
    #[arg(long)]
    pub ood_features: PathBuf,
    /// TPR the operating threshold is refit to on the ID scores.
    #[arg(long, default_value_t = 0.95, value_parser = parse_fraction)]
    pub tpr_target: f64,
    /// Use the profile's threshold instead of refitting to --tpr-target.
    #[arg(long)]
    pub use_profile_threshold: bool,
    /// Metrics output (.csv or .json); JSON on stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score histogram CSV (default: next to --out as <stem>_histogram.csv).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
    /// Add per-rho joint accuracy / latency rows for these OOD ratios.
    #[arg(long, value_parser = parse_rho_grid)]
    pub rho_grid: Option<RhoGrid>,
    /// Classifier accuracy on ID inputs, for the rho rows.
    #[arg(long, default_value_t = 0.70, value_parser = parse_probability)]
    pub acc_m: f64,
    /// Edge, communication and server latency means in ms, for the rho rows.
    #[arg(long, default_value = "32.8,186.5,47.8", value_parser = parse_triple)]
    pub latency: Triple,
}

#[derive(Debug, Args)]
pub struct SweepLayersArgs {
    /// `NAME=ID_PATH,OOD_PATH`, shallowest layer first; repeat per layer.
    /// Paths are .fmap directories or manifests.
    #[arg(long = "layer", required = true, value_parser = parse_layer_spec)]
    pub layers: Vec<LayerSpec>,
    #[command(flatten)]
    pub knobs: DetectorKnobs,
    /// Result output (.csv or .json); CSV on stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Classifier backend: `lookup` (manifest digests) or `external` (command).
    #[arg(long, default_value = "lookup")]
    pub backend: String,
    /// Manifest whose image_path/true_label entries seed the lookup backend.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Shell command for the external backend; gets the FMAP body on stdin,
    /// prints one label line. `{digest}` expands to the body's SHA-256.
    #[arg(long)]
    pub command: Option<String>,
    /// External backend timeout.
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
    /// Fixed label table (comma-separated) for class indices of the external backend.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Runtime worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EdgeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory manifest paths resolve against (default: the manifest's directory).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, env = ENV_PROFILE)]
    pub profile: PathBuf,
    /// Cloud node root URL, e.g. http://127.0.0.1:8080.
    #[arg(long, env = ENV_SERVER_URL)]
    pub server: String,
    /// Which split to process: test, calibration or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// JSON-lines records; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON path; when omitted it goes to stdout if --out is set.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Samples in flight at once.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    pub concurrency: u64,
    /// Per-request timeout.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", value_parser = parse_rho_grid)]
    pub rho_grid: RhoGrid,
    /// Samples per rho value.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    #[arg(long, default_value_t = 0.70, value_parser = parse_probability)]
    pub acc_m: f64,
    #[arg(long, default_value_t = 0.95, value_parser = parse_probability)]
    pub tpr: f64,
    #[arg(long, default_value_t = 0.926, value_parser = parse_probability)]
    pub tnr: f64,
    /// Edge, communication and server latency means in ms.
    #[arg(long, default_value = "32.8,186.5,47.8", value_parser = parse_triple)]
    pub latency: Triple,
    /// Standard deviations for the gaussian latency model.
    #[arg(long, default_value = "15,52.12,25", value_parser = parse_triple)]
    pub latency_std: Triple,
    /// `constant` or `gaussian` (truncated at 0).
    #[arg(long, default_value = "constant")]
    pub latency_model: String,
    /// `synthetic` (Bernoulli tpr/tnr) or `empirical` (decisions from scored dumps).
    #[arg(long, default_value = "synthetic")]
    pub detector: String,
    /// Profile for the empirical detector.
    #[arg(long, env = ENV_PROFILE)]
    pub profile: Option<PathBuf>,
    /// ID dump for the empirical detector (.fmap directory or manifest).
    #[arg(long)]
    pub id_features: Option<PathBuf>,
    /// OOD dump for the empirical detector (.fmap directory or manifest).
    #[arg(long)]
    pub ood_features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SweepRow CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run metadata JSON (workload echo, seed, generator, versions).
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoGrid(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple(pub [f64; 3]);

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub id: PathBuf,
    pub ood: PathBuf,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn parse_rho_grid(s: &str) -> Result<RhoGrid, String> {
    let v: Vec<f64> = s.split(',').map(parse_probability).collect::<Result<_, _>>()?;
    Ok(RhoGrid(v))
}

fn parse_triple(s: &str) -> Result<Triple, String> {
    let v: Vec<f64> = s.split(',').map(parse_f64).collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] if a >= 0.0 && b >= 0.0 && c >= 0.0 => Ok(Triple([a, b, c])),
        [_, _, _] => Err("values must be non-negative".into()),
        _ => Err(format!("expected three comma-separated values, got {}", v.len())),
    }
}

fn parse_layer_spec(s: &str) -> Result<LayerSpec, String> {
    let (name, paths) = s.split_once('=').ok_or("expected NAME=ID_PATH,OOD_PATH")?;
    let (id, ood) = paths.split_once(',').ok_or("expected NAME=ID_PATH,OOD_PATH")?;
    if name.is_empty() || id.is_empty() || ood.is_empty() {
        return Err("expected NAME=ID_PATH,OOD_PATH".into());
    }
    Ok(LayerSpec {
        name: name.to_string(),
        id: id.into(),
        ood: ood.into(),
    })
}

fn init_logging(default: &str) {
    let filter = EnvFilter::try_from_env("EARLIN_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(match cli.command {
        Command::Serve(_) => "info",
        _ => "warn",
    });
    let result = match &cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Eval(a) => commands::eval(a),
        Command::SweepLayers(a) => commands::sweep_layers(a),
        Command::Serve(a) => commands::serve(a),
        Command::Edge(a) => commands::edge(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("earlin: {e}");
            e.code()
        }
    }
}
