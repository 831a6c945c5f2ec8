use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use earlin_collab::{
    backend_registry, process_stream, run_server, write_jsonl, BackendConfig, EdgeSample, EdgeSummary,
    HttpTransport, LoadError, ServerConfig,
};
use earlin_core::calibration::{calibrate as fit_profile, sweep_layers as run_layer_sweep, CalibrationConfig, LayerDump};
use earlin_core::detector::score_all;
use earlin_core::io::{
    encode_profile, export_metrics, load_manifest, load_profile, read_feature, read_feature_dir, write_histogram_csv,
    Manifest, MetricsFormat, Population, Split,
};
use earlin_core::metrics::{score_histogram, LatencyParams, MetricsReport, ScoreSet, SystemModel};
use earlin_core::simulator::{run_metadata, run_sweep, sweep_to_csv, EmpiricalPools, WorkloadSpec};
use earlin_core::{DetectorProfile, FeatureTensor};

use crate::exit::{CliError, CliResult};
use crate::{CalibrateArgs, DetectorKnobs, EdgeArgs, EvalArgs, ServeArgs, SimulateArgs, SweepLayersArgs};

fn require_input(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} not found", path.display())))
    }
}

fn require_output_dir(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Io(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, body: &[u8]) -> CliResult {
    match path {
        Some(p) => fs::write(p, body).map_err(|e| CliError::write(p.display(), e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::write("stdout", e))
        }
    }
}

fn json_line(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s.into_bytes()
}

fn output_format(path: &Path) -> CliResult<MetricsFormat> {
    MetricsFormat::from_path(path)
        .ok_or_else(|| CliError::Usage(format!("{}: output must end in .csv or .json", path.display())))
}

fn read_entries(manifest: &Manifest, population: Population, split: Option<Split>) -> CliResult<Vec<FeatureTensor>> {
    manifest
        .select(population, split)
        .into_iter()
        .map(|e| read_feature(manifest.feature_path(e)).map_err(|err| CliError::input(&e.sample_id, err)))
        .collect()
}

/// A directory of .fmap files, or a manifest whose `population` test
/// entries are loaded.
fn load_tensors(path: &Path, population: Population) -> CliResult<Vec<FeatureTensor>> {
    require_input(path, "features")?;
    let xs = if path.is_dir() {
        read_feature_dir(path)
            .map_err(|e| CliError::input(path.display(), e))?
            .into_iter()
            .map(|(_, x)| x)
            .collect()
    } else {
        let m = load_manifest(path, None).map_err(|e| CliError::input(path.display(), e))?;
        read_entries(&m, population, Some(Split::Test))?
    };
    if xs.is_empty() {
        return Err(CliError::Data(format!("{}: no {population:?} feature tensors", path.display())));
    }
    Ok(xs)
}

fn load_profile_checked(path: &Path) -> CliResult<DetectorProfile> {
    require_input(path, "profile")?;
    load_profile(path).map_err(|e| CliError::input(path.display(), e))
}

fn calibration_config(layer: &str, k: &DetectorKnobs) -> CliResult<CalibrationConfig> {
    let cfg = CalibrationConfig {
        layer_id: layer.to_string(),
        select_fraction: k.select_frac,
        pool_k: k.pool_k as usize,
        confidence: k.confidence,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult {
    let cfg = calibration_config(&a.layer, &a.knobs)?;
    require_input(&a.manifest, "manifest")?;
    if let Some(dir) = &a.features {
        require_input(dir, "features directory")?;
    }
    require_output_dir(&a.out)?;

    let manifest =
        load_manifest(&a.manifest, a.features.as_deref()).map_err(|e| CliError::input(a.manifest.display(), e))?;
    let xs = read_entries(&manifest, Population::Id, Some(Split::Calibration))?;
    if xs.is_empty() {
        return Err(CliError::Data("manifest has no ID calibration entries".into()));
    }
    let profile = fit_profile(&xs, &cfg).map_err(CliError::core)?;
    let bytes = encode_profile(&profile).map_err(CliError::core)?;
    fs::write(&a.out, &bytes).map_err(|e| CliError::write(a.out.display(), e))?;

    eprintln!(
        "calibrated layer {} on {} samples: N = {} channels, embedding dim {}, threshold {:.6}, profile {} bytes -> {}",
        profile.layer_id,
        profile.calibration_count,
        profile.mask.selected_count(),
        profile.embedding_dim(),
        profile.threshold,
        bytes.len(),
        a.out.display()
    );
    emit(
        None,
        &json_line(&serde_json::json!({
            "layer_id": profile.layer_id,
            "calibration_count": profile.calibration_count,
            "selected_channels": profile.mask.selected_count(),
            "embedding_dim": profile.embedding_dim(),
            "threshold": profile.threshold,
            "profile_bytes": bytes.len(),
            "profile": a.out,
        })),
    )
}

fn default_histogram_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    out.with_file_name(format!("{stem}_histogram.csv"))
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let format = a.out.as_deref().map(output_format).transpose()?;
    let histogram = a.histogram.clone().or_else(|| a.out.as_deref().map(default_histogram_path));
    for p in a.out.iter().chain(&histogram) {
        require_output_dir(p)?;
    }
    let profile = load_profile_checked(&a.profile)?;
    let id = load_tensors(&a.id_features, Population::Id)?;
    let ood = load_tensors(&a.ood_features, Population::Ood)?;

    let set = ScoreSet::new(
        score_all(&id, &profile).map_err(CliError::core)?,
        score_all(&ood, &profile).map_err(CliError::core)?,
    );
    let mut report = if a.use_profile_threshold {
        MetricsReport::at_threshold(&set, profile.threshold)
    } else {
        MetricsReport::at_tpr(&set, a.tpr_target)
    }
    .map_err(CliError::core)?;
    if let Some(grid) = &a.rho_grid {
        let [te, tc, ts] = a.latency.0;
        report = report
            .with_system(&SystemModel {
                acc_m: a.acc_m,
                latency: LatencyParams::new(te, tc, ts),
                rho_grid: grid.0.clone(),
            })
            .map_err(CliError::core)?;
    }

    match (&a.out, format) {
        (Some(p), Some(f)) => export_metrics(&report, p, f).map_err(|e| CliError::write(p.display(), e))?,
        _ => emit(None, &json_line(&serde_json::to_value(&report).expect("report serializes")))?,
    }
    if let Some(h) = &histogram {
        let bins = score_histogram(&set, a.bins as usize).map_err(CliError::core)?;
        write_histogram_csv(&bins, h).map_err(|e| CliError::write(h.display(), e))?;
    }
    eprintln!(
        "{} ID / {} OOD scored at threshold {:.6}: TPR {:.4}, TNR {:.4}, detection accuracy {:.4}, AUROC {:.4}",
        set.id_scores.len(),
        set.ood_scores.len(),
        report.threshold,
        report.tpr,
        report.tnr,
        report.detection_accuracy,
        report.auroc
    );
    Ok(())
}

pub fn sweep_layers(a: &SweepLayersArgs) -> CliResult {
    let format = a.out.as_deref().map(output_format).transpose()?;
    // Validates the knobs; the layer id is filled in per dump.
    calibration_config("sweep", &a.knobs)?;
    if let Some(p) = &a.out {
        require_output_dir(p)?;
    }
    let mut dumps = Vec::with_capacity(a.layers.len());
    for l in &a.layers {
        require_input(&l.id, "ID features")?;
        require_input(&l.ood, "OOD features")?;
    }
    for l in &a.layers {
        dumps.push((
            l.name.clone(),
            LayerDump {
                id_features: load_tensors(&l.id, Population::Id)?,
                ood_features: load_tensors(&l.ood, Population::Ood)?,
            },
        ));
    }
    let result =
        run_layer_sweep(&dumps, a.knobs.select_frac, a.knobs.pool_k as usize, a.knobs.confidence).map_err(CliError::core)?;

    let body = match format {
        Some(MetricsFormat::Json) => json_line(&serde_json::json!({
            "rows": result.rows,
            "chosen_layer": result.chosen_layer,
        })),
        _ => {
            let mut s = String::from("layer_id,tnr_at_tpr,threshold,chosen\n");
            for r in &result.rows {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    r.layer_id,
                    r.tnr_at_95_tpr,
                    r.threshold,
                    r.layer_id == result.chosen_layer
                ));
            }
            s.into_bytes()
        }
    };
    emit(a.out.as_deref(), &body)?;
    for r in &result.rows {
        eprintln!("  {:<16} TNR {:.4} at threshold {:.6}", r.layer_id, r.tnr_at_95_tpr, r.threshold);
    }
    eprintln!("chosen layer: {}", result.chosen_layer);
    Ok(())
}

pub fn serve(a: &ServeArgs) -> CliResult {
    let registry = backend_registry();
    if !registry.contains(&a.backend) {
        return Err(CliError::Usage(format!(
            "unknown backend `{}` (available: {})",
            a.backend,
            registry.names().join(", ")
        )));
    }
    let manifest = match &a.manifest {
        Some(p) => {
            require_input(p, "manifest")?;
            let text = fs::read_to_string(p).map_err(|e| CliError::input(p.display(), e))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Some(Manifest::parse(&text, base).map_err(|e| CliError::input(p.display(), e))?)
        }
        None => None,
    };
    match a.backend.as_str() {
        "lookup" if manifest.is_none() => return Err(CliError::Usage("--backend lookup needs --manifest".into())),
        "external" if a.command.is_none() => return Err(CliError::Usage("--backend external needs --command".into())),
        _ => {}
    }
    let config = BackendConfig {
        manifest,
        command: a.command.clone(),
        timeout: Some(Duration::from_millis(a.timeout_ms)),
        labels: a.labels.clone(),
    };
    let backend = registry.create(&a.backend, &config).map_err(CliError::core)?;

    let mut server = ServerConfig::new(a.addr);
    server.workers = a.workers;
    run_server(Arc::from(backend), &server, |addr| {
        eprintln!("cloud node listening on http://{addr} (backend {})", a.backend);
        println!("{}", serde_json::json!({ "listening": addr.to_string() }));
        let _ = io::stdout().flush();
    })
    .map_err(|e| CliError::Io(format!("server on {}: {e}", a.addr)))
}

pub fn edge(a: &EdgeArgs) -> CliResult {
    let split = match a.split.as_str() {
        "all" => None,
        "test" => Some(Split::Test),
        "calibration" => Some(Split::Calibration),
        other => return Err(CliError::Usage(format!("unknown split `{other}` (test, calibration, all)"))),
    };
    if !(a.server.starts_with("http://") || a.server.starts_with("https://")) {
        return Err(CliError::Usage(format!("--server {} must be an http:// URL", a.server)));
    }
    require_input(&a.manifest, "manifest")?;
    for p in a.out.iter().chain(&a.summary) {
        require_output_dir(p)?;
    }
    let profile = load_profile_checked(&a.profile)?;
    let manifest =
        load_manifest(&a.manifest, a.features.as_deref()).map_err(|e| CliError::input(a.manifest.display(), e))?;
    let entries: Vec<_> = manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect();
    let transport = HttpTransport::new(&a.server, Duration::from_millis(a.timeout_ms))
        .map_err(|e| CliError::Usage(format!("--server {}: {e}", a.server)))?;

    let load = |i: usize| {
        let e = entries[i];
        let fail = |message: String| LoadError {
            sample_id: e.sample_id.clone(),
            message,
        };
        let features = read_feature(manifest.feature_path(e)).map_err(|err| fail(err.to_string()))?;
        let raw = manifest
            .image_path(e)
            .ok_or_else(|| fail("no raw input (image_path) to upload".into()))?;
        let payload = fs::read(&raw).map_err(|err| fail(format!("{}: {err}", raw.display())))?;
        Ok(EdgeSample {
            id: e.sample_id.clone(),
            features,
            payload,
        })
    };
    let records = process_stream(entries.len(), load, &profile, &transport, a.concurrency as usize);

    let mut buf = Vec::new();
    write_jsonl(&records, &mut buf).map_err(|e| CliError::write("records", e))?;
    emit(a.out.as_deref(), &buf)?;
    let summary = EdgeSummary::from_records(&records);
    let summary_json = json_line(&serde_json::to_value(&summary).expect("summary serializes"));
    match (&a.summary, &a.out) {
        (Some(p), _) => emit(Some(p), &summary_json)?,
        // Records already occupy stdout.
        (None, None) => {}
        (None, Some(_)) => emit(None, &summary_json)?,
    }
    eprintln!(
        "{} samples: {} forwarded, {} rejected as OOD, {} local errors, {} upload errors; forward rate {:.4}, mean t_edge {:.3} ms, mean round trip {:.3} ms, mean total {:.3} ms",
        summary.samples,
        summary.forwarded,
        summary.rejected,
        summary.local_errors,
        summary.transport_errors,
        summary.forward_rate,
        summary.mean_t_edge_ms,
        summary.mean_round_trip_ms,
        summary.mean_total_ms
    );
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> CliResult {
    for p in a.out.iter().chain(&a.metadata) {
        require_output_dir(p)?;
    }
    let [te, tc, ts] = a.latency.0;
    let [se, sc, ss] = a.latency_std.0;
    let mut spec = WorkloadSpec::synthetic(
        a.rho_grid.0.clone(),
        a.samples as usize,
        a.acc_m,
        a.tpr,
        a.tnr,
        LatencyParams::new(te, tc, ts).with_std(se, sc, ss),
        a.seed,
    );
    spec.detector_mode = a.detector.clone();
    spec.latency_model = a.latency_model.clone();

    if a.detector == "empirical" {
        let (Some(profile), Some(id), Some(ood)) = (&a.profile, &a.id_features, &a.ood_features) else {
            return Err(CliError::Usage(
                "--detector empirical needs --profile, --id-features and --ood-features".into(),
            ));
        };
        let profile = load_profile_checked(profile)?;
        let id = load_tensors(id, Population::Id)?;
        let ood = load_tensors(ood, Population::Ood)?;
        spec.empirical = Some(EmpiricalPools::from_dumps(&profile, &id, &ood).map_err(CliError::core)?);
    }
    // Names and ranges are checked before any sampling.
    let rows = run_sweep(&spec).map_err(|e| match e {
        earlin_core::Error::InvalidInput(m) => CliError::Usage(m),
        other => CliError::core(other),
    })?;

    emit(a.out.as_deref(), sweep_to_csv(&rows).as_bytes())?;
    if let Some(p) = &a.metadata {
        emit(Some(p), &json_line(&run_metadata(&spec)))?;
    }
    for r in &rows {
        eprintln!(
            "rho {:.2}: accuracy {:.4} (analytic {:.4}), latency {:.2} ms (analytic {:.2} ms)",
            r.rho, r.empirical_accuracy, r.analytic_accuracy, r.empirical_latency_ms, r.analytic_latency_ms
        );
    }
    Ok(())
}
