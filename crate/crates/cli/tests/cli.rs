use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use earlin_core::calibration::PROFILE_FORMAT_VERSION;
use earlin_core::io::{load_profile, save_profile, write_feature, Population};
use earlin_core::simulator::synthetic_features;
use earlin_core::{ChannelMask, DetectorProfile, FeatureTensor, Shape};
use tempfile::TempDir;

fn earlin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_earlin"));
    c.env_remove("EARLIN_PROFILE").env_remove("EARLIN_SERVER_URL").env_remove("EARLIN_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    earlin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes tensors as `<dir>/<prefix>NNNN.fmap`; returns relative paths.
fn write_set(root: &Path, sub: &str, xs: &[FeatureTensor]) -> Vec<String> {
    fs::create_dir_all(root.join(sub)).unwrap();
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let rel = format!("{sub}/{i:04}.fmap");
            write_feature(root.join(&rel), x).unwrap();
            rel
        })
        .collect()
}

struct Fixture {
    dir: TempDir,
    manifest: PathBuf,
}

/// ID calibration + ID test + OOD test at the given shift, 8×16×16.
fn dataset(shift: f64, n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape::new(8, 16, 16);
    let cal = write_set(dir.path(), "cal", &synthetic_features(n, shape, Population::Id, 0.0, 1).unwrap());
    let id = write_set(dir.path(), "id", &synthetic_features(n, shape, Population::Id, 0.0, 2).unwrap());
    let ood = write_set(dir.path(), "ood", &synthetic_features(n, shape, Population::Ood, shift, 3).unwrap());
    let mut entries = Vec::new();
    for (paths, pop, split, tag) in [(&cal, "ID", "calibration", "c"), (&id, "ID", "test", "i"), (&ood, "OOD", "test", "o")] {
        for (i, p) in paths.iter().enumerate() {
            entries.push(serde_json::json!({
                "sample_id": format!("{tag}{i}"), "feature_path": p, "population": pop, "split": split,
            }));
        }
    }
    let manifest = dir.path().join("manifest.json");
    fs::write(&manifest, serde_json::to_string(&entries).unwrap()).unwrap();
    Fixture { dir, manifest }
}

fn calibrated(f: &Fixture) -> PathBuf {
    let out = f.dir.path().join("p.profile");
    let o = run(&["calibrate", "--manifest", s(&f.manifest), "--layer", "bn5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn calibrate_writes_a_valid_profile() {
    let f = dataset(2.0, 200);
    let out = f.dir.path().join("p.profile");
    let o = run(&["calibrate", "--manifest", s(&f.manifest), "--layer", "bn5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = load_profile(&out).unwrap();
    assert_eq!((p.calibration_count, p.embedding_dim(), p.mask.selected_count()), (200, 64, 4));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["embedding_dim"], 64);
    assert_eq!(summary["profile_bytes"], fs::metadata(&out).unwrap().len());
    assert!(String::from_utf8_lossy(&o.stderr).contains("embedding dim 64"));

    // Idempotent output.
    let first = fs::read(&out).unwrap();
    run(&["calibrate", "--manifest", s(&f.manifest), "--layer", "bn5", "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("p.profile");
    let o = run(&["calibrate", "--manifest", s(&missing), "--layer", "l", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));

    let f = dataset(2.0, 20);
    let o = run(&["calibrate", "--manifest", s(&f.manifest), "--layer", "l", "--confidence", "1.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["calibrate", "--layer", "l"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let bad_dir = dir.path().join("no/such/dir/p.profile");
    let o = run(&["calibrate", "--manifest", s(&f.manifest), "--layer", "l", "--out", s(&bad_dir)]);
    assert_eq!(o.status.code(), Some(4));

    fs::write(&missing, "{ not json").unwrap();
    let o = run(&["calibrate", "--manifest", s(&missing), "--layer", "l", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_documents_defaults() {
    for sub in ["calibrate", "sweep-layers"] {
        let help = String::from_utf8(run(&[sub, "--help"]).stdout).unwrap();
        for d in ["[default: 0.5]", "[default: 4]", "[default: 0.95]"] {
            assert!(help.contains(d), "{sub} --help lacks {d}:\n{help}");
        }
    }
    let help = String::from_utf8(run(&["eval", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 0.95]") && help.contains("EARLIN_PROFILE"));
    for sub in ["serve", "edge", "simulate"] {
        assert!(run(&[sub, "--help"]).status.success());
    }
}

#[test]
fn eval_on_disjoint_and_identical_populations() {
    let f = dataset(2.0, 200);
    let profile = calibrated(&f);
    let out = f.dir.path().join("m.json");
    let o = run(&[
        "eval", "--profile", s(&profile), "--id-features", s(&f.manifest), "--ood-features", s(&f.manifest),
        "--out", s(&out), "--rho-grid", "0,0.5,1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m["tnr"], 1.0);
    assert_eq!(m["auroc"], 1.0);
    assert!((m["fpr"].as_f64().unwrap() - (1.0 - m["tnr"].as_f64().unwrap())).abs() < 1e-15);
    assert_eq!(m["rows"].as_array().unwrap().len(), 3);
    let hist = fs::read_to_string(f.dir.path().join("m_histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,id_count,ood_count\n"));
    assert_eq!(hist.lines().count(), 51);

    // Same-distribution populations, directories as input, profile from env, CSV out.
    let csv = f.dir.path().join("same.csv");
    let o = earlin()
        .env("EARLIN_PROFILE", &profile)
        .args(["eval", "--id-features", s(&f.dir.path().join("id")), "--ood-features"])
        .arg(f.dir.path().join("cal"))
        .args(["--out", s(&csv)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let auroc: f64 = row[7].parse().unwrap();
    assert!((auroc - 0.5).abs() < 0.08, "auroc {auroc}");

    let o = run(&["eval", "--profile", s(&profile), "--id-features", "x", "--ood-features", "y", "--out", "m.txt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_layers_picks_the_separated_layer() {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape::new(8, 8, 8);
    let mut args = vec!["sweep-layers".to_string()];
    for (name, shift, seed) in [("bn1", 0.0, 10), ("bn2", 2.0, 20)] {
        let id = synthetic_features(150, shape, Population::Id, 0.0, seed).unwrap();
        let ood = synthetic_features(150, shape, Population::Ood, shift, seed + 1).unwrap();
        write_set(dir.path(), &format!("{name}/id"), &id);
        write_set(dir.path(), &format!("{name}/ood"), &ood);
        let base = dir.path().join(name);
        args.push("--layer".into());
        args.push(format!("{name}={},{}", s(&base.join("id")), s(&base.join("ood"))));
    }
    let o = earlin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("layer_id,tnr_at_tpr,threshold,chosen"));
    assert!(csv.lines().any(|l| l.starts_with("bn2,") && l.ends_with(",true")), "{csv}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("chosen layer: bn2"));
}

#[test]
fn simulate_reproduces_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let meta = dir.path().join("meta.json");
    let args = ["simulate", "--samples", "20000", "--seed", "7", "--out", s(&out), "--metadata", s(&meta)];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let half: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect::<Vec<f64>>())
        .find(|r| r[0] == 0.5)
        .unwrap();
    assert_eq!(format!("{:.2}", half[4]), "152.76");
    assert!((half[2] - 0.7955).abs() < 1e-12);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);

    let first = fs::read(&out).unwrap();
    assert!(run(&args).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    assert_eq!(run(&["simulate", "--rho-grid", "0,1.5"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--latency-model", "pareto", "--samples", "10"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--detector", "empirical"]).status.code(), Some(2));
}

fn gate_profile(path: &Path) {
    let p = DetectorProfile {
        layer_id: "gate".into(),
        input_shape: Shape::new(1, 4, 4),
        mask: ChannelMask::all(1).unwrap(),
        pool_k: 4,
        centroid: vec![0.0],
        threshold: 1.0,
        confidence: 0.95,
        calibration_count: 1,
        format_version: PROFILE_FORMAT_VERSION,
    };
    save_profile(path, &p).unwrap();
}

/// 10 samples, the odd ones forced OOD; each has a distinct raw input.
fn edge_fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("feat")).unwrap();
    fs::create_dir_all(dir.path().join("raw")).unwrap();
    let mut entries = Vec::new();
    for i in 0..10 {
        let v = if i % 2 == 1 { 3.0 } else { 0.25 };
        write_feature(dir.path().join(format!("feat/{i}.fmap")), &FeatureTensor::new(1, 4, 4, vec![v; 16]).unwrap())
            .unwrap();
        let raw = FeatureTensor::new(3, 2, 2, (0..12).map(|j| (i * 100 + j) as f32).collect()).unwrap();
        write_feature(dir.path().join(format!("raw/{i}.fmap")), &raw).unwrap();
        entries.push(serde_json::json!({
            "sample_id": format!("s{i}"), "feature_path": format!("feat/{i}.fmap"),
            "image_path": format!("raw/{i}.fmap"), "true_label": format!("label{}", i % 3),
            "population": if i % 2 == 1 { "OOD" } else { "ID" }, "split": "test",
        }));
    }
    let manifest = dir.path().join("manifest.json");
    fs::write(&manifest, serde_json::to_string(&entries).unwrap()).unwrap();
    let profile = dir.path().join("gate.profile");
    gate_profile(&profile);
    (dir, manifest, profile)
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(manifest: &Path) -> (Server, String) {
    let mut child = earlin()
        .args(["serve", "--addr", "127.0.0.1:0", "--backend", "lookup", "--manifest", s(manifest)])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    let url = format!("http://{}", v["listening"].as_str().unwrap());
    (Server(child), url)
}

#[test]
fn serve_and_edge_forward_only_id() {
    let (dir, manifest, profile) = edge_fixture();
    let (mut server, url) = start_server(&manifest);
    let out = dir.path().join("records.jsonl");
    let o = earlin()
        .env("EARLIN_SERVER_URL", &url)
        .args(["edge", "--manifest", s(&manifest), "--profile", s(&profile), "--out", s(&out), "--concurrency", "3"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let records: Vec<serde_json::Value> =
        fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["sample_id"], format!("s{i}"));
        if i % 2 == 1 {
            assert_eq!(r["decision"], "RejectedOOD");
            assert!(r.get("t_comm_plus_server_ms").is_none());
        } else {
            assert_eq!(r["decision"], "ForwardedID");
            assert_eq!(r["predicted_label"], format!("label{}", i % 3));
        }
    }
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["forwarded"], 5);

    // The server logs one line per classified request.
    let _ = server.0.kill();
    let _ = server.0.wait();
    let mut log = String::new();
    server.0.stderr.take().unwrap().read_to_string(&mut log).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("classified")).count(), 5, "{log}");
}

#[test]
fn edge_survives_a_dead_server() {
    let (dir, manifest, profile) = edge_fixture();
    let (server, url) = start_server(&manifest);
    drop(server);
    let out = dir.path().join("records.jsonl");
    let o = run(&["edge", "--manifest", s(&manifest), "--profile", s(&profile), "--server", &url, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let failed: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|r| r.get("error").is_some())
        .collect();
    assert_eq!(failed.len(), 5);
    assert!(failed.iter().all(|r| r["decision"] == "ForwardedID" && r.get("predicted_label").is_none()));
    let msg = failed[0]["error"].as_str().unwrap().to_lowercase();
    assert!(msg.contains("connection refused"), "{msg}");

    let o = run(&["edge", "--manifest", s(&manifest), "--profile", s(&profile), "--server", "localhost:1"]);
    assert_eq!(o.status.code(), Some(2));
}
