use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_riskfilter"));
    cmd.env_remove("RISKFILTER_JOBS");
    cmd
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// All files below `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let config = data("small.toml");
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--config", "/nonexistent/scenario.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.toml"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    assert_eq!(code(&run(&["verify", "everything"])), 2);
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--set", "colour=blue"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("report.csv").exists());
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "preset = \"oscillator\"\nseed = 1\nmembers = 4\n").unwrap();
    let out = run(&["synth", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("members"));
}

#[test]
fn run_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files = tree(dir.path());
    for name in [
        "report.csv",
        "report.json",
        "groundtruth.json",
        "manifest.json",
        "trajectories/theta_0.csv",
        "trajectories/theta_0p5.csv",
        "trajectories/theta_inf.csv",
        "bank/member_000.csv",
        "bank/member_011.csv",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }
    let report = String::from_utf8(files["report.csv"].clone()).unwrap();
    assert_eq!(report.lines().next().unwrap(), "tau,0,0.5,20,1000,inf");
    assert_eq!(report.lines().count(), 6);
    assert_eq!(String::from_utf8_lossy(&out.stdout), report);

    let manifest: serde_json::Value = serde_json::from_slice(&files["manifest.json"]).unwrap();
    assert_eq!(manifest["seed"], 42);
    let hashes = manifest["artifact_hashes"].as_object().unwrap();
    assert_eq!(hashes.len(), files.len() - 1);
    let digest = riskfilter::manifest::sha256_hex(&files["report.csv"]);
    assert_eq!(hashes["report.csv"], digest.as_str());
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(a.path(), &["--jobs", "1"])), 0);
    let out = bin()
        .env("RISKFILTER_JOBS", "3")
        .args(["run", "--config", data("small.toml").to_str().unwrap(), "--out", b.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn overrides_change_the_configuration_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(a.path(), &["--set", "thetas=0.5,20"])), 0);
    assert_eq!(code(&run_small(b.path(), &["--set", "thetas=0.5,20", "--set", "seed=43"])), 0);
    let ma: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    assert_ne!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(mb["seed"], 43);
    let report = fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "tau,0,0.5,20,inf");
}

#[test]
fn report_on_synthesized_data_matches_run() {
    let synth = tempfile::tempdir().unwrap();
    let config = data("small.toml");
    let out = run(&["synth", "--config", config.to_str().unwrap(), "--out", synth.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let truth = synth.path().join("groundtruth.json");

    let report = tempfile::tempdir().unwrap();
    let out = run(&[
        "report",
        "--config",
        config.to_str().unwrap(),
        "--groundtruth",
        truth.to_str().unwrap(),
        "--out",
        report.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let direct = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(direct.path(), &[])), 0);
    let (r, d) = (tree(report.path()), tree(direct.path()));
    for name in d.keys().filter(|k| *k != "manifest.json") {
        assert!(r[name] == d[name], "{name} differs");
    }
}

#[test]
fn report_rejects_mismatched_grid() {
    let synth = tempfile::tempdir().unwrap();
    let config = data("small.toml");
    let out = run(&["synth", "--config", config.to_str().unwrap(), "--out", synth.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let other = synth.path().join("other.toml");
    let text = fs::read_to_string(&config).unwrap().replace("num_intervals = 200", "num_intervals = 100");
    fs::write(&other, text).unwrap();
    let out = run(&[
        "report",
        "--config",
        other.to_str().unwrap(),
        "--groundtruth",
        synth.path().join("groundtruth.json").to_str().unwrap(),
        "--out",
        synth.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

/// Trajectories with one RK4 substep per interval stay within 1e-5 of the
/// default ten.
#[test]
fn substep_refinement_barely_moves_the_estimates() {
    let coarse = tempfile::tempdir().unwrap();
    let fine = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(coarse.path(), &["--set", "substeps=1"])), 0);
    assert_eq!(code(&run_small(fine.path(), &[])), 0);
    let read = |dir: &Path| -> Vec<Vec<f64>> {
        let mut reader = csv::Reader::from_path(dir.join("trajectories/theta_20.csv")).unwrap();
        reader
            .records()
            .map(|r| r.unwrap().iter().skip(1).take(2).map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (a, b) = (read(coarse.path()), read(fine.path()));
    assert_eq!(a.len(), b.len());
    let scale = b.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a.iter().flatten().zip(b.iter().flatten()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff <= 1e-5 * scale, "diff {diff} scale {scale}");
}

/// Frozen output of the shipped oscillator preset.
#[test]
fn oscillator_preset_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let config = preset("oscillator_uniform.toml");
    let out = run(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let baseline = fs::read(data("oscillator_uniform_report.csv")).unwrap();
    assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), baseline);
}
