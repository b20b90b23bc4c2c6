use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_scatreg");

/// Small deterministic dataset of planar H/C/N/O molecules with a smooth energy.
fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let mut s = String::from("# id,n_atoms,z..,x,y..,energy\n");
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..n {
        let k = 2 + i % 3;
        let zs: Vec<u32> = (0..k).map(|a| [1, 6, 7, 8][(i + a) % 4]).collect();
        let mut pts: Vec<(f64, f64)> = Vec::new();
        while pts.len() < k {
            let p = (4.0 * next() - 2.0, 4.0 * next() - 2.0);
            if pts.iter().all(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() > 1.2) {
                pts.push(p);
            }
        }
        let e: f64 = -zs.iter().map(|&z| (z as f64).powf(1.5)).sum::<f64>() * 10.0 + next();
        let mut f = vec![format!("m{i}"), k.to_string()];
        f.extend(zs.iter().map(|z| z.to_string()));
        f.extend(pts.iter().flat_map(|p| [format!("{:.4}", p.0), format!("{:.4}", p.1)]));
        f.push(format!("{e:.4}"));
        s.push_str(&f.join(","));
        s.push('\n');
    }
    let path = dir.join("mols.csv");
    fs::write(&path, s).unwrap();
    path
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("SCATREG_CACHE")
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "exit {:?}: {err}", out.status.code());
    err
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

const SMALL: [&str; 8] = ["--grid-J", "5", "--angles-L", "4", "--allow-analytic-profiles", "--m-max", "12", "--out"];

#[test]
fn featurize_twice_hits_cache_with_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 12);
    let args: Vec<&str> = ["featurize", "--dataset", ds.to_str().unwrap(), "--channels", "dirac"]
        .into_iter()
        .chain(SMALL)
        .chain(["out"])
        .collect();
    let first = ok(&run(&args, dir.path()));
    assert!(first.contains("cache miss"));
    let snap: Vec<Vec<u8>> = ["features.bin", "features.json", "featurize.json"]
        .iter()
        .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    let second = ok(&run(&args, dir.path()));
    assert!(second.contains("cache hit"), "{second}");
    for (f, before) in ["features.bin", "features.json", "featurize.json"].iter().zip(&snap) {
        assert_eq!(&fs::read(dir.path().join("out").join(f)).unwrap(), before, "{f} changed");
    }
    let report = json(&dir.path().join("out/featurize.json"));
    assert_eq!(report["rows"], 12);
    // 1 + 2*5 + 2*(5*4/2)*(4/2+1) per channel
    assert_eq!(report["columns"], 1 + 10 + 2 * 10 * 3);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn changing_filter_params_invalidates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 6);
    let base = ["featurize", "--dataset", ds.to_str().unwrap(), "--dict", "wavelet", "--channels", "dirac"];
    let with = |l: &str| -> Vec<String> {
        base.iter()
            .map(|s| s.to_string())
            .chain(["--grid-J", "5", "--angles-L", l, "--out", "out"].map(String::from))
            .collect()
    };
    let a: Vec<String> = with("4");
    let b: Vec<String> = with("6");
    assert!(ok(&run(&strs(&a), dir.path())).contains("cache miss"));
    assert!(ok(&run(&strs(&b), dir.path())).contains("cache miss"));
    assert!(ok(&run(&strs(&a), dir.path())).contains("cache hit"));
    let entries = fs::read_dir(dir.path().join("out/cache")).unwrap().count();
    assert_eq!(entries, 4);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 6);
    fs::write(
        dir.path().join("run.toml"),
        format!(
            "dataset = {:?}\ndict = \"wavelet\"\nchannels = \"dirac\"\ngrid_j = 5\nangles_l = 4\nout = \"cfgout\"\n",
            ds.to_str().unwrap()
        ),
    )
    .unwrap();
    ok(&run(&["featurize", "--config", "run.toml", "--angles-L", "8"], dir.path()));
    let report = json(&dir.path().join("cfgout/featurize.json"));
    assert_eq!(report["features"]["bank"]["l"], 8);
    assert_eq!(report["features"]["kind"], "wavelet");
    assert_eq!(report["columns"], 11);

    fs::write(dir.path().join("run.json"), "{\"grid_j\": 5, \"channels\": \"dirac\", \"dict\": \"wavelet\"}").unwrap();
    ok(&run(
        &["featurize", "--config", "run.json", "--dataset", ds.to_str().unwrap(), "--out", "jsonout"],
        dir.path(),
    ));
    assert_eq!(json(&dir.path().join("jsonout/featurize.json"))["features"]["bank"]["j"], 5);
}

#[test]
fn cache_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 5);
    let out = Command::new(BIN)
        .args(["featurize", "--dataset", ds.to_str().unwrap(), "--dict", "fourier", "--channels", "dirac", "--grid-J", "5"])
        .current_dir(dir.path())
        .env("SCATREG_CACHE", dir.path().join("envcache"))
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(fs::read_dir(dir.path().join("envcache")).unwrap().count(), 2);
}

#[test]
fn cv_report_is_deterministic_and_table_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 30);
    let args = [
        "cv", "--dataset", ds.to_str().unwrap(), "--dict", "wavelet", "--channels", "core,valence", "--grid-J", "5", "--angles-L",
        "4", "--allow-analytic-profiles", "--bags", "3", "--seed", "7", "--out", "out",
    ];
    let first = run(&args, dir.path());
    ok(&first);
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("M_bar") && stdout.contains('±'), "{stdout}");
    let snap = fs::read(dir.path().join("out/cv.json")).unwrap();
    let csv = fs::read_to_string(dir.path().join("out/cv.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    assert_eq!(csv.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count(), 5);
    assert!(csv.contains("\nmean,") && csv.contains("\nstd,"));
    let report = json(&dir.path().join("out/cv.json"));
    assert_eq!(report["seeds"]["seed"], 7);
    assert_eq!(report["report"]["folds"].as_array().unwrap().len(), 5);
    assert!(report["report"]["m_bar_mean"].as_f64().unwrap() >= 1.0);

    ok(&run(&args, dir.path()));
    assert_eq!(fs::read(dir.path().join("out/cv.json")).unwrap(), snap);
}

#[test]
fn train_then_predict_reproduces_training_fit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 20);
    let common = [
        "--dataset", ds.to_str().unwrap(), "--dict", "wavelet", "--channels", "dirac", "--grid-J", "5", "--angles-L", "4", "--bags",
        "2", "--out", "out",
    ];
    let mut train = vec!["train"];
    train.extend(common);
    ok(&run(&train, dir.path()));
    let model = json(&dir.path().join("out/model.json"));
    assert_eq!(model["bags"].as_array().unwrap().len(), 2);
    let mut predict = vec!["predict", "--model", "out/model.json"];
    predict.extend(common);
    ok(&run(&predict, dir.path()));
    let csv = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with('m')).collect();
    assert_eq!(rows.len(), 20);
    let report = json(&dir.path().join("out/predict.json"));
    let trained = json(&dir.path().join("out/train.json"));
    let a = report["metrics"]["mae"].as_f64().unwrap();
    let b = trained["train_mae"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn validate_theorems_reports_two_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate-theorems", "--out", "out"], dir.path());
    ok(&out);
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = stdout["fourier"]["slope"].as_f64().unwrap();
    let w = stdout["wavelet"]["slope"].as_f64().unwrap();
    assert!(f >= 0.8, "fourier slope {f}");
    assert!(w >= 0.9, "wavelet slope {w}");
    let report = json(&dir.path().join("out/theorems.json"));
    assert!(report["summary"]["identity_max_rel_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(report["identity"].as_array().unwrap().len(), 20);
    let terms: Vec<u64> = report["wavelet"]["terms"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(terms, vec![7, 10, 13, 16, 19]);
}

#[test]
fn analyze_weights_writes_groups() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 24);
    ok(&run(
        &[
            "analyze-weights", "--dataset", ds.to_str().unwrap(), "--channels", "dirac", "--grid-J", "5", "--angles-L", "4", "--draws",
            "4", "--group-by", "order", "--out", "out",
        ],
        dir.path(),
    ));
    let csv = fs::read_to_string(dir.path().join("out/weights-order.csv")).unwrap();
    assert!(csv.contains("config_hash"));
    for f in ["weights-per-descriptor.csv", "scale-pairs.csv", "steps.csv", "analysis.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn krr_baseline_runs_on_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 20);
    fs::write(
        dir.path().join("krr.toml"),
        "[krr]\nsigmas = [64.0, 256.0]\nlambdas = [1e-6]\ninner_folds = 3\nreplicas = 2\nnoise_scale = 1.0\n",
    )
    .unwrap();
    ok(&run(&["krr-baseline", "--config", "krr.toml", "--dataset", ds.to_str().unwrap(), "--out", "out"], dir.path()));
    let report = json(&dir.path().join("out/krr.json"));
    assert!(report["report"]["mae_mean"].as_f64().unwrap().is_finite());
    assert!(report["report"]["m_bar_mean"].is_null());
}

#[test]
fn filterbank_check_writes_lp_sum() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(&["filterbank-check", "--grid-J", "6", "--angles-L", "8", "--out", "out"], dir.path()));
    let report = json(&dir.path().join("out/filterbank.json"));
    assert_eq!(report["grid"], 64);
    assert!(report["max_abs_dc"].as_f64().unwrap() < 1e-12);
    assert!((report["lp_max"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(fs::metadata(dir.path().join("out/filterbank.bin")).unwrap().len(), 64 * 64 * 8);
}

#[test]
fn user_errors_exit_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["cv", "--dataset", "missing.csv", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "invalid_parameter");

    let out = run(&["train", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "usage");

    fs::write(dir.path().join("bad.toml"), "grid_k = 3\n").unwrap();
    let out = run(&["featurize", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "parse");

    let out = run(&["filterbank-check", "--angles-L", "3", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["analyze-weights", "--group-by", "colour", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "unknown_key");

    let ds = write_dataset(dir.path(), 6);
    let out = run(&["cv", "--dataset", ds.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "missing_profile");
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("validate-theorems"));
}
