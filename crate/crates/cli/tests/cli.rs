use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geoeval_cli::report::{load_report, read_versioned, RunReport};

const BIN: &str = env!("CARGO_BIN_EXE_geoeval");

const FAST: &str = r#"
[synth]
n_samples = 700
extent_km = [500.0, 500.0]
n_noise = 6
n_redundant = 2

[gbrt]
n_trees = 40
max_depth = 3

[featsel.stability]
iterations = 12
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn geoeval(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("GEOEVAL_OUTPUT_DIR").output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_fast(dir: &Path, extra: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("seed = 5\n{extra}\n{FAST}"));
    let out_dir = dir.join("out");
    let out = geoeval(&["run", "--config", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    out_dir
}

fn svg_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    files.sort();
    files
}

#[test]
fn invalid_fold_count_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("seed = 1\n{FAST}"));
    let out = geoeval(&["run", "--config", cfg.to_str().unwrap(), "--k", "1", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`k`"), "{}", stderr(&out));
}

#[test]
fn missing_seed_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FAST);
    let out = geoeval(&["diagnose", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"));
}

#[test]
fn missing_input_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\ntargets = [\"SOC\"]\n[input]\npath = \"nowhere.csv\"\n");
    let out = geoeval(&["run", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn run_writes_outputs_and_valid_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_fast(dir.path(), "");
    for name in ["report.json", "model.json", "timing.json", "metrics.csv", "truth.json", "config.echo.toml"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let plots = svg_files(&out.join("plots"));
    assert_eq!(plots.len(), 4, "{plots:?}");
    for p in &plots {
        let text = std::fs::read_to_string(p).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }

    let report = load_report(&out.join("report.json")).unwrap();
    let t = &report.targets[0];
    assert_eq!(t.oof_predictions.len(), t.n_development);
    assert_eq!(t.test_predictions.len(), t.n_test);
    assert!(report.leakage.as_ref().is_some_and(|l| l.min_km > 0.0));

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("target,scope,dimension,group,rmse,mae,ccc_log1p,d1.5,rpiq,bias,nrmse_minmax"));
    assert!(csv.lines().any(|l| l.contains(",oof-fold-mean,")));

    let replot = dir.path().join("replot");
    let again = geoeval(&["plots", "--report", out.join("report.json").to_str().unwrap(), "--output", replot.to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(svg_files(&replot.join("plots")).len(), 4);
}

#[test]
fn missing_stability_section_skips_its_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_fast(dir.path(), "select_features = false");
    let plots = svg_files(&out.join("plots"));
    assert_eq!(plots.len(), 3, "{plots:?}");
    assert!(plots.iter().all(|p| !p.to_string_lossy().contains("stability")));
}

#[test]
fn newer_major_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_fast(dir.path(), "select_features = false");
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let bumped = text.replacen("\"schema_version\": \"1.0\"", "\"schema_version\": \"2.0\"", 1);
    assert_ne!(bumped, text);
    let err = read_versioned::<RunReport>(&bumped).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(read_versioned::<RunReport>(&text).is_ok());
}

#[test]
fn synth_then_run_on_csv_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = geoeval(&["synth", "--seed", "9", "--n-samples", "700", "--output", data_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(data_dir.join("truth.json").is_file());

    let body = "seed = 9\ntargets = [\"SOC\"]\nselect_features = false\n[input]\npath = \"data/data.csv\"\n[gbrt]\nn_trees = 40\nmax_depth = 3\n";
    let cfg = write_config(dir.path(), body);
    let run_dir = dir.path().join("run");
    let out = geoeval(&["run", "--config", cfg.to_str().unwrap(), "--output", run_dir.to_str().unwrap(), "--no-plots"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!run_dir.join("plots").exists());

    let eval_dir = dir.path().join("eval");
    let out = geoeval(&[
        "evaluate",
        "--model",
        run_dir.join("model.json").to_str().unwrap(),
        "--data",
        data_dir.join("data.csv").to_str().unwrap(),
        "--output",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("evaluation.json")).unwrap()).unwrap();
    let report = load_report(&run_dir.join("report.json")).unwrap();
    assert_eq!(eval["model_run_id"], serde_json::Value::String(report.run_id));
    assert_eq!(eval["targets"][0]["target"], "SOC");
}

fn compare_cv(dir: &Path, body: &str) -> serde_json::Value {
    let cfg = write_config(dir, body);
    let out = geoeval(&["compare-cv", "--config", cfg.to_str().unwrap(), "--output", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    serde_json::from_str(&std::fs::read_to_string(dir.join("compare_cv.json")).unwrap()).unwrap()
}

#[test]
fn compare_cv_tags_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let v = compare_cv(dir.path(), &format!("seed = 3\nselect_features = false\ntest_fraction = 0.0\n{FAST}"));
    assert_eq!(v["modes"], serde_json::json!(["blocked", "random"]));
    let t = &v["targets"][0];
    assert_eq!(t["blocked"]["scope"], "blocked");
    assert_eq!(t["random"]["scope"], "random");
}

#[test]
fn white_noise_shows_no_cv_gap() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("seed = 4\nselect_features = false\ntest_fraction = 0.0\n{FAST}")
        .replace("[synth]\n", "[synth]\nfield_kind = \"white\"\n");
    let v = compare_cv(dir.path(), &body);
    let t = &v["targets"][0];
    let random = t["random"]["rmse"].as_f64().unwrap();
    let delta = t["delta"]["rmse"].as_f64().unwrap();
    assert!(delta.abs() < 0.05 * random, "delta {delta} vs random rmse {random}");
}
