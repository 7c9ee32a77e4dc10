//! Drives the `devexplain` binary end to end in temporary directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use devexplain::attribution::ExplanationReport;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/river_fixture.csv")
}

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devexplain"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("DEVEXPLAIN_SEED")
        .output()
        .expect("spawn devexplain")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cli(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Fits the linear model on the fixture and returns its path.
fn fit_fixture(out: &Path) -> PathBuf {
    ok(out, &["fit", "--data", s(&fixture()), "--label", "njr", "--model", "linear"]);
    out.join("model.json")
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(tmp.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(cli(tmp.path(), &["explain", "--index"]).status.code(), Some(2));
}

#[test]
fn invalid_spec_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    fs::write(
        &spec,
        r#"{"features": [{"weights": [0.5, 0.6], "means": [0, 1], "stds": [1, 1]}]}"#,
    )
    .unwrap();
    let o = cli(tmp.path(), &["synth", "--spec", s(&spec), "--n", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&spec, r#"{"features": [{"weights": [1], "means": [0], "stds": [-1]}]}"#).unwrap();
    assert_eq!(cli(tmp.path(), &["synth", "--spec", s(&spec), "--n", "10"]).status.code(), Some(2));
}

#[test]
fn missing_label_column_is_an_ingestion_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(tmp.path(), &["fit", "--data", s(&fixture()), "--label", "nope"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn missing_data_file_is_an_ingestion_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.csv");
    assert_eq!(cli(tmp.path(), &["modes", "--data", s(&missing)]).status.code(), Some(3));
}

#[test]
fn non_numeric_cell_is_an_ingestion_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, "a,y\n1,2\nfoo,3\n2,4\n").unwrap();
    assert_eq!(cli(tmp.path(), &["fit", "--data", s(&data)]).status.code(), Some(3));
}

#[test]
fn collinear_design_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    fs::write(&data, "a,b,y\n1,2,1\n2,4,2\n3,6,2\n4,8,5\n").unwrap();
    assert_eq!(cli(tmp.path(), &["fit", "--data", s(&data)]).status.code(), Some(4));
}

#[test]
fn out_of_range_index_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_fixture(tmp.path());
    let o = cli(
        tmp.path(),
        &["explain", "--data", s(&fixture()), "--label", "njr", "--model-file", s(&model), "--index", "20", "--mean"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_without_reports_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["compare"]);
    let csv = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("observation_id,"));
}

#[test]
fn synth_appends_row_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--seed", "5", "synth", "--n", "50", "--append-row=-2.5,-1.7,-2.0,-6.2"]);
    let text = fs::read_to_string(tmp.path().join("synthetic.csv")).unwrap();
    assert_eq!(text.lines().count(), 52);
    assert!(text.trim_end().ends_with("-2.5,-1.7,-2,-6.2"));
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("synth.config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["command"]["command"], "synth");
    assert!(fs::read_to_string(tmp.path().join("devexplain.log")).unwrap().contains("synth"));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_devexplain"))
        .args(["--out", s(tmp.path()), "synth", "--n", "5"])
        .env("DEVEXPLAIN_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success());
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("synth.config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 11);
}

#[test]
fn explain_range_writes_one_report_per_row() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_fixture(tmp.path());
    let stdout = ok(
        tmp.path(),
        &["explain", "--data", s(&fixture()), "--label", "njr", "--model-file", s(&model), "--range", "5..15", "--mode", "0", "--svg"],
    );
    assert!(stdout.contains("explained 10 observation(s)"));
    for i in 5..15 {
        let r = ExplanationReport::load(tmp.path().join(format!("report_{i}.json"))).unwrap();
        assert_eq!(r.observation_id, i);
        if let Some(total) = r.scores.total() {
            assert!((total - 1.0).abs() < 1e-10);
        }
        let svg = fs::read_to_string(tmp.path().join(format!("report_{i}.svg"))).unwrap();
        assert!(svg.contains("mode score") && svg.contains("SHAP share"));
    }
    assert!(!tmp.path().join("report_4.json").exists());
    let csv = fs::read_to_string(tmp.path().join("explanations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 3);
}

#[test]
fn replay_reproduces_reports_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fit_fixture(tmp.path());
    let first = tmp.path().join("first");
    ok(
        &first,
        &["--seed", "3", "explain", "--data", s(&fixture()), "--label", "njr", "--model-file", s(&model), "--index", "13", "--mode", "0"],
    );
    let second = tmp.path().join("second");
    ok(&second, &["replay", s(&first.join("explain.config.json"))]);
    let a = fs::read(first.join("report_13.json")).unwrap();
    let b = fs::read(second.join("report_13.json")).unwrap();
    assert_eq!(a, b);
    let r = ExplanationReport::load(second.join("report_13.json")).unwrap();
    assert_eq!(r.settings.seed, 3);
}

#[test]
fn modes_and_gbt_fit_on_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["modes", "--data", s(&fixture()), "--label", "njr"]);
    assert!(stdout.contains("mode 0"));
    let modes: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("modes.json")).unwrap()).unwrap();
    assert!(modes["modes"].as_array().is_some_and(|m| !m.is_empty()));

    ok(tmp.path(), &["fit", "--data", s(&fixture()), "--label", "njr", "--model", "gbt", "--n-trees", "20"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("model.metrics.json")).unwrap()).unwrap();
    let sse = metrics["sse_by_stage"].as_array().unwrap();
    assert_eq!(sse.len(), 20);
    assert!(sse.windows(2).all(|w| w[1].as_f64() <= w[0].as_f64()));
}

#[test]
fn synthetic_workflow_with_known_priors() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/trimodal_spec.json");
    ok(tmp.path(), &["synth", "--spec", s(&spec), "--n", "2000", "--append-row=-2.5,-1.7,-2.0,-6.2"]);
    let data = tmp.path().join("synthetic.csv");
    ok(tmp.path(), &["fit", "--data", s(&data)]);
    let model = tmp.path().join("model.json");
    ok(
        tmp.path(),
        &["explain", "--data", s(&data), "--model-file", s(&model), "--index", "2000", "--mode", "0", "--priors-spec", s(&spec)],
    );
    let r = ExplanationReport::load(tmp.path().join("report_2000.json")).unwrap();
    assert_eq!(r.y_obs, -6.2);
    assert_eq!(r.settings.background, devexplain::anova::BackgroundSource::Prior);
    assert!(!r.scores.degenerate);
    let z_m = r.z_m.unwrap();
    assert!(z_m < 0.0);
    assert!((z_m - (r.y_obs - r.y_ref) / r.sigma_m.unwrap()).abs() < 1e-12);
    let scores = r.scores.first_order.unwrap();
    assert!(scores[2] < scores[0] && scores[2] < scores[1]);
}
