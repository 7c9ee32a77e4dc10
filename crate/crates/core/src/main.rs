//! `devexplain` command-line interface.
//!
//! Every command writes its machine-readable outputs under `--out`, prints a
//! short summary to stdout, echoes its fully resolved configuration to
//! `<command>.config.json` (replayable with `devexplain replay`), and appends
//! a timestamped line to the sidecar log `devexplain.log`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use devexplain::anova::{BackgroundSource, Order};
use devexplain::attribution::{
    write_comparison_csv, write_reports_csv, ExplainSettings, ExplanationReport, Explainer, MeanReferencePrior,
    ReferenceChoice,
};
use devexplain::dataset::{generate_synthetic, load_csv, mean_var, split, Dataset, SyntheticSpec};
use devexplain::error::{ErrorClass, StageExt};
use devexplain::inverse::SearchBudget;
use devexplain::mixtures::{self, FeaturePriors, GaussianMixture1D, ModeInfo};
use devexplain::models::{fit_gbt, fit_linear, residual_stats, staged_sse, GbtParams, PredictiveModel, ResidualStats};
use devexplain::svg::{grouped_bar_chart, BarGroup};
use devexplain::{par, rng, Error, Result};

const LOG_FILE: &str = "devexplain.log";

#[derive(Debug, Parser)]
#[command(name = "devexplain", version, about = "Explain label deviations from the mean or a mode")]
struct Cli {
    /// Global seed; falls back to DEVEXPLAIN_SEED, then 0.
    #[arg(long, global = true, env = "DEVEXPLAIN_SEED", default_value_t = 0)]
    seed: u64,

    /// Directory all outputs are written to (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic dataset from per-feature mixtures.
    Synth(SynthArgs),
    /// Fit a linear or gradient-boosted model.
    Fit(FitArgs),
    /// Fit a mixture to the labels and list its modes.
    Modes(ModesArgs),
    /// Explain observations against the mean or a label mode.
    Explain(ExplainArgs),
    /// Tabulate z vs z_m and scores vs Shapley values across reports.
    Compare(CompareArgs),
    /// Re-run a command from its config echo file.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct SynthArgs {
    /// JSON spec `{features: [{weights, means, stds}], noise_std}`; defaults
    /// to the built-in three-feature trimodal benchmark.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Extra row appended after generation, as `x0,x1,...,y`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    append_row: Option<Vec<f64>>,
    #[arg(long, default_value = "synthetic.csv")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelChoice {
    Linear,
    Gbt,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label: String,
    #[arg(long = "model", value_enum, default_value_t = ModelChoice::Linear)]
    model_kind: ModelChoice,
    /// Hold out the remainder for test R-squared; all rows are used when absent.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 300)]
    n_trees: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
    #[arg(long, default_value = "model.json")]
    output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ModesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label: String,
    #[arg(long, default_value_t = mixtures::DEFAULT_K_MAX)]
    k_max: usize,
    #[arg(long, default_value = "modes.json")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BackgroundChoice {
    Prior,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MeanPriorChoice {
    MomentMatched,
    Mixture,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["index", "range"])))]
#[command(group(clap::ArgGroup::new("reference").required(true).args(["mean", "mode"])))]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label: String,
    /// Model JSON written by `fit`.
    #[arg(long)]
    model_file: PathBuf,
    /// Observation (0-based row) to explain.
    #[arg(long)]
    index: Option<usize>,
    /// Half-open row range `A..B`.
    #[arg(long)]
    range: Option<String>,
    /// Reference: the label mean.
    #[arg(long)]
    mean: bool,
    /// Reference: label mode M (0 = dominant).
    #[arg(long, value_name = "M")]
    mode: Option<usize>,
    /// Background sample size.
    #[arg(long)]
    np: Option<usize>,
    /// Number of MAP search restarts (default from the run-count bound).
    #[arg(long)]
    runs: Option<usize>,
    /// Background source; `prior` when --priors-spec is given, else `dataset`.
    #[arg(long, value_enum)]
    background: Option<BackgroundChoice>,
    /// Known feature priors as `{features: [...]}` or `{per_feature: [...]}`
    /// JSON; fitted per column when absent.
    #[arg(long)]
    priors_spec: Option<PathBuf>,
    #[arg(long, default_value_t = mixtures::DEFAULT_K_MAX)]
    k_max: usize,
    /// ANOVA order: 1 or 2.
    #[arg(long, default_value_t = 1)]
    order: u8,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = MeanPriorChoice::MomentMatched)]
    mean_prior: MeanPriorChoice,
    /// Also write a bar chart per observation (mode score, mean score, SHAP share).
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct CompareArgs {
    /// Report JSON files written by `explain`.
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "comparison.csv")]
    output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ReplayArgs {
    config: PathBuf,
}

/// Contents of a `<command>.config.json` echo.
#[derive(Debug, Serialize, Deserialize)]
struct ConfigEcho {
    tool_version: String,
    seed: u64,
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| run(cli.seed, &cli.out, &cli.command));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            let code = match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Ingestion => 3,
                ErrorClass::Numerical => 4,
                ErrorClass::Internal => 5,
            };
            ExitCode::from(code)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(5)
        }
    }
}

fn run(seed: u64, out: &Path, command: &Command) -> Result<()> {
    if let Command::Replay(args) = command {
        let echo: ConfigEcho = serde_json::from_str(&fs::read_to_string(&args.config)?)?;
        if matches!(echo.command, Command::Replay(_)) {
            return Err(Error::validation("a config echo cannot replay another replay"));
        }
        return run(echo.seed, out, &echo.command);
    }
    fs::create_dir_all(out)?;
    let name = command_name(command);
    let echo = ConfigEcho {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        command: command.clone(),
    };
    fs::write(out.join(format!("{name}.config.json")), serde_json::to_string_pretty(&echo)?)?;
    let result = match command {
        Command::Synth(a) => cmd_synth(seed, out, a),
        Command::Fit(a) => cmd_fit(seed, out, a),
        Command::Modes(a) => cmd_modes(seed, out, a),
        Command::Explain(a) => cmd_explain(seed, out, a),
        Command::Compare(a) => cmd_compare(out, a),
        Command::Replay(_) => unreachable!("handled above"),
    };
    log_line(out, name, seed, &result);
    result
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Fit(_) => "fit",
        Command::Modes(_) => "modes",
        Command::Explain(_) => "explain",
        Command::Compare(_) => "compare",
        Command::Replay(_) => "replay",
    }
}

/// Timestamps live only here, never in the outputs themselves.
fn log_line(out: &Path, name: &str, seed: u64, result: &Result<()>) {
    use std::io::Write;
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let status = match result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(out.join(LOG_FILE)) {
        let _ = writeln!(f, "{ts}\t{name}\tseed={seed}\t{status}");
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_synth(seed: u64, out: &Path, a: &SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SyntheticSpec::load(p).stage("spec")?,
        None => SyntheticSpec::trimodal_benchmark(),
    };
    let mut data = generate_synthetic(&spec, a.n, seed).stage("synth")?;
    if let Some(row) = &a.append_row {
        let d = data.n_features();
        if row.len() != d + 1 {
            return Err(Error::validation(format!(
                "--append-row needs {} values (features then label), got {}",
                d + 1,
                row.len()
            )));
        }
        data = data.with_row(&row[..d], row[d]).stage("synth")?;
    }
    let path = out.join(&a.output);
    data.save_csv(&path)?;
    let (m, v) = mean_var(data.labels());
    println!("wrote {} rows x {} features to {}", data.len(), data.n_features(), path.display());
    println!("label mean {m:.4}, std {:.4}", v.sqrt());
    Ok(())
}

#[derive(Serialize)]
struct FitMetrics<'a> {
    model_kind: &'a str,
    n_train: usize,
    n_test: usize,
    stats: ResidualStats,
    likelihood_variance: f64,
    intercept: Option<f64>,
    coefficients: Option<&'a [f64]>,
    /// Training SSE after each boosting stage (gbt only).
    sse_by_stage: Option<Vec<f64>>,
}

fn cmd_fit(seed: u64, out: &Path, a: &FitArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.label).stage("load_data")?;
    let (train, test) = match a.train_fraction {
        Some(f) => {
            let (tr, te) = split(&data, f, seed).stage("split")?;
            (tr, Some(te))
        }
        None => (data, None),
    };
    let model = match a.model_kind {
        ModelChoice::Linear => fit_linear(&train),
        ModelChoice::Gbt => fit_gbt(
            &train,
            &GbtParams {
                n_trees: a.n_trees,
                max_depth: a.max_depth,
                learning_rate: a.learning_rate,
                min_samples_leaf: a.min_samples_leaf,
            },
        ),
    }
    .stage("fit")?;
    let stats = residual_stats(&model, &train, test.as_ref()).stage("residual_stats")?;
    let linear = model.as_linear();
    let metrics = FitMetrics {
        model_kind: model.kind_name(),
        n_train: train.len(),
        n_test: test.as_ref().map_or(0, Dataset::len),
        stats,
        likelihood_variance: stats.likelihood_variance(),
        intercept: linear.map(|m| m.intercept),
        coefficients: linear.map(|m| m.coefficients.as_slice()),
        sse_by_stage: staged_sse(&model, &train)?,
    };
    let model_path = out.join(&a.output);
    model.save(&model_path)?;
    let metrics_path = model_path.with_extension("metrics.json");
    write_json(&metrics_path, &metrics)?;
    println!("{} model on {} rows -> {}", model.kind_name(), train.len(), model_path.display());
    println!("sigma_e^2 {:.6e}, R^2 train {:.4}", stats.sigma_e_squared, stats.r_squared_train);
    if let Some(r2) = stats.r_squared_test {
        println!("R^2 test {r2:.4}");
    }
    if let Some(c) = metrics.coefficients {
        println!("coefficients {c:?}");
    }
    Ok(())
}

#[derive(Serialize)]
struct ModesOutput {
    n: usize,
    k: usize,
    label_mean: f64,
    label_std: f64,
    mixture: GaussianMixture1D,
    modes: Vec<ModeInfo>,
}

fn cmd_modes(seed: u64, out: &Path, a: &ModesArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.label).stage("load_data")?;
    let (k, mixture) = mixtures::select_and_fit(data.labels(), a.k_max, seed).stage("label_gmm")?;
    let modes = mixture.modes();
    let (label_mean, var) = mean_var(data.labels());
    let path = out.join(&a.output);
    write_json(
        &path,
        &ModesOutput {
            n: data.len(),
            k,
            label_mean,
            label_std: var.sqrt(),
            mixture,
            modes: modes.clone(),
        },
    )?;
    println!("{k}-component label mixture; {} mode(s) -> {}", modes.len(), path.display());
    for (i, m) in modes.iter().enumerate() {
        println!("  mode {i}: y* = {:.4}, density {:.5}, sigma_m {:.4}", m.location, m.density, m.sigma_m);
    }
    Ok(())
}

/// Priors from a file: either a synthetic spec (`features`) or a saved
/// `FeaturePriors` (`per_feature`).
#[derive(Deserialize)]
#[serde(untagged)]
enum PriorsFile {
    Fitted(FeaturePriors),
    Spec(SyntheticSpec),
}

fn load_priors(path: &Path) -> Result<FeaturePriors> {
    let parsed: PriorsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let priors = match parsed {
        PriorsFile::Fitted(p) => p,
        PriorsFile::Spec(s) => FeaturePriors::from_specs(&s.features)?,
    };
    for g in &priors.per_feature {
        g.validate()?;
    }
    Ok(priors)
}

fn parse_range(s: &str, n: usize) -> Result<std::ops::Range<usize>> {
    let bad = || Error::validation(format!("--range expects A..B, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b || b > n {
        return Err(Error::validation(format!("range {a}..{b} is empty or exceeds {n} rows")));
    }
    Ok(a..b)
}

fn cmd_explain(seed: u64, out: &Path, a: &ExplainArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.label).stage("load_data")?;
    let model = PredictiveModel::load(&a.model_file).stage("load_model")?;
    let indices: Vec<usize> = match (a.index, &a.range) {
        (Some(i), None) => {
            if i >= data.len() {
                return Err(Error::validation(format!("index {i} out of range for {} rows", data.len())));
            }
            vec![i]
        }
        (None, Some(r)) => parse_range(r, data.len())?.collect(),
        _ => return Err(Error::validation("give exactly one of --index or --range")),
    };
    let reference = match (a.mean, a.mode) {
        (true, None) => ReferenceChoice::Mean,
        (false, Some(m)) => ReferenceChoice::Mode { index: m },
        _ => return Err(Error::validation("give exactly one of --mean or --mode M")),
    };
    let priors = match &a.priors_spec {
        Some(p) => load_priors(p).stage("priors")?,
        None => mixtures::fit_priors(&data, a.k_max, rng::derive_seed(seed, 4)).stage("priors")?,
    };
    let background = match a.background {
        Some(BackgroundChoice::Prior) => BackgroundSource::Prior,
        Some(BackgroundChoice::Dataset) => BackgroundSource::Dataset,
        None if a.priors_spec.is_some() => BackgroundSource::Prior,
        None => BackgroundSource::Dataset,
    };
    let budget = match a.runs {
        Some(0) => return Err(Error::validation("--runs must be at least 1")),
        Some(n) => Some(SearchBudget::default_for(&priors).with_runs(n)),
        None => None,
    };
    let settings = ExplainSettings {
        reference,
        np: a.np,
        background,
        order: Order::try_from(a.order)?,
        budget,
        k_max: a.k_max,
        degeneracy_tau: a.tau,
        mean_reference_prior: match a.mean_prior {
            MeanPriorChoice::MomentMatched => MeanReferencePrior::MomentMatched,
            MeanPriorChoice::Mixture => MeanReferencePrior::Mixture,
        },
        seed,
    };
    let explainer = Explainer::new(&model, &priors, &data, settings.clone())?;
    let reports: Vec<ExplanationReport> = par::map_range(indices.len(), |k| explainer.explain(indices[k]))
        .into_iter()
        .collect::<Result<_>>()?;

    // the chart shows both references side by side
    let other = if a.svg {
        let other_ref = match reference {
            ReferenceChoice::Mean => ReferenceChoice::Mode { index: 0 },
            ReferenceChoice::Mode { .. } => ReferenceChoice::Mean,
        };
        Some(Explainer::new(&model, &priors, &data, ExplainSettings { reference: other_ref, ..settings })?)
    } else {
        None
    };

    for r in &reports {
        r.save(out.join(format!("report_{}.json", r.observation_id)))?;
        if let Some(other) = &other {
            let o = other.explain(r.observation_id)?;
            let (mode_r, mean_r) = match reference {
                ReferenceChoice::Mean => (&o, r),
                ReferenceChoice::Mode { .. } => (r, &o),
            };
            fs::write(out.join(format!("report_{}.svg", r.observation_id)), chart(mode_r, mean_r))?;
        }
    }
    let csv_path = out.join("explanations.csv");
    write_reports_csv(&reports, fs::File::create(&csv_path)?)?;

    println!(
        "explained {} observation(s) against {} (y_ref = {:.4}); x_ref = {:?}",
        reports.len(),
        match reference {
            ReferenceChoice::Mean => "the mean".to_string(),
            ReferenceChoice::Mode { index } => format!("mode {index}"),
        },
        explainer.y_ref(),
        explainer.reference_map().map_point
    );
    for r in &reports {
        let scores = match &r.scores.first_order {
            Some(s) => format!("{s:.3?}"),
            None => "degenerate".into(),
        };
        println!("  row {}: y = {:.4}, z = {:.3}, scores {scores}", r.observation_id, r.y_obs, r.z);
    }
    println!("reports and {} written to {}", csv_path.display(), out.display());
    Ok(())
}

fn shap_share(r: &ExplanationReport) -> Vec<Option<f64>> {
    let total: f64 = r.shap.values.iter().sum();
    r.shap
        .values
        .iter()
        .map(|v| if total != 0.0 { Some(v / total) } else { None })
        .collect()
}

fn chart(mode_r: &ExplanationReport, mean_r: &ExplanationReport) -> String {
    let share = shap_share(mode_r);
    let groups: Vec<BarGroup> = mode_r
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| BarGroup {
            label: name.clone(),
            values: vec![
                mode_r.scores.first_order.as_ref().map(|s| s[j]),
                mean_r.scores.first_order.as_ref().map(|s| s[j]),
                share[j],
            ],
        })
        .collect();
    grouped_bar_chart(
        &format!("observation {} (y = {:.3})", mode_r.observation_id, mode_r.y_obs),
        &["mode score", "mean score", "SHAP share"],
        &groups,
    )
}

fn cmd_compare(out: &Path, a: &CompareArgs) -> Result<()> {
    let reports: Vec<ExplanationReport> = a
        .reports
        .iter()
        .map(|p| ExplanationReport::load(p).stage("load_report"))
        .collect::<Result<_>>()?;
    let path = out.join(&a.output);
    write_comparison_csv(&reports, fs::File::create(&path)?)?;
    println!("compared {} report(s) -> {}", reports.len(), path.display());
    for r in &reports {
        let zm = r.z_m.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("  row {}: z = {:.3}, z_m = {zm}, degenerate = {}", r.observation_id, r.z, r.scores.degenerate);
    }
    Ok(())
}
