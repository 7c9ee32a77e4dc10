//! Responsible scores, Shapley values and the per-observation explanation
//! report that ties the pipeline together.
//!
//! A responsible score is one feature's share of the deviation,
//! `s_I = delta_I / delta`, where `delta = y_obs - y_ref` and `delta_I` is the
//! difference of that feature's main effect between the observation and the
//! MAP reference point. Shapley values (interventional, exact enumeration)
//! are computed on the same background for comparison.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anova::{decompose_deviation, draw_background, BackgroundInput, BackgroundSample, BackgroundSource, DeviationDecomposition, Order};
use crate::dataset::{mean_var, Dataset};
use crate::error::{check_len, Error, Result, StageExt};
use crate::inverse::{direct_search_map, MapResult, PosteriorObjective, ReferenceTarget, SearchBudget};
use crate::mixtures::{self, FeaturePriors, GaussianMixture1D, ModeInfo};
use crate::models::{residual_stats, PredictiveModel, ResidualStats};
use crate::{par, rng};

pub const REPORT_SCHEMA: u32 = 1;

/// Largest feature count for exact Shapley enumeration.
pub const MAX_SHAPLEY_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Mean,
    Mode,
}

/// Which label value the observation is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceChoice {
    /// The sample mean of the labels.
    Mean,
    /// The `index`-th mode of the label mixture, by density (0 = dominant).
    Mode { index: usize },
}

impl ReferenceChoice {
    pub fn kind(&self) -> ReferenceKind {
        match self {
            ReferenceChoice::Mean => ReferenceKind::Mean,
            ReferenceChoice::Mode { .. } => ReferenceKind::Mode,
        }
    }

    pub fn mode_index(&self) -> Option<usize> {
        match self {
            ReferenceChoice::Mean => None,
            ReferenceChoice::Mode { index } => Some(*index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibleScores {
    /// `None` when the deviation is degenerate.
    pub first_order: Option<Vec<f64>>,
    pub second_order: Option<Vec<Vec<f64>>>,
    pub residual_share: Option<f64>,
    pub reference_kind: ReferenceKind,
    pub mode_index: Option<usize>,
    pub degenerate: bool,
    /// `|total_delta|` below this flags the explanation as degenerate.
    pub threshold: f64,
}

impl ResponsibleScores {
    /// `sum(first) + sum(second) + residual_share`; 1 up to rounding.
    pub fn total(&self) -> Option<f64> {
        let mut terms = self.first_order.clone()?;
        if let Some(m) = &self.second_order {
            terms.extend(m.iter().flatten().copied());
        }
        terms.push(self.residual_share?);
        Some(par::pairwise_sum(&terms))
    }
}

/// Divides every term of `decomp` by its total deviation. When
/// `|total_delta| < degeneracy_tau * label_std` the scores are withheld and
/// the result is flagged degenerate; the raw terms stay in `decomp`.
pub fn responsible_scores(
    decomp: &DeviationDecomposition,
    degeneracy_tau: f64,
    label_std: f64,
    reference: ReferenceChoice,
) -> Result<ResponsibleScores> {
    if !(degeneracy_tau > 0.0 && degeneracy_tau.is_finite()) {
        return Err(Error::validation(format!(
            "degeneracy tau must be positive, got {degeneracy_tau}"
        )));
    }
    if !(label_std >= 0.0 && label_std.is_finite()) {
        return Err(Error::validation("label std must be finite and non-negative"));
    }
    let threshold = degeneracy_tau * label_std;
    let delta = decomp.total_delta;
    let degenerate = !(delta.abs() >= threshold) || delta == 0.0;
    let mut out = ResponsibleScores {
        first_order: None,
        second_order: None,
        residual_share: None,
        reference_kind: reference.kind(),
        mode_index: reference.mode_index(),
        degenerate,
        threshold,
    };
    if !degenerate {
        out.first_order = Some(decomp.first_order.iter().map(|v| v / delta).collect());
        out.second_order = decomp
            .second_order
            .as_ref()
            .map(|m| m.iter().map(|row| row.iter().map(|v| v / delta).collect()).collect());
        out.residual_share = Some(decomp.residual / delta);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub values: Vec<f64>,
    /// Mean prediction over the background, `v(empty set)`.
    pub base_value: f64,
    /// `predict(x_obs)`, `v(all features)`.
    pub prediction: f64,
    pub np_used: usize,
}

/// Interventional Shapley values by exact enumeration of all `2^d`
/// coalitions, each valued as the background-mean prediction with the
/// coalition's coordinates set to `x_obs`.
pub fn shapley_values(model: &PredictiveModel, bg: &BackgroundSample, x_obs: &[f64]) -> Result<ShapleyAttribution> {
    let d = model.n_features();
    check_len(d, x_obs.len())?;
    check_len(d, bg.n_features)?;
    if d > MAX_SHAPLEY_FEATURES {
        return Err(Error::validation(format!(
            "exact Shapley enumeration supports at most {MAX_SHAPLEY_FEATURES} features, got {d}"
        )));
    }
    if x_obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("observation has non-finite entries"));
    }
    let full = (1usize << d) - 1;
    let prediction = model.predict_unchecked(x_obs);
    let value = par::map_range(1 << d, |mask| {
        if mask == full {
            return prediction;
        }
        let preds: Vec<f64> = (0..bg.len())
            .map(|s| {
                let mut row = bg.row(s).to_vec();
                for (j, v) in row.iter_mut().enumerate() {
                    if mask & (1 << j) != 0 {
                        *v = x_obs[j];
                    }
                }
                model.predict_unchecked(&row)
            })
            .collect();
        par::mean(&preds)
    });
    // weight of a coalition of size s not containing I: s!(d-s-1)!/d!
    let weights: Vec<f64> = (0..d)
        .map(|s| 1.0 / (d as f64 * binomial(d - 1, s)))
        .collect();
    let values = par::map_range(d, |i| {
        let bit = 1 << i;
        let terms: Vec<f64> = (0..=full)
            .filter(|m| m & bit == 0)
            .map(|m| weights[(m as u32).count_ones() as usize] * (value[m | bit] - value[m]))
            .collect();
        par::pairwise_sum(&terms)
    });
    Ok(ShapleyAttribution {
        values,
        base_value: value[0],
        prediction,
        np_used: bg.len(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Mean-referenced scores and Shapley values, each normalized by its own sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapComparison {
    pub normalized_scores: Vec<f64>,
    pub normalized_shap: Vec<f64>,
    pub max_abs_diff: f64,
}

/// For a linear model explained against the mean, compares the per-feature
/// shares of the first-order deviation terms with the shares of the
/// Shapley values.
pub fn mean_based_scores_equal_shap_check(model: &PredictiveModel, report: &ExplanationReport) -> Result<ShapComparison> {
    if model.as_linear().is_none() {
        return Err(Error::validation(format!(
            "score/SHAP equality holds for linear models only, got {}",
            model.kind_name()
        )));
    }
    if report.reference_kind != ReferenceKind::Mean {
        return Err(Error::validation("report is not referenced to the mean"));
    }
    let normalize = |v: &[f64]| -> Vec<f64> {
        let s = par::pairwise_sum(v);
        v.iter().map(|x| x / s).collect()
    };
    let normalized_scores = normalize(&report.decomposition.first_order);
    let normalized_shap = normalize(&report.shap.values);
    let max_abs_diff = normalized_scores
        .iter()
        .zip(&normalized_shap)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ShapComparison {
        normalized_scores,
        normalized_shap,
        max_abs_diff,
    })
}

/// Prior used when searching the MAP features of the mean label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanReferencePrior {
    /// Each feature prior replaced by the Gaussian with the same mean and
    /// variance. Under a linear model the mean label is then explained by
    /// the feature means themselves.
    #[default]
    MomentMatched,
    /// The feature mixtures as given.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub reference: ReferenceChoice,
    /// Background size; `None` means `min(N, 2000)` for dataset resampling
    /// and 2000 for prior sampling.
    pub np: Option<usize>,
    pub background: BackgroundSource,
    pub order: Order,
    /// `None` derives the budget from the prior component counts.
    pub budget: Option<SearchBudget>,
    pub k_max: usize,
    pub degeneracy_tau: f64,
    pub mean_reference_prior: MeanReferencePrior,
    pub seed: u64,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            reference: ReferenceChoice::Mode { index: 0 },
            np: None,
            background: BackgroundSource::Dataset,
            order: Order::First,
            budget: None,
            k_max: mixtures::DEFAULT_K_MAX,
            degeneracy_tau: 0.05,
            mean_reference_prior: MeanReferencePrior::MomentMatched,
            seed: 0,
        }
    }
}

const DEFAULT_NP: usize = 2000;

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsEcho {
    pub seed: u64,
    pub gmm_seed: u64,
    pub search_seed: u64,
    pub background_seed: u64,
    pub np: usize,
    pub background: BackgroundSource,
    pub order: Order,
    pub budget: SearchBudget,
    pub k_max: usize,
    pub degeneracy_tau: f64,
    pub mean_reference_prior: MeanReferencePrior,
    pub model_kind: String,
    pub sigma_e_squared: f64,
    pub label_mean: f64,
    pub label_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub schema: u32,
    pub observation_id: usize,
    pub feature_names: Vec<String>,
    pub x_obs: Vec<f64>,
    pub y_obs: f64,
    pub reference_kind: ReferenceKind,
    pub mode_index: Option<usize>,
    pub y_ref: f64,
    /// MAP features of the reference label.
    pub x_ref: Vec<f64>,
    pub scores: ResponsibleScores,
    pub shap: ShapleyAttribution,
    /// `(y_obs - mean) / std` over the labels.
    pub z: f64,
    /// `(y_obs - mode) / sigma_m` for mode references.
    pub z_m: Option<f64>,
    pub sigma_m: Option<f64>,
    pub decomposition: DeviationDecomposition,
    pub map: MapResult,
    pub settings: SettingsEcho,
}

impl ExplanationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::validation(format!("unsupported report schema {}", r.schema)));
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The shared part of the pipeline: residual statistics, label mixture,
/// reference MAP point and background. Build once, then explain any number
/// of observations against the same reference.
#[derive(Debug, Clone)]
pub struct Explainer<'a> {
    model: &'a PredictiveModel,
    data: &'a Dataset,
    settings: ExplainSettings,
    stats: ResidualStats,
    label_mean: f64,
    label_std: f64,
    label_mixture: Option<GaussianMixture1D>,
    mode: Option<ModeInfo>,
    map: MapResult,
    background: BackgroundSample,
    echo: SettingsEcho,
}

impl<'a> Explainer<'a> {
    pub fn new(model: &'a PredictiveModel, priors: &FeaturePriors, data: &'a Dataset, settings: ExplainSettings) -> Result<Self> {
        model.validate()?;
        check_len(model.n_features(), data.n_features())?;
        check_len(model.n_features(), priors.n_features())?;
        if !(settings.degeneracy_tau > 0.0 && settings.degeneracy_tau.is_finite()) {
            return Err(Error::validation("degeneracy tau must be positive"));
        }
        if settings.np == Some(0) {
            return Err(Error::validation("background size must be at least 1"));
        }
        if let Some(b) = &settings.budget {
            b.validate()?;
        }

        let gmm_seed = settings.seed;
        let search_seed = rng::derive_seed(settings.seed, 2);
        let background_seed = rng::derive_seed(settings.seed, 3);

        let stats = residual_stats(model, data, None).stage("residual_stats")?;
        let (label_mean, label_var) = mean_var(data.labels());
        let label_std = label_var.sqrt();

        let (label_mixture, mode) = match settings.reference {
            ReferenceChoice::Mean => (None, None),
            ReferenceChoice::Mode { index } => {
                let (_, gmm) = mixtures::select_and_fit(data.labels(), settings.k_max, gmm_seed).stage("label_gmm")?;
                let modes = gmm.modes();
                let mode = *modes.get(index).ok_or_else(|| {
                    Error::validation(format!("mode {index} requested but the label mixture has {} modes", modes.len()))
                })?;
                (Some(gmm), Some(mode))
            }
        };

        let search_priors = match (settings.reference, settings.mean_reference_prior) {
            (ReferenceChoice::Mean, MeanReferencePrior::MomentMatched) => priors.moment_matched(),
            _ => priors.clone(),
        };
        let budget = settings.budget.unwrap_or_else(|| SearchBudget::default_for(&search_priors));
        let target = match mode {
            Some(mode) => ReferenceTarget::Mode { mode },
            None => ReferenceTarget::Mean { value: label_mean },
        };
        let map = {
            let obj = PosteriorObjective::new(model, &search_priors, target.value(), stats.likelihood_variance())
                .stage("reference_point")?;
            direct_search_map(&obj, &search_priors, &budget, search_seed).stage("reference_point")?
        };

        let (np, input) = match settings.background {
            BackgroundSource::Dataset => (settings.np.unwrap_or(data.len().min(DEFAULT_NP)), BackgroundInput::Dataset(data)),
            BackgroundSource::Prior => (settings.np.unwrap_or(DEFAULT_NP), BackgroundInput::Prior(priors)),
        };
        let background = draw_background(input, np, background_seed).stage("background")?;

        let echo = SettingsEcho {
            seed: settings.seed,
            gmm_seed,
            search_seed,
            background_seed,
            np,
            background: settings.background,
            order: settings.order,
            budget,
            k_max: settings.k_max,
            degeneracy_tau: settings.degeneracy_tau,
            mean_reference_prior: settings.mean_reference_prior,
            model_kind: model.kind_name().to_string(),
            sigma_e_squared: stats.likelihood_variance(),
            label_mean,
            label_std,
        };
        Ok(Self {
            model,
            data,
            settings,
            stats,
            label_mean,
            label_std,
            label_mixture,
            mode,
            map,
            background,
            echo,
        })
    }

    pub fn residual_stats(&self) -> &ResidualStats {
        &self.stats
    }

    pub fn label_mixture(&self) -> Option<&GaussianMixture1D> {
        self.label_mixture.as_ref()
    }

    pub fn reference_map(&self) -> &MapResult {
        &self.map
    }

    pub fn background(&self) -> &BackgroundSample {
        &self.background
    }

    pub fn y_ref(&self) -> f64 {
        self.mode.map_or(self.label_mean, |m| m.location)
    }

    pub fn explain(&self, index: usize) -> Result<ExplanationReport> {
        if index >= self.data.len() {
            return Err(Error::validation(format!(
                "observation index {index} out of range for {} rows",
                self.data.len()
            )));
        }
        let x_obs = self.data.row(index);
        let y_obs = self.data.labels()[index];
        let y_ref = self.y_ref();
        let decomposition = decompose_deviation(
            self.model,
            &self.background,
            x_obs,
            &self.map.map_point,
            y_obs,
            y_ref,
            self.settings.order,
        )
        .stage("decomposition")?;
        let scores = responsible_scores(&decomposition, self.settings.degeneracy_tau, self.label_std, self.settings.reference)
            .stage("scores")?;
        let shap = shapley_values(self.model, &self.background, x_obs).stage("shapley")?;
        let z = mixtures::z_score(y_obs, self.data.labels()).stage("z_score")?;
        let z_m = self
            .mode
            .as_ref()
            .map(|m| mixtures::mode_z_score(y_obs, m))
            .transpose()
            .stage("z_score")?;
        Ok(ExplanationReport {
            schema: REPORT_SCHEMA,
            observation_id: index,
            feature_names: self.data.feature_names().to_vec(),
            x_obs: x_obs.to_vec(),
            y_obs,
            reference_kind: self.settings.reference.kind(),
            mode_index: self.settings.reference.mode_index(),
            y_ref,
            x_ref: self.map.map_point.clone(),
            scores,
            shap,
            z,
            z_m,
            sigma_m: self.mode.map(|m| m.sigma_m),
            decomposition,
            map: self.map.clone(),
            settings: self.echo.clone(),
        })
    }
}

/// One-shot pipeline for a single observation.
pub fn explain(
    model: &PredictiveModel,
    priors: &FeaturePriors,
    data: &Dataset,
    index: usize,
    settings: &ExplainSettings,
) -> Result<ExplanationReport> {
    if index >= data.len() {
        return Err(Error::validation(format!(
            "observation index {index} out of range for {} rows",
            data.len()
        )));
    }
    Explainer::new(model, priors, data, settings.clone())?.explain(index)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat export: one row per feature per report.
pub fn write_reports_csv<W: Write>(reports: &[ExplanationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "observation_id",
        "feature",
        "reference_kind",
        "mode_index",
        "y_obs",
        "y_ref",
        "z",
        "z_m",
        "x_obs",
        "x_ref",
        "delta",
        "stderr",
        "score",
        "shap",
        "degenerate",
    ])?;
    for r in reports {
        for (j, name) in r.feature_names.iter().enumerate() {
            let kind = match r.reference_kind {
                ReferenceKind::Mean => "mean",
                ReferenceKind::Mode => "mode",
            };
            w.write_record([
                r.observation_id.to_string(),
                name.clone(),
                kind.to_string(),
                r.mode_index.map(|m| m.to_string()).unwrap_or_default(),
                r.y_obs.to_string(),
                r.y_ref.to_string(),
                r.z.to_string(),
                opt(r.z_m),
                r.x_obs[j].to_string(),
                r.x_ref[j].to_string(),
                r.decomposition.first_order[j].to_string(),
                r.decomposition.stderr_first_order[j].to_string(),
                opt(r.scores.first_order.as_ref().map(|s| s[j])),
                r.shap.values[j].to_string(),
                r.scores.degenerate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Comparison table: one row per report with z against z_m and each
/// feature's score next to its Shapley value.
pub fn write_comparison_csv<W: Write>(reports: &[ExplanationReport], writer: W) -> Result<()> {
    let names: &[String] = reports.first().map_or(&[], |r| &r.feature_names);
    if let Some(r) = reports.iter().find(|r| r.feature_names != names) {
        return Err(Error::validation(format!(
            "report for observation {} has different features",
            r.observation_id
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "observation_id",
        "reference_kind",
        "mode_index",
        "y_obs",
        "y_ref",
        "z",
        "z_m",
        "degenerate",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for n in names {
        header.push(format!("score_{n}"));
        header.push(format!("shap_{n}"));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![
            r.observation_id.to_string(),
            match r.reference_kind {
                ReferenceKind::Mean => "mean".into(),
                ReferenceKind::Mode => "mode".into(),
            },
            r.mode_index.map(|m| m.to_string()).unwrap_or_default(),
            r.y_obs.to_string(),
            r.y_ref.to_string(),
            r.z.to_string(),
            opt(r.z_m),
            r.scores.degenerate.to_string(),
        ];
        for j in 0..names.len() {
            rec.push(opt(r.scores.first_order.as_ref().map(|s| s[j])));
            rec.push(r.shap.values[j].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anova::BackgroundSource;
    use crate::mixtures::GaussianMixture1D;

    fn gaussian_bg(d: usize, np: usize, seed: u64) -> BackgroundSample {
        let p = FeaturePriors { per_feature: vec![GaussianMixture1D::gaussian(1.0, 2.0); d] };
        draw_background(BackgroundInput::Prior(&p), np, seed).unwrap()
    }

    fn decomposition(first: Vec<f64>, residual: f64, total: f64) -> DeviationDecomposition {
        let d = first.len();
        DeviationDecomposition {
            observation: vec![0.0; d],
            reference: vec![0.0; d],
            y_obs: total,
            y_ref: 0.0,
            total_delta: total,
            stderr_first_order: vec![0.0; d],
            first_order: first,
            second_order: None,
            stderr_second_order: None,
            residual,
            f0: 0.0,
            np_used: 1,
            order: Order::First,
            bg_source: BackgroundSource::Prior,
            bg_seed: 0,
        }
    }

    #[test]
    fn scores_divide_by_total() {
        let dd = decomposition(vec![-10.47, -9.64, -1.89], 0.1, -21.9);
        let s = responsible_scores(&dd, 0.05, 6.0, ReferenceChoice::Mode { index: 0 }).unwrap();
        let f = s.first_order.clone().unwrap();
        assert!((f[0] - 10.47 / 21.9).abs() < 1e-12);
        assert!(!s.degenerate);
        assert!((s.total().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(s.mode_index, Some(0));
    }

    #[test]
    fn small_deviation_is_degenerate() {
        let dd = decomposition(vec![0.1, -0.05], 0.0, 0.05);
        let s = responsible_scores(&dd, 0.05, 6.0, ReferenceChoice::Mean).unwrap();
        assert!(s.degenerate);
        assert!(s.first_order.is_none() && s.residual_share.is_none());
        assert!(responsible_scores(&dd, 0.0, 6.0, ReferenceChoice::Mean).is_err());
    }

    #[test]
    fn linear_shapley_closed_form() {
        let m = PredictiveModel::linear(0.5, vec![2.0, -1.0, 0.25]);
        let bg = gaussian_bg(3, 400, 1);
        let x = [3.0, -2.0, 7.0];
        let s = shapley_values(&m, &bg, &x).unwrap();
        let theta = &m.as_linear().unwrap().coefficients;
        for i in 0..3 {
            let expect = theta[i] * (x[i] - bg.column_mean(i));
            assert!((s.values[i] - expect).abs() < 1e-10, "{} vs {expect}", s.values[i]);
        }
        let sum: f64 = s.values.iter().sum();
        assert!((sum - (s.prediction - s.base_value)).abs() < 1e-10);
    }

    #[test]
    fn shapley_axioms() {
        let bg = gaussian_bg(3, 300, 2);
        let constant = PredictiveModel::linear(4.0, vec![0.0; 3]);
        let s = shapley_values(&constant, &bg, &[1.0, 2.0, 3.0]).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));

        // dummy: feature 2 unused
        let m = PredictiveModel::linear(0.0, vec![1.0, 3.0, 0.0]);
        let s = shapley_values(&m, &bg, &[1.0, 2.0, 30.0]).unwrap();
        assert_eq!(s.values[2], 0.0);

        // symmetry: f = x0 + x1 with an exchangeable background
        let sym_points: Vec<f64> = (0..200)
            .flat_map(|s| {
                let a = (s as f64 * 0.37).sin();
                let b = (s as f64 * 1.91).cos();
                [a, b, b, a]
            })
            .collect();
        let sym = BackgroundSample::new(sym_points, 2, BackgroundSource::Prior, 0).unwrap();
        let m = PredictiveModel::linear(0.0, vec![1.0, 1.0]);
        let s = shapley_values(&m, &sym, &[2.0, 2.0]).unwrap();
        assert!((s.values[0] - s.values[1]).abs() < 1e-12);
    }

    #[test]
    fn shapley_enumeration_bound() {
        let m = PredictiveModel::linear(0.0, vec![1.0; 21]);
        let bg = gaussian_bg(21, 1, 0);
        assert!(shapley_values(&m, &bg, &[0.0; 21]).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 0), 1.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(19, 9), 92378.0);
    }
}
