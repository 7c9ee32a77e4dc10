//! Monte Carlo ANOVA decomposition of a fitted model and the per-feature
//! deviation terms between an observation and a reference point.
//!
//! With a background sample `x_1..x_NP` the constant term is
//! `f0 = mean f(x_s)`, the main effect of feature `I` at value `v` is
//! `f_I(v) = mean f(x_s with I := v) - f0`, and the pairwise interaction is
//! `f_IJ(v, w) = mean f(x_s with I := v, J := w) - f_I(v) - f_J(w) - f0`.
//! Every estimate reuses the same background rows (common random numbers),
//! which makes the linear case exact and additive interactions vanish.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_len, Error, Result};
use crate::mixtures::FeaturePriors;
use crate::models::PredictiveModel;
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundSource {
    /// Each column drawn independently from its prior mixture.
    Prior,
    /// Dataset rows drawn with replacement.
    Dataset,
}

/// Where background rows come from.
#[derive(Debug, Clone, Copy)]
pub enum BackgroundInput<'a> {
    Prior(&'a FeaturePriors),
    Dataset(&'a Dataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSample {
    /// Row-major `NP x d` matrix.
    pub points: Vec<f64>,
    pub n_features: usize,
    pub source: BackgroundSource,
    pub seed: u64,
}

impl BackgroundSample {
    pub fn new(points: Vec<f64>, n_features: usize, source: BackgroundSource, seed: u64) -> Result<Self> {
        if n_features == 0 || points.is_empty() || !points.len().is_multiple_of(n_features) {
            return Err(Error::validation(format!(
                "background of {} values does not form rows of {n_features}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("background contains non-finite values"));
        }
        Ok(Self {
            points,
            n_features,
            source,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.points[s * self.n_features..(s + 1) * self.n_features]
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        let col: Vec<f64> = (0..self.len()).map(|s| self.row(s)[j]).collect();
        par::mean(&col)
    }
}

pub fn draw_background(input: BackgroundInput<'_>, np: usize, seed: u64) -> Result<BackgroundSample> {
    if np == 0 {
        return Err(Error::validation("background size must be at least 1"));
    }
    match input {
        BackgroundInput::Prior(priors) => BackgroundSample::new(
            priors.sample_rows(np, seed),
            priors.n_features(),
            BackgroundSource::Prior,
            seed,
        ),
        BackgroundInput::Dataset(data) => {
            if data.is_empty() {
                return Err(Error::EmptyInput("cannot resample an empty dataset".into()));
            }
            let mut r = rng::stream(seed, 0);
            let mut points = Vec::with_capacity(np * data.n_features());
            for _ in 0..np {
                points.extend_from_slice(data.row(r.random_range(0..data.len())));
            }
            BackgroundSample::new(points, data.n_features(), BackgroundSource::Dataset, seed)
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub stderr: f64,
}

const ROW_CHUNK: usize = 512;

/// Background predictions cached for repeated effect evaluations.
pub(crate) struct EffectEngine<'a> {
    model: &'a PredictiveModel,
    bg: &'a BackgroundSample,
    base: Vec<f64>,
    f0: f64,
}

impl<'a> EffectEngine<'a> {
    pub(crate) fn new(model: &'a PredictiveModel, bg: &'a BackgroundSample) -> Result<Self> {
        check_len(model.n_features(), bg.n_features)?;
        let mut engine = Self {
            model,
            bg,
            base: Vec::new(),
            f0: 0.0,
        };
        engine.base = engine.pinned(&[]);
        engine.f0 = par::mean(&engine.base);
        Ok(engine)
    }

    pub(crate) fn f0(&self) -> f64 {
        self.f0
    }

    pub(crate) fn np(&self) -> usize {
        self.bg.len()
    }

    /// Predictions on every background row with the given coordinates pinned.
    pub(crate) fn pinned(&self, pins: &[(usize, f64)]) -> Vec<f64> {
        let d = self.bg.n_features;
        par::map_chunks(self.bg.len(), ROW_CHUNK, |rows| {
            let mut buf = vec![0.0; d];
            rows.map(|s| {
                buf.copy_from_slice(self.bg.row(s));
                for &(j, v) in pins {
                    buf[j] = v;
                }
                self.model.predict_unchecked(&buf)
            })
            .collect::<Vec<f64>>()
        })
        .concat()
    }

    /// Main effect plus the pinned predictions, kept for interaction terms.
    fn first(&self, i: usize, v: f64) -> (Effect, Vec<f64>) {
        let p = self.pinned(&[(i, v)]);
        let diffs: Vec<f64> = p.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        let estimate = par::mean(&p) - self.f0;
        (
            Effect {
                estimate,
                stderr: stderr_of(&diffs),
            },
            p,
        )
    }

    fn second(&self, (i, vi, pi): (usize, f64, &[f64]), (j, vj, pj): (usize, f64, &[f64])) -> Effect {
        let pij = self.pinned(&[(i, vi), (j, vj)]);
        let summands: Vec<f64> = (0..pij.len())
            .map(|s| pij[s] - pi[s] - pj[s] + self.base[s])
            .collect();
        let estimate = par::mean(&pij) - par::mean(pi) - par::mean(pj) + self.f0;
        Effect {
            estimate,
            stderr: stderr_of(&summands),
        }
    }
}

fn stderr_of(summands: &[f64]) -> f64 {
    let (_, sd) = par::mean_std(summands);
    sd / (summands.len() as f64).sqrt()
}

fn check_feature(i: usize, d: usize) -> Result<()> {
    if i >= d {
        return Err(Error::validation(format!(
            "feature index {i} out of range for {d} features"
        )));
    }
    Ok(())
}

/// Mean prediction over the background.
pub fn f_zero(model: &PredictiveModel, bg: &BackgroundSample) -> Result<f64> {
    Ok(EffectEngine::new(model, bg)?.f0())
}

pub fn first_order_effect(model: &PredictiveModel, bg: &BackgroundSample, i: usize, v: f64) -> Result<Effect> {
    check_feature(i, model.n_features())?;
    if !v.is_finite() {
        return Err(Error::validation("pinned value must be finite"));
    }
    Ok(EffectEngine::new(model, bg)?.first(i, v).0)
}

/// Pairwise interaction; requires `i != j`.
pub fn second_order_effect(
    model: &PredictiveModel,
    bg: &BackgroundSample,
    i: usize,
    j: usize,
    vi: f64,
    vj: f64,
) -> Result<Effect> {
    let d = model.n_features();
    check_feature(i, d)?;
    check_feature(j, d)?;
    if i == j {
        return Err(Error::validation(format!(
            "interaction needs two distinct features, got {i} twice"
        )));
    }
    if !(vi.is_finite() && vj.is_finite()) {
        return Err(Error::validation("pinned values must be finite"));
    }
    let engine = EffectEngine::new(model, bg)?;
    let (_, pi) = engine.first(i, vi);
    let (_, pj) = engine.first(j, vj);
    Ok(engine.second((i, vi, &pi), (j, vj, &pj)))
}

/// Highest ANOVA order computed explicitly; higher orders go to the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Order {
    First,
    Second,
}

impl TryFrom<u8> for Order {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::validation(format!("order must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Order> for u8 {
    fn from(o: Order) -> u8 {
        match o {
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationDecomposition {
    pub observation: Vec<f64>,
    pub reference: Vec<f64>,
    pub y_obs: f64,
    pub y_ref: f64,
    pub total_delta: f64,
    pub first_order: Vec<f64>,
    pub stderr_first_order: Vec<f64>,
    /// `d x d`, filled above the diagonal only.
    pub second_order: Option<Vec<Vec<f64>>>,
    pub stderr_second_order: Option<Vec<Vec<f64>>>,
    /// Noise plus every order not computed explicitly.
    pub residual: f64,
    pub f0: f64,
    pub np_used: usize,
    pub order: Order,
    pub bg_source: BackgroundSource,
    pub bg_seed: u64,
}

impl DeviationDecomposition {
    /// Sum of the explicit terms, in the order used to build the residual.
    pub fn explained(&self) -> f64 {
        let mut terms = self.first_order.clone();
        if let Some(m) = &self.second_order {
            terms.extend(m.iter().flatten().copied());
        }
        par::pairwise_sum(&terms)
    }

    pub fn n_features(&self) -> usize {
        self.first_order.len()
    }
}

/// Splits `y_obs - y_ref` into `f_I(x_obs_I) - f_I(x_ref_I)` per feature
/// (and the analogous interaction differences for `Order::Second`); the
/// residual absorbs what is left.
pub fn decompose_deviation(
    model: &PredictiveModel,
    bg: &BackgroundSample,
    x_obs: &[f64],
    x_ref: &[f64],
    y_obs: f64,
    y_ref: f64,
    order: Order,
) -> Result<DeviationDecomposition> {
    let d = model.n_features();
    check_len(d, x_obs.len())?;
    check_len(d, x_ref.len())?;
    if x_obs.iter().chain(x_ref).any(|v| !v.is_finite()) || !y_obs.is_finite() || !y_ref.is_finite() {
        return Err(Error::validation("decomposition inputs must be finite"));
    }
    let engine = EffectEngine::new(model, bg)?;

    let mains = par::map_range(d, |i| (engine.first(i, x_obs[i]), engine.first(i, x_ref[i])));
    let first_order: Vec<f64> = mains
        .iter()
        .map(|((o, _), (r, _))| o.estimate - r.estimate)
        .collect();
    let stderr_first_order: Vec<f64> = mains
        .iter()
        .map(|((o, _), (r, _))| o.stderr.hypot(r.stderr))
        .collect();

    let (second_order, stderr_second_order) = match order {
        Order::First => (None, None),
        Order::Second => {
            let pairs: Vec<(usize, usize)> = (0..d)
                .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
                .collect();
            let terms = par::map_range(pairs.len(), |k| {
                let (i, j) = pairs[k];
                let ((_, po_i), (_, pr_i)) = &mains[i];
                let ((_, po_j), (_, pr_j)) = &mains[j];
                let o = engine.second((i, x_obs[i], po_i), (j, x_obs[j], po_j));
                let r = engine.second((i, x_ref[i], pr_i), (j, x_ref[j], pr_j));
                (o.estimate - r.estimate, o.stderr.hypot(r.stderr))
            });
            let mut est = vec![vec![0.0; d]; d];
            let mut se = vec![vec![0.0; d]; d];
            for (&(i, j), (e, s)) in pairs.iter().zip(terms) {
                est[i][j] = e;
                se[i][j] = s;
            }
            (Some(est), Some(se))
        }
    };

    let mut out = DeviationDecomposition {
        observation: x_obs.to_vec(),
        reference: x_ref.to_vec(),
        y_obs,
        y_ref,
        total_delta: y_obs - y_ref,
        first_order,
        stderr_first_order,
        second_order,
        stderr_second_order,
        residual: 0.0,
        f0: engine.f0(),
        np_used: engine.np(),
        order,
        bg_source: bg.source,
        bg_seed: bg.seed,
    };
    out.residual = out.total_delta - out.explained();
    Ok(out)
}
