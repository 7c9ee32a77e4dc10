//! Bayesian inversion of the forward model: the log-posterior over features
//! for a target label, and its MAP point found by multistart direct search.
//!
//! The search draws starting points from the prior, climbs from each with a
//! local optimizer, merges endpoints that land within a small radius of each
//! other, and returns the best distinct local optimum. The number of starts
//! needed so that every basin is hit with high probability follows
//! `n >= (ln beta - ln K) / ln(1 - p)` for `K` basins each reached with
//! probability at least `p`, allowing failure probability `beta`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mixtures::{FeaturePriors, ModeInfo};
use crate::models::PredictiveModel;
use crate::optim::{self, MinimizeSettings};
use crate::{par, rng};

/// `ln p(x | y_target) + ln p(x)` up to an additive constant.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorObjective<'a> {
    pub model: &'a PredictiveModel,
    pub priors: &'a FeaturePriors,
    pub y_target: f64,
    pub sigma_e_squared: f64,
}

impl<'a> PosteriorObjective<'a> {
    pub fn new(
        model: &'a PredictiveModel,
        priors: &'a FeaturePriors,
        y_target: f64,
        sigma_e_squared: f64,
    ) -> Result<Self> {
        check_len(model.n_features(), priors.n_features())?;
        if !(sigma_e_squared.is_finite() && sigma_e_squared > 0.0) {
            return Err(Error::validation(format!(
                "likelihood variance must be positive, got {sigma_e_squared}"
            )));
        }
        if !y_target.is_finite() {
            return Err(Error::validation("target label must be finite"));
        }
        Ok(Self {
            model,
            priors,
            y_target,
            sigma_e_squared,
        })
    }

    pub fn n_features(&self) -> usize {
        self.model.n_features()
    }

    pub fn log_posterior(&self, x: &[f64]) -> Result<f64> {
        check_len(self.n_features(), x.len())?;
        Ok(self.eval(x))
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let r = self.y_target - self.model.predict_unchecked(x);
        -r * r / (2.0 * self.sigma_e_squared) + self.priors.log_prior_unchecked(x)
    }
}

/// `ceil((ln beta - ln K) / ln(1 - p))`, at least 1.
pub fn required_runs(assumed_k: usize, min_basin_prob: f64, failure_prob: f64) -> Result<usize> {
    if assumed_k == 0 {
        return Err(Error::validation("assumed number of optima must be >= 1"));
    }
    if !(min_basin_prob > 0.0 && min_basin_prob < 1.0) {
        return Err(Error::validation(format!(
            "basin probability {min_basin_prob} not in (0, 1)"
        )));
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::validation(format!(
            "failure probability {failure_prob} not in (0, 1)"
        )));
    }
    let bound = (failure_prob.ln() - (assumed_k as f64).ln()) / (1.0 - min_basin_prob).ln();
    Ok((bound.ceil() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub n_runs: usize,
    pub assumed_k: usize,
    pub min_basin_prob: f64,
    pub failure_prob: f64,
}

impl SearchBudget {
    pub fn from_bound(assumed_k: usize, min_basin_prob: f64, failure_prob: f64) -> Result<Self> {
        Ok(Self {
            n_runs: required_runs(assumed_k, min_basin_prob, failure_prob)?,
            assumed_k,
            min_basin_prob,
            failure_prob,
        })
    }

    /// `K` = product of prior component counts, `p = 1 / (2K)`, `beta = 0.01`.
    pub fn default_for(priors: &FeaturePriors) -> Self {
        let k = priors.component_product().max(1);
        Self::from_bound(k, 1.0 / (2.0 * k as f64), 0.01).expect("parameters in range")
    }

    /// Keeps the bound parameters but overrides the run count.
    pub fn with_runs(mut self, n_runs: usize) -> Self {
        self.n_runs = n_runs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::validation("search budget needs at least one run"));
        }
        required_runs(self.assumed_k, self.min_basin_prob, self.failure_prob).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSettings {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    /// Use BFGS (smooth models) rather than Nelder-Mead.
    pub smooth: bool,
}

impl LocalSettings {
    /// BFGS for linear models, Nelder-Mead for tree ensembles.
    pub fn for_model(model: &PredictiveModel) -> Self {
        if model.is_smooth() {
            Self {
                grad_tol: 1e-6,
                step_tol: 1e-10,
                max_iters: 1000,
                smooth: true,
            }
        } else {
            Self {
                grad_tol: 1e-6,
                step_tol: 1e-6,
                max_iters: 4000,
                smooth: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Climbs the log-posterior from `x0`. The returned value is never below
/// the value at `x0`; running out of iterations yields `converged = false`.
pub fn local_maximize(
    obj: &PosteriorObjective<'_>,
    x0: &[f64],
    settings: &LocalSettings,
) -> Result<LocalOptimum> {
    check_len(obj.n_features(), x0.len())?;
    let start = obj.eval(x0);
    if !start.is_finite() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "log-posterior is not finite at the start point ({start})"
        )));
    }
    let s = MinimizeSettings {
        grad_tol: settings.grad_tol,
        step_tol: settings.step_tol,
        max_iters: settings.max_iters,
    };
    let m = if settings.smooth {
        continuation_bfgs(obj, x0, &s)
    } else {
        optim::nelder_mead(&negated(obj), x0, &s)
    };
    let value = obj.eval(&m.point);
    if value < start {
        return Ok(LocalOptimum {
            point: x0.to_vec(),
            value: start,
            converged: m.converged,
            iterations: m.iterations,
        });
    }
    Ok(LocalOptimum {
        point: m.point,
        value,
        converged: m.converged,
        iterations: m.iterations,
    })
}

/// The objective as a minimization target; NaN maps to +inf so line
/// searches and simplex steps reject it.
fn negated<'b>(obj: &'b PosteriorObjective<'_>) -> impl Fn(&[f64]) -> f64 + 'b {
    move |x| {
        let v = obj.eval(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    }
}

/// BFGS on a sequence of objectives whose likelihood variance shrinks from
/// `max(sigma_e^2, r0^2)` (`r0` the misfit at `x0`) by a factor 100 per
/// stage down to `sigma_e^2`, each stage warm-started from the last.
///
/// A near-zero residual variance turns the likelihood into a stiff penalty
/// that pins `f(x)` to the target; plain BFGS then crawls along the
/// constraint and stops early. Tightening gradually keeps every stage well
/// conditioned relative to its starting point.
fn continuation_bfgs(obj: &PosteriorObjective<'_>, x0: &[f64], s: &MinimizeSettings) -> optim::Minimum {
    let target = obj.sigma_e_squared;
    let r0 = obj.y_target - obj.model.predict_unchecked(x0);
    let mut sigma2 = target.max(r0 * r0);
    let mut x = x0.to_vec();
    let mut iterations = 0;
    loop {
        let stage = PosteriorObjective {
            sigma_e_squared: sigma2,
            ..*obj
        };
        let m = optim::bfgs(&negated(&stage), &x, s);
        iterations += m.iterations;
        x = m.point;
        if sigma2 <= target {
            return optim::Minimum {
                point: x,
                value: m.value,
                converged: m.converged,
                iterations,
            };
        }
        sigma2 = (sigma2 * 1e-2).max(target);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumEntry {
    pub point: Vec<f64>,
    pub log_posterior: f64,
    /// Number of converged runs that ended in this optimum.
    pub hit_count: usize,
    /// `hit_count / n_converged`: an empirical basin probability.
    pub basin_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub y_target: f64,
    pub sigma_e_squared: f64,
    pub map_point: Vec<f64>,
    pub map_log_posterior: f64,
    pub local_optima: Vec<OptimumEntry>,
    pub n_runs_executed: usize,
    pub n_converged: usize,
    pub budget: SearchBudget,
    pub seed: u64,
}

/// Two endpoints are the same optimum when their infinity-norm distance is
/// below `1e-3 * (1 + max(|a|, |b|))`.
pub fn dedup_radius(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nb = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-3 * (1.0 + na.max(nb))
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Starting point of run `run`: one prior draw from stream `run` of `seed`.
///
/// Runs are numbered independently, so the first `n` starts of a larger
/// budget are exactly the starts of a budget of `n`.
pub fn start_point(priors: &FeaturePriors, seed: u64, run: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, run as u64);
    // burn one draw so the stream position does not depend on d
    let _: u64 = r.random();
    priors.per_feature.iter().map(|g| g.sample(&mut r)).collect()
}

pub fn direct_search_map(
    obj: &PosteriorObjective<'_>,
    priors: &FeaturePriors,
    budget: &SearchBudget,
    seed: u64,
) -> Result<MapResult> {
    direct_search_map_with(obj, priors, budget, seed, &LocalSettings::for_model(obj.model))
}

pub fn direct_search_map_with(
    obj: &PosteriorObjective<'_>,
    priors: &FeaturePriors,
    budget: &SearchBudget,
    seed: u64,
    settings: &LocalSettings,
) -> Result<MapResult> {
    budget.validate()?;
    check_len(obj.n_features(), priors.n_features())?;
    let runs = par::map_range(budget.n_runs, |i| {
        let x0 = start_point(priors, seed, i);
        local_maximize(obj, &x0, settings)
    });

    struct Cluster {
        anchor: Vec<f64>,
        best: Vec<f64>,
        value: f64,
        hits: usize,
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut n_converged = 0;
    let mut best_unconverged = f64::NEG_INFINITY;
    for run in runs {
        // a start where the objective is not finite is a wasted run
        let Ok(opt) = run else { continue };
        if !opt.converged {
            best_unconverged = best_unconverged.max(opt.value);
            continue;
        }
        n_converged += 1;
        match clusters
            .iter_mut()
            .find(|c| inf_dist(&c.anchor, &opt.point) < dedup_radius(&c.anchor, &opt.point))
        {
            Some(c) => {
                c.hits += 1;
                if opt.value > c.value {
                    c.value = opt.value;
                    c.best = opt.point;
                }
            }
            None => clusters.push(Cluster {
                anchor: opt.point.clone(),
                best: opt.point,
                value: opt.value,
                hits: 1,
            }),
        }
    }
    if clusters.is_empty() {
        return Err(Error::SearchFailure {
            n_runs: budget.n_runs,
            best_value: best_unconverged,
        });
    }
    let local_optima: Vec<OptimumEntry> = clusters
        .into_iter()
        .map(|c| OptimumEntry {
            point: c.best,
            log_posterior: c.value,
            hit_count: c.hits,
            basin_fraction: c.hits as f64 / n_converged as f64,
        })
        .collect();
    let best = local_optima
        .iter()
        .fold(&local_optima[0], |b, e| if e.log_posterior > b.log_posterior { e } else { b });
    Ok(MapResult {
        y_target: obj.y_target,
        sigma_e_squared: obj.sigma_e_squared,
        map_point: best.point.clone(),
        map_log_posterior: best.log_posterior,
        n_runs_executed: budget.n_runs,
        n_converged,
        local_optima,
        budget: *budget,
        seed,
    })
}

/// Label value whose most probable feature vector is sought.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceTarget {
    Mean { value: f64 },
    Mode { mode: ModeInfo },
}

impl ReferenceTarget {
    pub fn value(&self) -> f64 {
        match self {
            ReferenceTarget::Mean { value } => *value,
            ReferenceTarget::Mode { mode } => mode.location,
        }
    }
}

/// MAP features for the mean label (`x'`) or a label mode (`x*_m`).
pub fn reference_point(
    model: &PredictiveModel,
    priors: &FeaturePriors,
    sigma_e_squared: f64,
    reference: &ReferenceTarget,
    budget: &SearchBudget,
    seed: u64,
) -> Result<MapResult> {
    let obj = PosteriorObjective::new(model, priors, reference.value(), sigma_e_squared)?;
    direct_search_map(&obj, priors, budget, seed)
}
