//! One-dimensional Gaussian mixtures: EM fitting with BIC model selection,
//! density modes, z-scores and the per-feature product prior.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{mean_var, Dataset, MixtureSpec};
use crate::error::{check_len, Error, Result};
use crate::{par, rng};

/// Default upper bound on mixture components tried by BIC selection.
pub const DEFAULT_K_MAX: usize = 8;

const EM_MAX_ITERS: usize = 500;
const EM_REL_TOL: f64 = 1e-6;
const EM_RESTARTS: u64 = 5;
/// Variance floor relative to the sample variance.
const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    fn log_pdf(&self, y: f64) -> f64 {
        let z = y - self.mean;
        -0.5 * (z * z / self.variance + (2.0 * PI * self.variance).ln())
    }

    fn pdf(&self, y: f64) -> f64 {
        self.log_pdf(y).exp()
    }
}

/// A 1-D Gaussian mixture. Weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MixtureFile", try_from = "MixtureFile")]
pub struct GaussianMixture1D {
    pub components: Vec<Component>,
    /// Number of samples the mixture was fit on (0 when given directly).
    pub fitted_n: usize,
    pub log_likelihood: f64,
}

/// On-disk form: the `MixtureSpec` fields plus optional fit metadata.
#[derive(Serialize, Deserialize)]
struct MixtureFile {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    #[serde(default)]
    fitted_n: usize,
    #[serde(default)]
    log_likelihood: Option<f64>,
}

impl From<GaussianMixture1D> for MixtureFile {
    fn from(g: GaussianMixture1D) -> Self {
        let spec = g.to_spec();
        Self {
            weights: spec.weights,
            means: spec.means,
            stds: spec.stds,
            fitted_n: g.fitted_n,
            log_likelihood: g.log_likelihood.is_finite().then_some(g.log_likelihood),
        }
    }
}

impl TryFrom<MixtureFile> for GaussianMixture1D {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        let mut g = Self::from_spec(&MixtureSpec {
            weights: f.weights,
            means: f.means,
            stds: f.stds,
        })?;
        g.fitted_n = f.fitted_n;
        g.log_likelihood = f.log_likelihood.unwrap_or(f64::NAN);
        Ok(g)
    }
}

impl GaussianMixture1D {
    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let components = (0..spec.weights.len())
            .map(|k| Component {
                weight: spec.weights[k],
                mean: spec.means[k],
                variance: spec.stds[k] * spec.stds[k],
            })
            .collect();
        Ok(Self {
            components,
            fitted_n: 0,
            log_likelihood: f64::NAN,
        })
    }

    pub fn gaussian(mean: f64, std: f64) -> Self {
        Self {
            components: vec![Component {
                weight: 1.0,
                mean,
                variance: std * std,
            }],
            fitted_n: 0,
            log_likelihood: f64::NAN,
        }
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean).collect(),
            stds: self.components.iter().map(|c| c.variance.sqrt()).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - m) * (c.mean - m)))
            .sum()
    }

    /// Single Gaussian with this mixture's mean and variance.
    pub fn moment_matched(&self) -> Self {
        Self::gaussian(self.mean(), self.variance().sqrt())
    }

    pub fn density(&self, y: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.pdf(y)).sum()
    }

    /// `ln density(y)`, evaluated with log-sum-exp so it stays finite far
    /// into the tails.
    pub fn log_density(&self, y: f64) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.weight.ln() + c.log_pdf(y)))
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let z: f64 = StandardNormal.sample(rng);
        c.mean + c.variance.sqrt() * z
    }

    /// Local maxima of the density, highest first.
    ///
    /// Each component mean seeds the fixed-point iteration
    /// `y <- sum_k r_k(y) mu_k / sigma_k^2 / sum_k r_k(y) / sigma_k^2`, with
    /// `r_k(y) = w_k phi_k(y)`, whose fixed points are the stationary points
    /// of the density and which climbs monotonically towards a maximum.
    pub fn modes(&self) -> Vec<ModeInfo> {
        let min_sigma = self
            .components
            .iter()
            .map(|c| c.variance.sqrt())
            .fold(f64::INFINITY, f64::min);
        let mut found: Vec<ModeInfo> = Vec::new();
        for start in self.components.iter().map(|c| c.mean) {
            let y = self.climb(start);
            if found
                .iter()
                .any(|m| (m.location - y).abs() < 1e-3 * min_sigma)
            {
                continue;
            }
            let info = self.mode_info(y);
            if info.is_local_max(self) {
                found.push(info);
            }
        }
        found.sort_by(|a, b| b.density.total_cmp(&a.density));
        found
    }

    fn climb(&self, mut y: f64) -> f64 {
        for _ in 0..100_000 {
            // responsibilities in log space to survive far tails
            let logs: Vec<f64> = self
                .components
                .iter()
                .map(|c| c.weight.ln() + c.log_pdf(y) - c.variance.ln())
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for (c, l) in self.components.iter().zip(&logs) {
                let r = (l - top).exp();
                num += r * c.mean;
                den += r;
            }
            let next = num / den;
            let step = (next - y).abs();
            y = next;
            if step < 1e-10 {
                break;
            }
        }
        y
    }

    fn mode_info(&self, y: f64) -> ModeInfo {
        let (idx, _) = self
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.weight.ln() + c.log_pdf(y)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let c = self.components[idx];
        ModeInfo {
            location: y,
            density: self.density(y),
            component_index: idx,
            sigma_m: c.variance.sqrt(),
            weight: c.weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_spec()
            .validate()
            .map_err(|e| Error::validation(format!("invalid mixture: {e}")))
    }
}

/// A density mode and the component that dominates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeInfo {
    pub location: f64,
    pub density: f64,
    /// Component with the largest responsibility at `location`.
    pub component_index: usize,
    /// Standard deviation of that component.
    pub sigma_m: f64,
    pub weight: f64,
}

impl ModeInfo {
    pub fn is_local_max(&self, gmm: &GaussianMixture1D) -> bool {
        let h = 1e-4 * self.sigma_m;
        let d = gmm.density(self.location);
        d >= gmm.density(self.location - h) && d >= gmm.density(self.location + h)
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Result of one EM run, with the log-likelihood recorded at every
/// iteration.
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub mixture: GaussianMixture1D,
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

/// Fits a `k`-component mixture by EM: best of five seeded restarts, each
/// initialized by k-means++ seeding and run until the relative change of the
/// log-likelihood drops below 1e-6 or 500 iterations pass.
///
/// Iterations are SQUAREM-accelerated: two plain EM steps give a squared
/// extrapolation, which is stabilized by one more EM step and kept only if it
/// beats the plain second step. The log-likelihood therefore never falls
/// between iterations, and overlapping components (which make plain EM crawl)
/// converge in far fewer passes over the data.
pub fn fit_gmm(samples: &[f64], k: usize, seed: u64) -> Result<GaussianMixture1D> {
    fit_gmm_traced(samples, k, seed).map(|t| t.mixture)
}

pub fn fit_gmm_traced(samples: &[f64], k: usize, seed: u64) -> Result<EmTrace> {
    if k == 0 {
        return Err(Error::validation("mixture needs k >= 1"));
    }
    if samples.len() < 2 * k {
        return Err(Error::validation(format!(
            "{} samples are too few for {k} components (need {})",
            samples.len(),
            2 * k
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("samples contain non-finite values"));
    }
    let (_, var) = mean_var(samples);
    if var <= 0.0 {
        return Err(Error::Degenerate("all samples are identical".into()));
    }
    let floor = VAR_FLOOR * var;
    let runs = par::map_range(EM_RESTARTS as usize, |r| {
        let mut rng = rng::stream(seed, r as u64);
        let init = kmeanspp_init(samples, k, floor, &mut rng);
        run_em(samples, init, floor)
    });
    let mut best: Option<EmTrace> = None;
    for run in runs {
        let better = best
            .as_ref()
            .is_none_or(|b| run.mixture.log_likelihood > b.mixture.log_likelihood);
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeanspp_init(samples: &[f64], k: usize, floor: f64, rng: &mut rng::Rng) -> Vec<Component> {
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = samples.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            samples[pick]
        } else {
            samples[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min((x - next).powi(2));
        }
    }
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut cnt = vec![0usize; k];
    for &x in samples {
        let j = nearest(&centers, x);
        sum[j] += x;
        sq[j] += x * x;
        cnt[j] += 1;
    }
    let (gm, gv) = mean_var(samples);
    (0..k)
        .map(|j| {
            if cnt[j] == 0 {
                Component {
                    weight: 1.0 / n as f64,
                    mean: if centers[j].is_finite() { centers[j] } else { gm },
                    variance: gv,
                }
            } else {
                let m = sum[j] / cnt[j] as f64;
                Component {
                    weight: cnt[j] as f64 / n as f64,
                    mean: m,
                    variance: (sq[j] / cnt[j] as f64 - m * m).max(floor),
                }
            }
        })
        .collect::<Vec<_>>()
        .normalized()
}

trait Normalize {
    fn normalized(self) -> Self;
}

impl Normalize for Vec<Component> {
    fn normalized(mut self) -> Self {
        let total: f64 = self.iter().map(|c| c.weight).sum();
        for c in &mut self {
            c.weight /= total;
        }
        self
    }
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (j, c) in centers.iter().enumerate() {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = j;
        }
    }
    best
}

/// Sufficient statistics of one E-step: per-component responsibility sums
/// of 1, x and x^2 (x shifted by `center`), plus the log-likelihood.
struct EStats {
    log_likelihood: f64,
    n: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
}

/// E-step fused with the accumulation the M-step needs, so responsibilities
/// are never stored.
fn e_step(samples: &[f64], center: f64, comps: &[Component]) -> EStats {
    let k = comps.len();
    // ln w_j + ln N(x | mu_j, v_j) = offset_j + curv_j * (x - mu_j)^2
    let offset: Vec<f64> = comps
        .iter()
        .map(|c| c.weight.ln() - 0.5 * (2.0 * PI * c.variance).ln())
        .collect();
    let curv: Vec<f64> = comps.iter().map(|c| -0.5 / c.variance).collect();
    let mut st = EStats {
        log_likelihood: 0.0,
        n: vec![0.0; k],
        sx: vec![0.0; k],
        sxx: vec![0.0; k],
    };
    let mut row = vec![0.0; k];
    for &x in samples {
        let mut top = f64::NEG_INFINITY;
        for j in 0..k {
            let z = x - comps[j].mean;
            row[j] = offset[j] + curv[j] * z * z;
            top = top.max(row[j]);
        }
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - top).exp();
            s += *r;
        }
        let xc = x - center;
        let inv = 1.0 / s;
        for j in 0..k {
            let r = row[j] * inv;
            st.n[j] += r;
            st.sx[j] += r * xc;
            st.sxx[j] += r * xc * xc;
        }
        st.log_likelihood += top + s.ln();
    }
    st
}

fn m_step(st: &EStats, center: f64, comps: &mut [Component], floor: f64, n: usize) {
    for (j, c) in comps.iter_mut().enumerate() {
        let nk = st.n[j];
        if nk > 1e-12 * n as f64 {
            let m = st.sx[j] / nk;
            *c = Component {
                weight: nk / n as f64,
                mean: center + m,
                variance: (st.sxx[j] / nk - m * m).max(floor),
            };
        } else {
            c.weight = 1e-300;
        }
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
}

fn em_step(st: &EStats, center: f64, comps: &[Component], floor: f64, n: usize) -> Vec<Component> {
    let mut next = comps.to_vec();
    m_step(st, center, &mut next, floor, n);
    next
}

fn flatten(comps: &[Component]) -> Vec<f64> {
    comps
        .iter()
        .flat_map(|c| [c.weight, c.mean, c.variance])
        .collect()
}

/// `theta0 - 2 a r + a^2 v` mapped back to components, or `None` when the
/// extrapolated point leaves the parameter space.
fn extrapolate(t0: &[Component], t1: &[Component], t2: &[Component], floor: f64) -> Option<Vec<Component>> {
    let (p0, p1, p2) = (flatten(t0), flatten(t1), flatten(t2));
    let r: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = (0..p0.len()).map(|i| p2[i] - 2.0 * p1[i] + p0[i]).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nr, nv) = (norm(&r), norm(&v));
    if !(nv > 0.0 && nr.is_finite()) {
        return None;
    }
    let alpha = (-nr / nv).min(-1.0);
    let p: Vec<f64> = (0..p0.len())
        .map(|i| p0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i])
        .collect();
    let comps: Vec<Component> = p
        .chunks_exact(3)
        .map(|c| Component {
            weight: c[0],
            mean: c[1],
            variance: c[2],
        })
        .collect();
    let valid = comps
        .iter()
        .all(|c| c.weight > 0.0 && c.mean.is_finite() && c.variance >= floor && c.variance.is_finite());
    valid.then(|| comps.normalized())
}

fn run_em(samples: &[f64], mut comps: Vec<Component>, floor: f64) -> EmTrace {
    let n = samples.len();
    let center = mean_var(samples).0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut st = e_step(samples, center, &comps);
    trace.push(st.log_likelihood);
    for _ in 0..EM_MAX_ITERS {
        let prev = st.log_likelihood;
        let t1 = em_step(&st, center, &comps, floor, n);
        let st1 = e_step(samples, center, &t1);
        let t2 = em_step(&st1, center, &t1, floor, n);
        let st2 = e_step(samples, center, &t2);
        let (next, next_st) = match extrapolate(&comps, &t1, &t2, floor) {
            Some(tx) => {
                let stx = e_step(samples, center, &tx);
                let t3 = em_step(&stx, center, &tx, floor, n);
                let st3 = e_step(samples, center, &t3);
                if st3.log_likelihood.is_finite() && st3.log_likelihood >= st2.log_likelihood {
                    (t3, st3)
                } else {
                    (t2, st2)
                }
            }
            None => (t2, st2),
        };
        comps = next;
        st = next_st;
        trace.push(st.log_likelihood);
        if (st.log_likelihood - prev).abs() < EM_REL_TOL * st.log_likelihood.abs() {
            converged = true;
            break;
        }
    }
    EmTrace {
        mixture: GaussianMixture1D {
            components: comps,
            fitted_n: n,
            log_likelihood: st.log_likelihood,
        },
        log_likelihoods: trace,
        converged,
    }
}

/// `-2 ln L + (3k - 1) ln n`.
pub fn bic(gmm: &GaussianMixture1D, n: usize) -> f64 {
    -2.0 * gmm.log_likelihood + (3 * gmm.k() - 1) as f64 * (n as f64).ln()
}

/// Fits `k = 1..=k_max` and returns the `k` minimizing BIC. `k_max` is
/// capped at half the sample count.
///
/// The CLI default is [`DEFAULT_K_MAX`].
pub fn select_k(samples: &[f64], k_max: usize, seed: u64) -> Result<usize> {
    select_and_fit(samples, k_max, seed).map(|(k, _)| k)
}

/// Like [`select_k`] but also returns the winning mixture.
pub fn select_and_fit(
    samples: &[f64],
    k_max: usize,
    seed: u64,
) -> Result<(usize, GaussianMixture1D)> {
    if k_max == 0 {
        return Err(Error::validation("k_max must be >= 1"));
    }
    // a k-component fit needs at least 2k samples
    let k_max = k_max.min(samples.len() / 2).max(1);
    let fits = par::map_range(k_max, |i| fit_gmm(samples, i + 1, seed));
    let mut best: Option<(f64, usize, GaussianMixture1D)> = None;
    for (i, fit) in fits.into_iter().enumerate() {
        let g = fit?;
        let score = bic(&g, samples.len());
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, i + 1, g));
        }
    }
    let (_, k, g) = best.expect("k_max >= 1");
    Ok((k, g))
}

/// `(y - mean) / std` with the population (1/N) standard deviation.
pub fn z_score(y: f64, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("z-score needs samples".into()));
    }
    let (m, v) = mean_var(samples);
    if v <= 0.0 {
        return Err(Error::Degenerate("sample standard deviation is zero".into()));
    }
    Ok((y - m) / v.sqrt())
}

/// `(y - mode) / sigma_m`.
pub fn mode_z_score(y: f64, mode: &ModeInfo) -> Result<f64> {
    if !(mode.sigma_m > 0.0) {
        return Err(Error::validation("mode sigma must be positive"));
    }
    Ok((y - mode.location) / mode.sigma_m)
}

/// Independent per-feature priors; the joint prior is their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePriors {
    pub per_feature: Vec<GaussianMixture1D>,
}

impl FeaturePriors {
    pub fn from_specs(specs: &[MixtureSpec]) -> Result<Self> {
        Ok(Self {
            per_feature: specs
                .iter()
                .map(GaussianMixture1D::from_spec)
                .collect::<Result<_>>()?,
        })
    }

    pub fn n_features(&self) -> usize {
        self.per_feature.len()
    }

    /// Product of moment-matched Gaussians.
    pub fn moment_matched(&self) -> Self {
        Self {
            per_feature: self
                .per_feature
                .iter()
                .map(GaussianMixture1D::moment_matched)
                .collect(),
        }
    }

    /// Product of the component counts: the number of prior modes when the
    /// components are well separated.
    pub fn component_product(&self) -> usize {
        self.per_feature.iter().map(|g| g.k()).product()
    }

    pub fn log_prior(&self, x: &[f64]) -> Result<f64> {
        check_len(self.n_features(), x.len())?;
        Ok(self.log_prior_unchecked(x))
    }

    #[inline]
    pub fn log_prior_unchecked(&self, x: &[f64]) -> f64 {
        self.per_feature
            .iter()
            .zip(x)
            .map(|(g, v)| g.log_density(*v))
            .sum()
    }

    /// Draws `n` rows (row-major); column `j` comes from stream `j` of `seed`.
    pub fn sample_rows(&self, n: usize, seed: u64) -> Vec<f64> {
        let d = self.n_features();
        let mut out = vec![0.0; n * d];
        for (j, g) in self.per_feature.iter().enumerate() {
            let mut r = rng::stream(seed, j as u64);
            for i in 0..n {
                out[i * d + j] = g.sample(&mut r);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Per-column BIC selection and EM fit. Column `j` uses seed `seed + j`.
pub fn fit_priors(data: &Dataset, k_max: usize, seed: u64) -> Result<FeaturePriors> {
    let fits = par::map_range(data.n_features(), |j| {
        select_and_fit(&data.column(j), k_max, seed.wrapping_add(j as u64)).map(|(_, g)| g)
    });
    let per_feature = fits.into_iter().collect::<Result<Vec<_>>>()?;
    for g in &per_feature {
        g.validate()?;
    }
    Ok(FeaturePriors { per_feature })
}
