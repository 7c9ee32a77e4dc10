//! Forward models `f(x)`: ordinary least squares and squared-loss gradient
//! boosted regression trees, plus the residual statistics that feed the
//! likelihood.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{mean_var, Dataset};
use crate::error::{check_len, Error, Result};

pub const MODEL_SCHEMA: u32 = 1;

/// Relative tolerance on `|R_jj|` below which a design column is treated
/// as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn features_used(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub trees: Vec<RegressionTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear(LinearModel),
    Gbt(GbtModel),
}

/// A trained regressor together with the feature names it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveModel {
    pub schema: u32,
    pub feature_names: Vec<String>,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl PredictiveModel {
    pub fn linear(intercept: f64, coefficients: Vec<f64>) -> Self {
        let names = (0..coefficients.len()).map(|i| format!("x{i}")).collect();
        Self {
            schema: MODEL_SCHEMA,
            feature_names: names,
            kind: ModelKind::Linear(LinearModel {
                intercept,
                coefficients,
            }),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, ModelKind::Linear(_))
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match &self.kind {
            ModelKind::Linear(m) => Some(m),
            ModelKind::Gbt(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::Linear(_) => "linear",
            ModelKind::Gbt(_) => "gbt",
        }
    }

    /// Evaluates the model without shape checks. `x` must hold `n_features` values.
    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Linear(m) => {
                m.intercept
                    + m.coefficients
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c * v)
                        .sum::<f64>()
            }
            ModelKind::Gbt(m) => {
                let s: f64 = m.trees.iter().map(|t| t.predict(x)).sum();
                m.base_score + m.learning_rate * s
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_len(self.n_features(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("prediction input has non-finite entries"));
        }
        Ok(self.predict_unchecked(x))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::validation(format!(
                "unsupported model schema {}",
                self.schema
            )));
        }
        let d = self.n_features();
        match &self.kind {
            ModelKind::Linear(m) => check_len(d, m.coefficients.len()),
            ModelKind::Gbt(m) => {
                for t in &m.trees {
                    if t.nodes.is_empty() {
                        return Err(Error::validation("tree with no nodes"));
                    }
                    if let Some(f) = t.features_used().find(|&f| f >= d) {
                        return Err(Error::validation(format!("split on feature {f} >= {d}")));
                    }
                    let n = t.nodes.len();
                    let bad_child = t.nodes.iter().any(|node| {
                        matches!(node, TreeNode::Split { left, right, .. } if *left >= n || *right >= n)
                    });
                    if bad_child {
                        return Err(Error::validation("tree child index out of range"));
                    }
                    if t.depth() > m.max_depth {
                        return Err(Error::validation("tree deeper than max_depth"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Least-squares fit of `y ~ intercept + x . coefficients` by Householder QR.
pub fn fit_linear(train: &Dataset) -> Result<PredictiveModel> {
    let n = train.len();
    let d = train.n_features();
    let p = d + 1;
    if n <= d {
        return Err(Error::validation(format!(
            "linear fit needs more than {d} observations, got {n}"
        )));
    }
    // column-major design matrix [1 | X]
    let mut a = vec![0.0; n * p];
    for i in 0..n {
        a[i] = 1.0;
    }
    for (i, row) in train.rows().enumerate() {
        for j in 0..d {
            a[(j + 1) * n + i] = row[j];
        }
    }
    let mut b = train.labels().to_vec();
    let col_norms: Vec<f64> = (0..p)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let scale = col_norms.iter().cloned().fold(0.0, f64::max);
    let name = |j: usize| {
        if j == 0 {
            "intercept".to_string()
        } else {
            train.feature_names()[j - 1].clone()
        }
    };

    let mut diag = vec![0.0; p];
    for k in 0..p {
        let col = &mut a[k * n..(k + 1) * n];
        let norm = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale.max(f64::MIN_POSITIVE) || norm <= RANK_TOL * col_norms[k] {
            return Err(Error::SingularFit { column: name(k) });
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        // v = x - alpha e_k, stored in place
        col[k] -= alpha;
        let vnorm2: f64 = col[k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        let v: Vec<f64> = col[k..].to_vec();
        for j in (k + 1)..p {
            let cj = &mut a[j * n..(j + 1) * n];
            let dot: f64 = v.iter().zip(&cj[k..]).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in cj[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(x, y)| x * y).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, vi) in b[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }
    // back substitution on R (upper triangle lives above the diagonal of `a`)
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in (k + 1)..p {
            s -= a[j * n + k] * beta[j];
        }
        beta[k] = s / diag[k];
    }
    Ok(PredictiveModel {
        schema: MODEL_SCHEMA,
        feature_names: train.feature_names().to_vec(),
        kind: ModelKind::Linear(LinearModel {
            intercept: beta[0],
            coefficients: beta[1..].to_vec(),
        }),
    })
}

/// Stagewise squared-loss boosting of depth-limited regression trees.
///
/// Each tree is grown level by level on the current residuals; a node is
/// split at the midpoint between consecutive distinct values that maximizes
/// the reduction in squared error. Ties go to the lower feature index, then
/// the lower threshold.
pub fn fit_gbt(train: &Dataset, params: &GbtParams) -> Result<PredictiveModel> {
    if params.max_depth == 0 {
        return Err(Error::validation("max_depth must be >= 1"));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::validation("min_samples_leaf must be >= 1"));
    }
    if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
        return Err(Error::validation("learning_rate must be > 0"));
    }
    let n = train.len();
    if n < 2 * params.min_samples_leaf {
        return Err(Error::validation(format!(
            "gbt needs at least {} observations, got {n}",
            2 * params.min_samples_leaf
        )));
    }
    let d = train.n_features();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| train.column(j)).collect();
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let base_score = crate::par::mean(train.labels());
    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = train.labels()[i] - pred[i];
        }
        let tree = grow_tree(&columns, &sorted, &residual, params);
        for (i, p) in pred.iter_mut().enumerate() {
            let x: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            *p += params.learning_rate * tree.predict(&x);
        }
        trees.push(tree);
    }
    Ok(PredictiveModel {
        schema: MODEL_SCHEMA,
        feature_names: train.feature_names().to_vec(),
        kind: ModelKind::Gbt(GbtModel {
            base_score,
            learning_rate: params.learning_rate,
            max_depth: params.max_depth,
            trees,
        }),
    })
}

#[derive(Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[Vec<usize>],
    target: &[f64],
    params: &GbtParams,
) -> RegressionTree {
    let n = target.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { value: 0.0 }];
    // node id of each row within the current frontier; usize::MAX = settled
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];

    for depth in 0..=params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let slot = |node: usize| frontier.iter().position(|&f| f == node);
        let m = frontier.len();
        let mut sum = vec![0.0; m];
        let mut cnt = vec![0usize; m];
        let mut slot_of = vec![usize::MAX; n];
        for i in 0..n {
            if node_of[i] != usize::MAX {
                if let Some(s) = slot(node_of[i]) {
                    slot_of[i] = s;
                    sum[s] += target[i];
                    cnt[s] += 1;
                }
            }
        }
        let mut best: Vec<Option<BestSplit>> = vec![None; m];
        if depth < params.max_depth {
            for (f, order) in sorted.iter().enumerate() {
                let col = &columns[f];
                let mut lsum = vec![0.0; m];
                let mut lcnt = vec![0usize; m];
                let mut last: Vec<Option<f64>> = vec![None; m];
                for &i in order {
                    let s = slot_of[i];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = col[i];
                    if let Some(prev) = last[s] {
                        if v > prev {
                            let (nl, nr) = (lcnt[s], cnt[s] - lcnt[s]);
                            if nl >= params.min_samples_leaf && nr >= params.min_samples_leaf {
                                let rs = sum[s] - lsum[s];
                                let gain = lsum[s] * lsum[s] / nl as f64 + rs * rs / nr as f64
                                    - sum[s] * sum[s] / cnt[s] as f64;
                                if gain > best[s].map_or(1e-12 * (1.0 + sum[s].abs()), |b| b.gain) {
                                    best[s] = Some(BestSplit {
                                        gain,
                                        feature: f,
                                        threshold: 0.5 * (prev + v),
                                    });
                                }
                            }
                        }
                    }
                    lsum[s] += target[i];
                    lcnt[s] += 1;
                    last[s] = Some(v);
                }
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(0usize, 0usize); m];
        for (s, &node) in frontier.iter().enumerate() {
            match best[s] {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes[node] = TreeNode::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right: left + 1,
                    };
                    child_of[s] = (left, left + 1);
                    next.push(left);
                    next.push(left + 1);
                }
                None => {
                    let value = if cnt[s] > 0 { sum[s] / cnt[s] as f64 } else { 0.0 };
                    nodes[node] = TreeNode::Leaf { value };
                }
            }
        }
        for i in 0..n {
            let s = slot_of[i];
            if s == usize::MAX {
                continue;
            }
            node_of[i] = match best[s] {
                Some(b) => {
                    if columns[b.feature][i] < b.threshold {
                        child_of[s].0
                    } else {
                        child_of[s].1
                    }
                }
                None => usize::MAX,
            };
        }
        frontier = next;
    }
    RegressionTree { nodes }
}

/// Residual variance and goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Mean squared training residual.
    pub sigma_e_squared: f64,
    pub r_squared_train: f64,
    pub r_squared_test: Option<f64>,
    /// Population variance of the training labels.
    pub label_variance: f64,
}

impl ResidualStats {
    /// Residual variance floored at `1e-12 * Var(y)` so the likelihood stays
    /// finite for perfect fits.
    pub fn likelihood_variance(&self) -> f64 {
        self.sigma_e_squared.max(1e-12 * self.label_variance)
    }
}

pub fn residual_stats(
    model: &PredictiveModel,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<ResidualStats> {
    let (sse, sst, var) = fit_sums(model, train)?;
    let r_squared_test = match test {
        Some(t) => {
            let (sse_t, sst_t, _) = fit_sums(model, t)?;
            Some(1.0 - sse_t / sst_t)
        }
        None => None,
    };
    Ok(ResidualStats {
        sigma_e_squared: sse / train.len() as f64,
        r_squared_train: 1.0 - sse / sst,
        r_squared_test,
        label_variance: var,
    })
}

/// Sum of squared residuals on `data` after each boosting stage
/// (`None` for linear models). Entry `t` uses the first `t + 1` trees.
pub fn staged_sse(model: &PredictiveModel, data: &Dataset) -> Result<Option<Vec<f64>>> {
    check_len(model.n_features(), data.n_features())?;
    let ModelKind::Gbt(g) = &model.kind else {
        return Ok(None);
    };
    let mut sums = vec![0.0; data.len()];
    let mut out = Vec::with_capacity(g.trees.len());
    for t in &g.trees {
        for (s, x) in sums.iter_mut().zip(data.rows()) {
            *s += t.predict(x);
        }
        let sq: Vec<f64> = sums
            .iter()
            .zip(data.labels())
            .map(|(s, y)| {
                let r = g.base_score + g.learning_rate * s - y;
                r * r
            })
            .collect();
        out.push(crate::par::pairwise_sum(&sq));
    }
    Ok(Some(out))
}

fn fit_sums(model: &PredictiveModel, data: &Dataset) -> Result<(f64, f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("residual statistics need observations".into()));
    }
    check_len(model.n_features(), data.n_features())?;
    let sq: Vec<f64> = data
        .rows()
        .zip(data.labels())
        .map(|(x, y)| {
            let r = model.predict_unchecked(x) - y;
            r * r
        })
        .collect();
    let (_, var) = mean_var(data.labels());
    let sst = var * data.len() as f64;
    if sst <= 0.0 {
        return Err(Error::Degenerate(
            "labels have zero variance; R-squared is undefined".into(),
        ));
    }
    Ok((crate::par::pairwise_sum(&sq), sst, var))
}
