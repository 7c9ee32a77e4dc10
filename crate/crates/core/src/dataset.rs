//! Observations, the synthetic multimodal generator, CSV ingestion and
//! train/test splitting.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `N` observations of `d_x` features plus a scalar label.
///
/// Features are stored row-major. All entries are finite and feature names
/// are unique; both are checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    feature_names: Vec<String>,
    label_name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        label_name: impl Into<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        let label_name = label_name.into();
        if features.len() != labels.len() * d {
            return Err(Error::Shape {
                expected: labels.len() * d,
                actual: features.len(),
            });
        }
        for (i, name) in feature_names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::validation(format!("feature {i} has an empty name")));
            }
            if feature_names[..i].contains(name) || *name == label_name {
                return Err(Error::validation(format!("duplicate column name `{name}`")));
            }
        }
        if let Some(p) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature at row {}, column {}",
                p / d.max(1),
                p % d.max(1)
            )));
        }
        if let Some(p) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite label at row {p}")));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            label_name,
        })
    }

    /// Builds a dataset from rows, naming features `x0, x1, ...` and the label `y`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for row in rows {
            crate::error::check_len(d, row.len())?;
            flat.extend_from_slice(row);
        }
        Self::new(flat, labels, default_names(d), "y")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    /// Returns a copy with one extra observation appended.
    pub fn with_row(&self, x: &[f64], y: f64) -> Result<Self> {
        crate::error::check_len(self.n_features(), x.len())?;
        let mut features = self.features.clone();
        features.extend_from_slice(x);
        let mut labels = self.labels.clone();
        labels.push(y);
        Self::new(
            features,
            labels,
            self.feature_names.clone(),
            self.label_name.clone(),
        )
    }

    /// Index of the smallest label (first one on ties).
    pub fn argmin_label(&self) -> Option<usize> {
        self.labels
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.n_features());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
        }
    }

    /// Writes the dataset as CSV: features in order, label last.
    ///
    /// Values use Rust's shortest round-trip formatting, so reading the file
    /// back reproduces every value exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.label_name);
        w.write_record(&header)?;
        for (row, y) in self.rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// Reads a CSV file; `label_column` becomes the label and all other columns
/// become features in header order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column)
}

pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_owned()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row numbering, header excluded
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::validation(format!(
                "row {row} has {} cells, header has {}",
                rec.len(),
                header.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let value = parse_cell(cell).ok_or_else(|| Error::NonNumeric {
                row,
                column: header[j].clone(),
                value: cell.to_owned(),
            })?;
            if j == label_idx {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    Dataset::new(features, labels, feature_names, label_column)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// One-dimensional Gaussian mixture given by weights, means and standard
/// deviations. This is also the on-disk schema for fitted mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let spec = Self {
            weights,
            means,
            stds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::validation("mixture has no components"));
        }
        if self.means.len() != k || self.stds.len() != k {
            return Err(Error::validation(format!(
                "mixture arrays differ in length: {} weights, {} means, {} stds",
                k,
                self.means.len(),
                self.stds.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("mixture weights must be finite and >= 0"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::validation("mixture means must be finite"));
        }
        if self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::validation("mixture stds must be finite and > 0"));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[k] + self.stds[k] * z
    }
}

/// Additive synthetic generator: `y = sum_I x_I + noise`, each `x_I` drawn
/// independently from its own mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub features: Vec<MixtureSpec>,
    #[serde(default)]
    pub noise_std: f64,
}

impl SyntheticSpec {
    /// Three features, each `0.3 N(0,1) + 0.3 N(4,1) + 0.4 N(8, s^2)` with
    /// `s = 0.5, 0.75, 1`, and a noiseless additive label.
    pub fn trimodal_benchmark() -> Self {
        let feature = |s: f64| MixtureSpec {
            weights: vec![0.3, 0.3, 0.4],
            means: vec![0.0, 4.0, 8.0],
            stds: vec![1.0, 1.0, s],
        };
        Self {
            features: vec![feature(0.5), feature(0.75), feature(1.0)],
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::validation("synthetic spec needs at least one feature"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::validation("noise_std must be finite and >= 0"));
        }
        for (i, f) in self.features.iter().enumerate() {
            f.validate()
                .map_err(|e| Error::validation(format!("feature {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draws `n` observations from `spec`.
///
/// Column `I` uses random stream `I`; the label noise uses stream `d_x`.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.features.len();
    let columns: Vec<Vec<f64>> = spec
        .features
        .iter()
        .enumerate()
        .map(|(j, mix)| {
            let mut r = rng::stream(seed, j as u64);
            (0..n).map(|_| mix.sample(&mut r)).collect()
        })
        .collect();
    let mut noise_rng = rng::stream(seed, d as u64);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut y = 0.0;
        for col in &columns {
            features.push(col[i]);
            y += col[i];
        }
        if spec.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            y += spec.noise_std * z;
        }
        labels.push(y);
    }
    Dataset::new(features, labels, default_names(d), "y")
}

/// Shuffles row indices and cuts them into a training part of
/// `round(train_fraction * N)` rows and a test part with the rest.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.len(), train_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::validation(format!("cannot split {n} observations")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0));
    let n_train = (train_fraction * n as f64).round() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Sample mean and population (1/N) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = crate::par::mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (m, crate::par::pairwise_sum(&sq) / n)
}
