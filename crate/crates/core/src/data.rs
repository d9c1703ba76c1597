//! Examples, datasets, normalization, CSV ingestion and a synthetic generator
//! with known ground-truth probabilities.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A feature vector with an optional binary label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

impl Example {
    pub fn labeled(features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Example {
            features,
            label: Some(label),
        })
    }

    pub fn unlabeled(features: Vec<f64>) -> Self {
        Example {
            features,
            label: None,
        }
    }
}

/// An ordered collection of examples sharing one dimensionality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    schema: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimensionality must be positive"));
        }
        for ex in &examples {
            if ex.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: ex.features.len(),
                });
            }
            if matches!(ex.label, Some(l) if l > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(Dataset {
            examples,
            dim,
            schema: None,
        })
    }

    /// Builds a labeled dataset from parallel feature rows and labels.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: &[u8]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let dim = rows.first().map(Vec::len).ok_or(Error::NoRows)?;
        let examples = rows
            .into_iter()
            .zip(labels)
            .map(|(x, &y)| Example::labeled(x, y))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, dim)
    }

    pub fn with_schema(mut self, schema: Vec<String>) -> Result<Self> {
        if schema.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: schema.len(),
            });
        }
        self.schema = Some(schema);
        Ok(self)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schema(&self) -> Option<&[String]> {
        self.schema.as_deref()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Example> {
        self.examples.get(i)
    }

    /// Returns `(negatives, positives)` among labeled examples.
    pub fn class_counts(&self) -> (usize, usize) {
        self.examples
            .iter()
            .fold((0, 0), |(neg, pos), ex| match ex.label {
                Some(0) => (neg + 1, pos),
                Some(_) => (neg, pos + 1),
                None => (neg, pos),
            })
    }

    pub fn labeled_count(&self) -> usize {
        let (n, p) = self.class_counts();
        n + p
    }

    /// Positive frequency among labeled examples, `None` if nothing is labeled.
    pub fn prevalence(&self) -> Option<f64> {
        let (n, p) = self.class_counts();
        (n + p > 0).then(|| p as f64 / (n + p) as f64)
    }

    /// Borrowed `(features, label)` rows; fails on the first unlabeled example.
    pub fn labeled_rows(&self) -> Result<Vec<(&[f64], u8)>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                ex.label
                    .map(|y| (ex.features.as_slice(), y))
                    .ok_or(Error::Unlabeled(i))
            })
            .collect()
    }

    pub fn labels(&self) -> Result<Vec<u8>> {
        Ok(self.labeled_rows()?.into_iter().map(|(_, y)| y).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            dim: self.dim,
            schema: self.schema.clone(),
        }
    }

    /// Copy of the first `n` examples.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples[..n.min(self.len())].to_vec(),
            dim: self.dim,
            schema: self.schema.clone(),
        }
    }

    pub fn push(&mut self, example: Example) -> Result<()> {
        if example.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: example.features.len(),
            });
        }
        self.examples.push(example);
        Ok(())
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Result<Dataset> {
        if columns.is_empty() {
            return Err(Error::invalid("at least one feature must be selected"));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dim) {
            return Err(Error::invalid(format!("feature index {bad} out of range")));
        }
        let examples = self
            .examples
            .iter()
            .map(|ex| Example {
                features: columns.iter().map(|&c| ex.features[c]).collect(),
                label: ex.label,
            })
            .collect();
        let schema = self
            .schema
            .as_ref()
            .map(|s| columns.iter().map(|&c| s[c].clone()).collect());
        Ok(Dataset {
            examples,
            dim: columns.len(),
            schema,
        })
    }

    /// Writes the dataset as CSV (label column last when labels are present).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let labeled = self.examples.iter().all(|e| e.label.is_some());
        let mut header: Vec<String> = match &self.schema {
            Some(s) => s.clone(),
            None => (0..self.dim).map(|j| format!("x{j}")).collect(),
        };
        if labeled {
            header.push("label".into());
        }
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for ex in &self.examples {
            let mut cells: Vec<String> = ex.features.iter().map(|v| v.to_string()).collect();
            if let (true, Some(y)) = (labeled, ex.label) {
                cells.push(y.to_string());
            }
            writeln!(w, "{}", cells.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a comma-separated file. The label column, when present, is last.
/// A first row containing any non-numeric cell is treated as a header.
pub fn load_csv(path: &Path, has_labels: bool) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_labels)
}

pub fn read_csv<R: std::io::Read>(reader: R, has_labels: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((i + 1, rec));
    }
    if records.is_empty() {
        return Err(Error::NoRows);
    }

    let mut schema = None;
    if records[0].1.iter().any(|c| c.parse::<f64>().is_err()) {
        let (_, head) = records.remove(0);
        schema = Some(head.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if records.is_empty() {
        return Err(Error::NoRows);
    }

    let width = records[0].1.len();
    let dim = if has_labels { width.saturating_sub(1) } else { width };
    if dim == 0 {
        return Err(Error::Parse {
            row: records[0].0,
            column: 1,
            message: "no feature columns".into(),
        });
    }

    let mut examples = Vec::with_capacity(records.len());
    for (row, rec) in &records {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *row,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for (j, cell) in rec.iter().take(dim).enumerate() {
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: *row,
                    column: j + 1,
                    message: format!("non-numeric value {cell:?}"),
                })?;
            features.push(v);
        }
        let label = if has_labels {
            let cell = &rec[dim];
            let y = match cell.parse::<f64>() {
                Ok(v) if v == 0.0 => 0,
                Ok(v) if v == 1.0 => 1,
                _ => {
                    return Err(Error::Parse {
                        row: *row,
                        column: dim + 1,
                        message: format!("label must be 0 or 1, found {cell:?}"),
                    })
                }
            };
            Some(y)
        } else {
            None
        };
        examples.push(Example { features, label });
    }

    let ds = Dataset::new(examples, dim)?;
    match schema {
        Some(mut s) => {
            s.truncate(dim);
            if s.len() == dim {
                ds.with_schema(s)
            } else {
                Ok(ds)
            }
        }
        None => Ok(ds),
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Statistics over arbitrary rows. Each column is summed in sorted order
    /// so the result does not depend on row order.
    pub fn fit_rows<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut columns = vec![Vec::new(); dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::InsufficientData(
                "cannot fit normalizer on an empty dataset".into(),
            ));
        }
        let mut mean = Vec::with_capacity(dim);
        let mut std = Vec::with_capacity(dim);
        for col in &mut columns {
            col.sort_by(f64::total_cmp);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(NormalizationStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps `x` to `(x - mean) / std`; zero-variance coordinates map to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        let examples = data
            .examples
            .iter()
            .map(|ex| {
                Ok(Example {
                    features: self.apply(&ex.features)?,
                    label: ex.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            examples,
            dim: data.dim,
            schema: data.schema.clone(),
        })
    }
}

pub fn fit_normalizer(train: &Dataset) -> Result<NormalizationStats> {
    NormalizationStats::fit_rows(train.examples.iter().map(|e| e.features.as_slice()), train.dim)
}

pub fn apply_normalizer(stats: &NormalizationStats, x: &[f64]) -> Result<Vec<f64>> {
    stats.apply(x)
}

/// Parameters of the synthetic binary-feature generator.
///
/// Each feature `j` is Bernoulli with a fixed rate in `[0.1, 0.5]`; the label
/// is Bernoulli of `sigmoid(bias + w.x + noise_scale * eps)` with `eps` a
/// standard normal draw. With `bias = None` the bias is tuned by bisection so
/// that the mean ground-truth probability of the sample hits
/// `target_prevalence`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub latent_weights: Vec<f64>,
    pub bias: Option<f64>,
    pub noise_scale: f64,
    pub target_prevalence: f64,
    pub seed: u64,
}

pub const DEFAULT_SYNTHETIC_DIM: usize = 34;
pub const DEFAULT_PREVALENCE: f64 = 0.1852;

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::with_dim(DEFAULT_SYNTHETIC_DIM, DEFAULT_PREVALENCE, 0)
    }
}

impl SyntheticSpec {
    /// Default latent model: geometrically decaying weights with alternating
    /// sign, so a handful of features carry most of the signal.
    pub fn with_dim(dim: usize, target_prevalence: f64, seed: u64) -> Self {
        let latent_weights = (0..dim)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * 4.0 * 0.7f64.powi(j as i32)
            })
            .collect();
        SyntheticSpec {
            dim,
            latent_weights,
            bias: None,
            noise_scale: 0.5,
            target_prevalence,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("synthetic dim must be positive"));
        }
        if self.latent_weights.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.latent_weights.len(),
            });
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale must be finite and non-negative"));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(Error::invalid("target_prevalence must lie in (0, 1)"));
        }
        if self.latent_weights.iter().any(|w| !w.is_finite())
            || self.bias.is_some_and(|b| !b.is_finite())
        {
            return Err(Error::invalid("latent weights and bias must be finite"));
        }
        Ok(())
    }
}

/// Marginal rate of binary feature `j`, spread over `[0.1, 0.5]`.
pub fn feature_rate(j: usize) -> f64 {
    const GOLDEN: f64 = 0.618_033_988_749_895;
    0.1 + 0.4 * ((j as f64 + 1.0) * GOLDEN).fract()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn mean_prob(scores: &[f64], bias: f64) -> f64 {
    scores.iter().map(|s| sigmoid(bias + s)).sum::<f64>() / scores.len() as f64
}

/// Draws `n` labeled examples and returns them with their ground-truth
/// positive probabilities.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = seed::rng_from(spec.seed);
    let rates: Vec<f64> = (0..spec.dim).map(feature_rate).collect();

    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = rates
            .iter()
            .map(|&q| if rng.gen::<f64>() < q { 1.0 } else { 0.0 })
            .collect();
        let eps: f64 = rng.sample(StandardNormal);
        let s = x
            .iter()
            .zip(&spec.latent_weights)
            .map(|(a, w)| a * w)
            .sum::<f64>()
            + spec.noise_scale * eps;
        rows.push(x);
        scores.push(s);
    }

    let bias = match spec.bias {
        Some(b) => b,
        None => {
            let (mut lo, mut hi) = (-60.0, 60.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mean_prob(&scores, mid) < spec.target_prevalence {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };

    let probs: Vec<f64> = scores.iter().map(|s| sigmoid(bias + s)).collect();
    let labels: Vec<u8> = probs
        .iter()
        .map(|&p| u8::from(rng.gen::<f64>() < p))
        .collect();
    let schema = (0..spec.dim).map(|j| format!("x{j}")).collect();
    let ds = Dataset::from_rows(rows, &labels)?.with_schema(schema)?;
    Ok((ds, probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Dataset {
        Dataset::from_rows(
            values.iter().map(|v| vec![*v]).collect(),
            &vec![0; values.len()],
        )
        .unwrap()
    }

    #[test]
    fn csv_three_rows_four_features() {
        let text = "1,2,3,4,0\n5,6,7,8,1\n9,10,11,12,0\n";
        let ds = read_csv(text.as_bytes(), true).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.examples()[1].features, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(ds.labels().unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn csv_empty_is_no_rows() {
        let err = read_csv("".as_bytes(), true).unwrap_err();
        assert_eq!(err.to_string(), "no rows");
    }

    #[test]
    fn csv_bad_label_names_row() {
        let text = "a,b,label\n1,2,0\n3,4,2\n";
        match read_csv(text.as_bytes(), true).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_and_non_numeric() {
        let ragged = read_csv("1,2,0\n1,0\n".as_bytes(), true).unwrap_err();
        assert!(matches!(ragged, Error::Parse { row: 2, .. }));
        let junk = read_csv("1,2,0\n1,x,0\n".as_bytes(), true).unwrap_err();
        assert!(matches!(junk, Error::Parse { row: 2, column: 2, .. }));
    }

    #[test]
    fn csv_header_detected() {
        let ds = read_csv("f1,f2,y\n0,1,1\n".as_bytes(), true).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.schema().unwrap(), &["f1".to_string(), "f2".to_string()]);
    }

    #[test]
    fn csv_unlabeled() {
        let ds = read_csv("1,2\n3,4\n".as_bytes(), false).unwrap();
        assert_eq!(ds.dim(), 2);
        assert!(ds.examples().iter().all(|e| e.label.is_none()));
    }

    #[test]
    fn normalizer_two_point() {
        let s = fit_normalizer(&column(&[1.0, 3.0])).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(s.apply(&[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn normalizer_constant_column() {
        let s = fit_normalizer(&column(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(s.mean, vec![5.0]);
        assert_eq!(s.std, vec![0.0]);
        assert_eq!(s.apply(&[123.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn normalizer_standardized_column_is_fixed_point() {
        let s = fit_normalizer(&column(&[-1.0, 1.0, -1.0, 1.0])).unwrap();
        assert!(s.mean[0].abs() < 1e-12);
        assert!((s.std[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_scaled_value() {
        let s = NormalizationStats {
            mean: vec![2.0],
            std: vec![2.0],
        };
        assert_eq!(apply_normalizer(&s, &[4.0]).unwrap(), vec![1.0]);
        assert!(matches!(
            s.apply(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalizer_rejects_empty() {
        let ds = Dataset::new(vec![], 3).unwrap();
        assert!(fit_normalizer(&ds).is_err());
    }

    #[test]
    fn synthetic_constant_logit() {
        let spec = SyntheticSpec {
            dim: 4,
            latent_weights: vec![0.0; 4],
            bias: Some(logit(0.5)),
            noise_scale: 0.0,
            target_prevalence: 0.1852,
            seed: 3,
        };
        let (ds, p) = generate_synthetic(&spec, 50).unwrap();
        assert_eq!(ds.len(), 50);
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::with_dim(34, 0.1852, 17);
        let a = generate_synthetic(&spec, 300).unwrap();
        let b = generate_synthetic(&spec, 300).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_hits_prevalence() {
        let spec = SyntheticSpec::with_dim(34, 0.1852, 1);
        let (ds, p) = generate_synthetic(&spec, 10_000).unwrap();
        let mean_p = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean_p - 0.1852).abs() < 1e-3);
        let frac = ds.prevalence().unwrap();
        assert!((frac - 0.1852).abs() < 0.02, "prevalence {frac}");
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let mut spec = SyntheticSpec::default();
        spec.target_prevalence = 1.0;
        assert!(generate_synthetic(&spec, 10).is_err());
        let spec = SyntheticSpec::default();
        assert!(generate_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn select_features_keeps_order() {
        let ds = Dataset::from_rows(vec![vec![1.0, 2.0, 3.0]], &[1]).unwrap();
        let sub = ds.select_features(&[2, 0]).unwrap();
        assert_eq!(sub.examples()[0].features, vec![3.0, 1.0]);
        assert!(ds.select_features(&[3]).is_err());
    }
}
