//! Classification and probability-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::example_ce;

/// Default number of probability bins for [`reliability`].
pub const DEFAULT_RELIABILITY_BINS: usize = 20;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// `(sensitivity, specificity)` of hard predictions.
pub fn confusion_rates(preds: &[u8], labels: &[u8]) -> Result<(f64, f64)> {
    check_lengths(preds.len(), labels.len())?;
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (p, y) in preds.iter().zip(labels) {
        match (*p == 1, *y == 1) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::UndefinedRate("no positive labels".into()));
    }
    if tn + fp == 0 {
        return Err(Error::UndefinedRate("no negative labels".into()));
    }
    Ok((tp as f64 / (tp + fn_) as f64, tn as f64 / (tn + fp) as f64))
}

/// Summed log-loss (natural log) with probabilities clamped away from 0 and 1.
pub fn cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, y)| example_ce(*p, f64::from(*y)))
        .sum())
}

/// Mean squared difference between probabilities and outcomes.
pub fn brier(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::InsufficientData("brier score of no predictions".into()));
    }
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - f64::from(*y)).powi(2))
        .sum();
    Ok(s / probs.len() as f64)
}

/// Reliability term of the binned Brier decomposition,
/// `(1/N) sum_k n_k (r_k - phi_k)^2`, with `r_k` the mean forecast in bin `k`
/// and `phi_k` its observed positive fraction.
pub fn reliability(probs: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if bins == 0 {
        return Err(Error::invalid("reliability needs at least one bin"));
    }
    if probs.is_empty() {
        return Err(Error::InsufficientData("reliability of no predictions".into()));
    }
    let mut count = vec![0usize; bins];
    let mut sum_p = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    for (p, y) in probs.iter().zip(labels) {
        let k = crate::venn::bin_index(*p, bins);
        count[k] += 1;
        sum_p[k] += p;
        pos[k] += usize::from(*y == 1);
    }
    let mut rel = 0.0;
    for k in 0..bins {
        if count[k] > 0 {
            let n = count[k] as f64;
            let r = sum_p[k] / n;
            let phi = pos[k] as f64 / n;
            rel += n * (r - phi).powi(2);
        }
    }
    Ok(rel / probs.len() as f64)
}

/// Exact distribution of a sum of independent Bernoulli variables.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonBinomial {
    pmf: Vec<f64>,
    mean: f64,
}

impl PoissonBinomial {
    /// O(N^2) convolution over the success probabilities.
    pub fn new(probs: &[f64]) -> Result<Self> {
        if let Some(bad) = probs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
        }
        let mut pmf = vec![0.0; probs.len() + 1];
        pmf[0] = 1.0;
        for (i, &q) in probs.iter().enumerate() {
            for s in (1..=i + 1).rev() {
                pmf[s] = pmf[s] * (1.0 - q) + pmf[s - 1] * q;
            }
            pmf[0] *= 1.0 - q;
        }
        Ok(PoissonBinomial {
            pmf,
            mean: probs.iter().sum(),
        })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `P(|S - mean| >= |observed - mean|)`.
    pub fn two_sided_pvalue(&self, observed: f64) -> f64 {
        // tolerance so that deviations equal up to rounding count as "at least as extreme"
        let dev = (observed - self.mean).abs() - 1e-9;
        let p: f64 = self
            .pmf
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as f64 - self.mean).abs() >= dev)
            .map(|(_, p)| p)
            .sum();
        p.min(1.0)
    }
}

/// Two-sided p-value of the observed error count given per-example error
/// probabilities `q_i = |y_hat_i - p_hat_i|`.
pub fn miscalibration_pvalue(error_probs: &[f64], errors: &[u8]) -> Result<f64> {
    check_lengths(error_probs.len(), errors.len())?;
    let dist = PoissonBinomial::new(error_probs)?;
    let observed = errors.iter().filter(|&&e| e == 1).count() as f64;
    Ok(dist.two_sided_pvalue(observed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Summed over all predictions.
    pub cross_entropy: f64,
    /// Mean over all predictions.
    pub brier: f64,
    pub reliability: f64,
    pub n_bins: usize,
}

impl MetricReport {
    pub fn compute(probs: &[f64], preds: &[u8], labels: &[u8], n_bins: usize) -> Result<Self> {
        check_lengths(probs.len(), preds.len())?;
        let (sensitivity, specificity) = confusion_rates(preds, labels)?;
        let report = MetricReport {
            n: probs.len(),
            sensitivity,
            specificity,
            cross_entropy: cross_entropy(probs, labels)?,
            brier: brier(probs, labels)?,
            reliability: reliability(probs, labels, n_bins)?,
            n_bins,
        };
        if !report.is_finite() {
            return Err(Error::Numerical("non-finite metric".into()));
        }
        Ok(report)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.sensitivity,
            self.specificity,
            self.cross_entropy,
            self.brier,
            self.reliability,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    fn fields(&self) -> [(&'static str, String); 7] {
        [
            ("n", self.n.to_string()),
            ("sensitivity", self.sensitivity.to_string()),
            ("specificity", self.specificity.to_string()),
            ("cross_entropy", self.cross_entropy.to_string()),
            ("brier", self.brier.to_string()),
            ("reliability", self.reliability.to_string()),
            ("n_bins", self.n_bins.to_string()),
        ]
    }

    /// `key=value` pairs separated by spaces.
    pub fn to_kv(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn csv_header() -> String {
        "n,sensitivity,specificity,cross_entropy,brier,reliability,n_bins".to_string()
    }

    pub fn csv_row(&self) -> String {
        self.fields()
            .iter()
            .map(|(_, v)| v.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }
}
