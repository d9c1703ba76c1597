//! Evaluation protocols: repeated stratified k-fold cross-validation and the
//! online protocol (predict, reveal, retrain).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fit_normalizer, Dataset, NormalizationStats};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport, DEFAULT_RELIABILITY_BINS};
use crate::mlp::{self, MlpModel, TrainConfig, MIN_TRAIN_EXAMPLES};
use crate::rebalance::{rebalance, RebalanceMode};
use crate::seed;
use crate::venn::{self, AnnBinTaxonomy, DecisionRule};

/// A single-probability prediction, with an error-probability interval when
/// the predictor provides one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Probability of class 1.
    pub p1: f64,
    pub error_interval: Option<(f64, f64)>,
}

/// A predictor that has been given its training set.
pub trait Fitted: Sync {
    fn predict(&self, x: &[f64]) -> Result<Prediction>;
}

pub trait Predictor: Sync {
    fn fit<'a>(&'a self, train: &'a Dataset) -> Result<Box<dyn Fitted + 'a>>;
}

/// Venn predictor over an [`AnnBinTaxonomy`]. Fitting only stores the
/// training set; all work happens per prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct VennPredictor {
    pub taxonomy: AnnBinTaxonomy,
    pub rule: DecisionRule,
}

struct FittedVenn<'a> {
    predictor: &'a VennPredictor,
    train: &'a Dataset,
}

impl Fitted for FittedVenn<'_> {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let out = venn::predict(&self.predictor.taxonomy, self.train, x, self.predictor.rule)?;
        Ok(Prediction {
            label: out.prediction,
            p1: out.mean_p1,
            error_interval: Some(out.error_interval),
        })
    }
}

impl Predictor for VennPredictor {
    fn fit<'a>(&'a self, train: &'a Dataset) -> Result<Box<dyn Fitted + 'a>> {
        train.labeled_rows()?;
        Ok(Box::new(FittedVenn {
            predictor: self,
            train,
        }))
    }
}

/// The bare network, trained on the rebalanced training set; predicts 1 iff
/// its output exceeds 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnPredictor {
    pub mode: RebalanceMode,
    pub train_cfg: TrainConfig,
}

struct FittedAnn {
    stats: NormalizationStats,
    model: MlpModel,
}

impl Fitted for FittedAnn {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let p1 = self.model.forward(&self.stats.apply(x)?)?;
        Ok(Prediction {
            label: u8::from(p1 > 0.5),
            p1,
            error_interval: None,
        })
    }
}

impl Predictor for AnnPredictor {
    fn fit<'a>(&'a self, train: &'a Dataset) -> Result<Box<dyn Fitted + 'a>> {
        let stats = fit_normalizer(train)?;
        let normalized = stats.apply_dataset(train)?;
        let balanced = rebalance(&normalized, self.mode)?;
        let fit_on = if balanced.data.len() < MIN_TRAIN_EXAMPLES {
            &normalized
        } else {
            &balanced.data
        };
        let model = mlp::train(fit_on, &self.train_cfg)?;
        Ok(Box::new(FittedAnn { stats, model }))
    }
}

/// Serializable description of a predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PredictorSpec {
    Vp {
        lambda: usize,
        mode: RebalanceMode,
        train_cfg: TrainConfig,
    },
    Ann {
        mode: RebalanceMode,
        train_cfg: TrainConfig,
    },
}

impl PredictorSpec {
    pub fn build(&self, rule: DecisionRule) -> Result<Box<dyn Predictor>> {
        match self {
            PredictorSpec::Vp {
                lambda,
                mode,
                train_cfg,
            } => Ok(Box::new(VennPredictor {
                taxonomy: AnnBinTaxonomy::new(*lambda, *mode, train_cfg.clone())?,
                rule,
            })),
            PredictorSpec::Ann { mode, train_cfg } => {
                train_cfg.validate()?;
                Ok(Box::new(AnnPredictor {
                    mode: *mode,
                    train_cfg: train_cfg.clone(),
                }))
            }
        }
    }

    pub fn is_venn(&self) -> bool {
        matches!(self, PredictorSpec::Vp { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub predictor: PredictorSpec,
    pub rule: DecisionRule,
    pub n_bins: usize,
}

impl BatchPlan {
    pub fn new(predictor: PredictorSpec, seed: u64) -> Self {
        BatchPlan {
            folds: 10,
            repeats: 10,
            seed,
            predictor,
            rule: DecisionRule::default(),
            n_bins: DEFAULT_RELIABILITY_BINS,
        }
    }
}

/// One held-out prediction from cross-validation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub repeat: usize,
    pub index: usize,
    pub label: u8,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub pooled: MetricReport,
    pub per_run: Vec<MetricReport>,
    pub predictions: Vec<HeldOut>,
}

/// Fold of every example for one repetition. Each class is shuffled and dealt
/// round-robin, the second class continuing where the first stopped, so fold
/// sizes and per-fold class counts differ by at most one.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("at least 2 folds are required"));
    }
    let n = labels.len();
    let leave_one_out = folds == n;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, y) in labels.iter().enumerate() {
        by_class[usize::from(*y)].push(i);
    }
    if folds > n {
        return Err(Error::InsufficientData(format!(
            "{folds} folds requested for {n} examples"
        )));
    }
    if !leave_one_out {
        if let Some(small) = by_class.iter().find(|c| c.len() < folds) {
            return Err(Error::InsufficientData(format!(
                "a class has {} examples, fewer than the {folds} folds",
                small.len()
            )));
        }
    }
    let mut rng = seed::rng_from(seed);
    let mut assign = vec![0; n];
    let mut next = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            assign[i] = next % folds;
            next += 1;
        }
    }
    Ok(assign)
}

/// Runs `f` on a pool with `workers` threads, or on the current pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Repeated stratified cross-validation of `predictor`.
pub fn cross_validate(
    data: &Dataset,
    predictor: &dyn Predictor,
    folds: usize,
    repeats: usize,
    seed: u64,
    n_bins: usize,
) -> Result<BatchResult> {
    let labels = data.labels()?;
    if repeats == 0 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    let assignments = (0..repeats)
        .map(|r| stratified_folds(&labels, folds, seed::derive(seed, r as u64)))
        .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, usize)> = (0..repeats)
        .flat_map(|r| (0..folds).map(move |f| (r, f)))
        .collect();

    let chunks = tasks
        .par_iter()
        .map(|&(r, f)| -> Result<Vec<HeldOut>> {
            let assign = &assignments[r];
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assign[i] == f);
            let train = data.subset(&train);
            let fitted = predictor.fit(&train)?;
            test.par_iter()
                .map(|&i| {
                    let ex = &data.examples()[i];
                    Ok(HeldOut {
                        repeat: r,
                        index: i,
                        label: labels[i],
                        prediction: fitted.predict(&ex.features)?,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut predictions: Vec<HeldOut> = chunks.into_iter().flatten().collect();
    predictions.sort_by_key(|h| (h.repeat, h.index));

    let report = |items: &[HeldOut]| -> Result<MetricReport> {
        let probs: Vec<f64> = items.iter().map(|h| h.prediction.p1).collect();
        let preds: Vec<u8> = items.iter().map(|h| h.prediction.label).collect();
        let labels: Vec<u8> = items.iter().map(|h| h.label).collect();
        MetricReport::compute(&probs, &preds, &labels, n_bins)
    };
    let per_run = predictions
        .chunks(data.len())
        .map(report)
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchResult {
        pooled: report(&predictions)?,
        per_run,
        predictions,
    })
}

pub fn run_batch(data: &Dataset, plan: &BatchPlan) -> Result<BatchResult> {
    let predictor = plan.predictor.build(plan.rule)?;
    cross_validate(data, predictor.as_ref(), plan.folds, plan.repeats, plan.seed, plan.n_bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Position of the predicted example in the dataset.
    pub index: usize,
    pub label: u8,
    pub prediction: u8,
    pub p1: f64,
    pub err: u8,
    /// `1 - U(y_hat)`, when the predictor gives bounds.
    pub lower: Option<f64>,
    /// `1 - L(y_hat)`, when the predictor gives bounds.
    pub upper: Option<f64>,
    /// `|y_hat - p_hat|`.
    pub ep: f64,
}

/// Per-step outcomes of an online run and their running sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineTrace {
    pub initial_size: usize,
    pub steps: Vec<TraceStep>,
    pub errors: Vec<u64>,
    pub lep: Vec<f64>,
    pub uep: Vec<f64>,
    pub ep: Vec<f64>,
}

impl OnlineTrace {
    pub fn from_steps(initial_size: usize, steps: Vec<TraceStep>) -> Self {
        let mut trace = OnlineTrace {
            initial_size,
            errors: Vec::with_capacity(steps.len()),
            lep: Vec::with_capacity(steps.len()),
            uep: Vec::with_capacity(steps.len()),
            ep: Vec::with_capacity(steps.len()),
            steps,
        };
        let (mut e, mut lo, mut hi, mut ep) = (0u64, 0.0, 0.0, 0.0);
        for s in &trace.steps {
            e += u64::from(s.err);
            lo += s.lower.unwrap_or(0.0);
            hi += s.upper.unwrap_or(0.0);
            ep += s.ep;
            trace.errors.push(e);
            trace.lep.push(lo);
            trace.uep.push(hi);
            trace.ep.push(ep);
        }
        trace
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_bounds(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.lower.is_some() && s.upper.is_some())
    }

    /// Prefix lengths `n` (1-based) where `LEP_n - slack(n) <= E_n <= UEP_n + slack(n)` fails.
    pub fn containment_violations(&self, slack: impl Fn(usize) -> f64) -> Vec<usize> {
        (0..self.len())
            .filter_map(|i| {
                let n = i + 1;
                let e = self.errors[i] as f64;
                let s = slack(n);
                (e < self.lep[i] - s || e > self.uep[i] + s).then_some(n)
            })
            .collect()
    }

    /// Two-sided p-value of the final error count under the predictor's own
    /// single probabilities.
    pub fn miscalibration_pvalue(&self) -> Result<f64> {
        let q: Vec<f64> = self.steps.iter().map(|s| s.ep).collect();
        let errs: Vec<u8> = self.steps.iter().map(|s| s.err).collect();
        metrics::miscalibration_pvalue(&q, &errs)
    }

    /// CSV with columns `n,err,E_n,LEP_n,UEP_n` for bounded runs and
    /// `n,err,E_n,EP_n` otherwise.
    pub fn to_csv(&self) -> String {
        let bounds = self.has_bounds();
        let mut out = String::from(if bounds {
            "n,err,E_n,LEP_n,UEP_n\n"
        } else {
            "n,err,E_n,EP_n\n"
        });
        for (i, s) in self.steps.iter().enumerate() {
            if bounds {
                let _ = writeln!(out, "{},{},{},{},{}", i + 1, s.err, self.errors[i], self.lep[i], self.uep[i]);
            } else {
                let _ = writeln!(out, "{},{},{},{}", i + 1, s.err, self.errors[i], self.ep[i]);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Cumulative curves as an SVG line chart: errors solid, bounds dashed.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, m) = (640.0, 420.0, 50.0);
        let n = self.len().max(1) as f64;
        let bounds = self.has_bounds();
        let top = if bounds {
            self.uep.last().copied().unwrap_or(0.0)
        } else {
            self.ep.last().copied().unwrap_or(0.0)
        }
        .max(self.errors.last().copied().unwrap_or(0) as f64)
        .max(1.0);
        let sx = |i: usize| m + (i + 1) as f64 / n * (w - 2.0 * m);
        let sy = |v: f64| h - m - v / top * (h - 2.0 * m);
        let line = |values: &mut dyn Iterator<Item = f64>| -> String {
            values
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", sx(i), sy(v)))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            w / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<path d="M{m},{m} L{m},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#,
            y0 = h - m,
            x1 = w - m
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">Examples ({})</text>"#,
            w / 2.0,
            h - 15.0,
            self.len()
        );
        let _ = writeln!(
            svg,
            r#"<text x="{m}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{top:.0}</text>"#,
            m - 5.0
        );
        let errors = line(&mut self.errors.iter().map(|&e| e as f64));
        let _ = writeln!(
            svg,
            r#"<polyline points="{errors}" fill="none" stroke="black" stroke-width="1.5"/>"#
        );
        let dashed: Vec<&Vec<f64>> = if bounds { vec![&self.lep, &self.uep] } else { vec![&self.ep] };
        for curve in dashed {
            let pts = line(&mut curve.iter().copied());
            let _ = writeln!(
                svg,
                r#"<polyline points="{pts}" fill="none" stroke="black" stroke-width="1" stroke-dasharray="6,4"/>"#
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Online protocol in dataset order: the first `initial_size` examples seed
/// the training set, then each remaining example is predicted by a predictor
/// fitted on everything revealed so far, after which its label is revealed.
pub fn run_online(data: &Dataset, predictor: &dyn Predictor, initial_size: usize) -> Result<OnlineTrace> {
    if initial_size == 0 {
        return Err(Error::invalid("initial training set must hold at least one example"));
    }
    if initial_size >= data.len() {
        return Err(Error::InsufficientData(format!(
            "initial size {initial_size} leaves nothing to predict among {} examples",
            data.len()
        )));
    }
    let labels = data.labels()?;
    let mut steps = Vec::with_capacity(data.len() - initial_size);
    for i in initial_size..data.len() {
        let train = data.prefix(i);
        let fitted = predictor.fit(&train)?;
        let p = fitted.predict(&data.examples()[i].features)?;
        steps.push(TraceStep {
            index: i,
            label: labels[i],
            prediction: p.label,
            p1: p.p1,
            err: u8::from(p.label != labels[i]),
            lower: p.error_interval.map(|(lo, _)| lo),
            upper: p.error_interval.map(|(_, hi)| hi),
            ep: (f64::from(p.label) - p.p1).abs(),
        });
    }
    Ok(OnlineTrace::from_steps(initial_size, steps))
}

pub fn write_report_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut out = format!("config,{}\n", MetricReport::csv_header());
    for (name, r) in rows {
        let _ = writeln!(out, "{},{}", name, r.csv_row());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<u8> = (0..53).map(|i| u8::from(i % 5 == 0)).collect();
        let assign = stratified_folds(&labels, 10, 7).unwrap();
        let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        for f in 0..10 {
            let members: Vec<usize> = (0..53).filter(|&i| assign[i] == f).collect();
            let p = members.iter().filter(|&&i| labels[i] == 1).count() as f64;
            assert!((p - pos / 10.0).abs() <= 1.0);
            assert!((members.len() as f64 - 5.3).abs() <= 1.0);
        }
    }

    #[test]
    fn folds_need_enough_members() {
        let labels = [1, 1, 0, 0, 0, 0, 0, 0];
        assert!(stratified_folds(&labels, 3, 0).is_err());
        assert!(stratified_folds(&labels, 1, 0).is_err());
        // leave-one-out is allowed
        let assign = stratified_folds(&labels, 8, 0).unwrap();
        let mut sorted = assign.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn trace_cumulative_sums() {
        let step = |err, lo, hi| TraceStep {
            index: 0,
            label: 0,
            prediction: err,
            p1: 0.0,
            err,
            lower: Some(lo),
            upper: Some(hi),
            ep: 0.0,
        };
        let t = OnlineTrace::from_steps(1, vec![step(1, 0.1, 0.4), step(0, 0.2, 0.3), step(1, 0.0, 1.0)]);
        assert_eq!(t.errors, vec![1, 1, 2]);
        assert!((t.lep[2] - 0.3).abs() < 1e-15);
        assert!((t.uep[2] - 1.7).abs() < 1e-15);
        assert!(t.has_bounds());
        assert_eq!(t.containment_violations(|_| 0.0), vec![1, 2, 3]);
        assert!(t.containment_violations(|_| 1.0).is_empty());
        let csv = t.to_csv();
        assert!(csv.starts_with("n,err,E_n,LEP_n,UEP_n\n1,1,1,0.1,0.4\n"));
        assert!(t.to_svg("a < b").contains("a &lt; b"));
    }
}
