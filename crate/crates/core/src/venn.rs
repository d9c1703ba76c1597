//! Venn prediction for binary labels.
//!
//! For each assumed label `k` of the new example the extended set
//! (training set plus the new example labelled `k`) is split into categories
//! by a [`Taxonomy`]; the label frequencies inside the new example's category
//! give one distribution `p^k`. The two distributions bound the probability of
//! each class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::mlp::{self, TrainConfig, MIN_TRAIN_EXAMPLES};
use crate::rebalance::{rebalance, RebalanceMode};

/// Assigns a category to every example of a labeled extended set.
///
/// Implementations must not depend on the order of the examples.
pub trait Taxonomy: Sync {
    fn categorize(&self, extended: &Dataset) -> Result<Vec<usize>>;
}

/// Categories are the `lambda` equal-width bins of a network's output,
/// the network being trained on the (rebalanced) extended set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnBinTaxonomy {
    pub lambda: usize,
    pub mode: RebalanceMode,
    pub train_cfg: TrainConfig,
}

impl AnnBinTaxonomy {
    pub fn new(lambda: usize, mode: RebalanceMode, train_cfg: TrainConfig) -> Result<Self> {
        if lambda == 0 {
            return Err(Error::invalid("lambda must be at least 1"));
        }
        train_cfg.validate()?;
        Ok(AnnBinTaxonomy {
            lambda,
            mode,
            train_cfg,
        })
    }

    /// Network outputs for every example of `extended`.
    ///
    /// Normalization statistics come from the extended set itself, which
    /// keeps the outputs a function of the extended multiset.
    pub fn scores(&self, extended: &Dataset) -> Result<Vec<f64>> {
        let stats = crate::data::fit_normalizer(extended)?;
        let normalized = stats.apply_dataset(extended)?;
        let balanced = rebalance(&normalized, self.mode)?;
        let fit_on = if balanced.data.len() < MIN_TRAIN_EXAMPLES {
            &normalized
        } else {
            &balanced.data
        };
        let model = mlp::train(fit_on, &self.train_cfg)?;
        normalized
            .examples()
            .iter()
            .map(|e| model.forward(&e.features))
            .collect()
    }
}

impl Taxonomy for AnnBinTaxonomy {
    fn categorize(&self, extended: &Dataset) -> Result<Vec<usize>> {
        Ok(self
            .scores(extended)?
            .into_iter()
            .map(|o| bin_index(o, self.lambda))
            .collect())
    }
}

/// Bin of `o` among `lambda` half-open bins of `[0, 1]`, the last one closed.
pub fn bin_index(o: f64, lambda: usize) -> usize {
    let b = (o * lambda as f64).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(lambda - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Categories {
    pub train: Vec<usize>,
    pub new: usize,
}

/// Categories of the training examples and the new example, with the new
/// example assigned `assumed_label`.
pub fn assign_categories<T: Taxonomy + ?Sized>(
    taxonomy: &T,
    train: &Dataset,
    x: &[f64],
    assumed_label: u8,
) -> Result<Categories> {
    if assumed_label > 1 {
        return Err(Error::invalid("assumed label must be 0 or 1"));
    }
    if x.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: x.len(),
        });
    }
    train.labeled_rows()?;
    let mut extended = train.clone();
    extended.push(Example::labeled(x.to_vec(), assumed_label)?)?;
    let mut cats = taxonomy.categorize(&extended)?;
    if cats.len() != extended.len() {
        return Err(Error::invalid("taxonomy returned the wrong number of categories"));
    }
    let new = cats.pop().expect("extended set is nonempty");
    Ok(Categories { train: cats, new })
}

/// Label frequencies in the new example's category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub p0: f64,
    pub p1: f64,
    /// Members of the category labelled 1, new example included.
    pub positives: usize,
    /// Members of the category, new example included.
    pub members: usize,
}

impl Distribution {
    /// Frequencies from counts; each probability is the correctly rounded
    /// quotient of its own count, so `p0 + p1` need not be exactly 1.
    pub fn new(positives: usize, members: usize) -> Result<Self> {
        if members == 0 || positives > members {
            return Err(Error::invalid(format!(
                "{positives} positives among {members} members"
            )));
        }
        Ok(Distribution {
            p0: (members - positives) as f64 / members as f64,
            p1: positives as f64 / members as f64,
            positives,
            members,
        })
    }

    pub fn prob(&self, class: u8) -> f64 {
        if class == 1 {
            self.p1
        } else {
            self.p0
        }
    }
}

pub fn empirical_distribution(
    train_categories: &[usize],
    train_labels: &[u8],
    new_category: usize,
    assumed_label: u8,
) -> Result<Distribution> {
    if train_categories.len() != train_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: train_categories.len(),
            got: train_labels.len(),
        });
    }
    let mut members = 1;
    let mut positives = usize::from(assumed_label == 1);
    for (c, y) in train_categories.iter().zip(train_labels) {
        if *c == new_category {
            members += 1;
            positives += usize::from(*y == 1);
        }
    }
    Distribution::new(positives, members)
}

/// Threshold on the mean positive probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Theta {
    /// Positive frequency of the training set at prediction time.
    Auto,
    Fixed(f64),
}

impl Theta {
    pub fn resolve(&self, train: &Dataset) -> Cutoff {
        match self {
            Theta::Fixed(t) => Cutoff::Value(*t),
            Theta::Auto => match train.class_counts() {
                (0, 0) => Cutoff::Fraction(1, 2),
                (neg, pos) => Cutoff::Fraction(pos, neg + pos),
            },
        }
    }
}

/// A threshold ready for use. Fractions are compared exactly against the
/// mean positive probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    Fraction(usize, usize),
    Value(f64),
}

impl Cutoff {
    pub fn value(&self) -> f64 {
        match *self {
            Cutoff::Fraction(p, q) => p as f64 / q as f64,
            Cutoff::Value(t) => t,
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Auto => f.write_str("auto"),
            Theta::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for Theta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Theta::Auto);
        }
        match s.parse::<f64>() {
            Ok(t) if (0.0..=1.0).contains(&t) => Ok(Theta::Fixed(t)),
            _ => Err(Error::invalid(format!("theta must be 'auto' or in [0, 1], got {s:?}"))),
        }
    }
}

impl From<Theta> for String {
    fn from(t: Theta) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Theta {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionRule {
    /// Class with the larger mean probability; ties go to 0.
    Argmax,
    /// Predict 1 iff the mean positive probability exceeds theta.
    Threshold(Theta),
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::Threshold(Theta::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VennOutput {
    /// `dist[k]` is the distribution obtained with assumed label `k`.
    pub dist: [Distribution; 2],
    pub mean_p1: f64,
    pub prediction: u8,
    /// `[L, U]` for the predicted class.
    pub pred_interval: (f64, f64),
    /// `[1 - U, 1 - L]`.
    pub error_interval: (f64, f64),
    /// Threshold used, when the threshold rule applied.
    pub theta: Option<f64>,
}

impl VennOutput {
    /// Combines the two distributions. The mean and every comparison against
    /// a fractional cutoff are computed from the counts, so ties are exact.
    pub fn from_distributions(dist: [Distribution; 2], rule: DecisionRule, cutoff: Option<Cutoff>) -> Self {
        let (a0, m0) = (dist[0].positives as u128, dist[0].members as u128);
        let (a1, m1) = (dist[1].positives as u128, dist[1].members as u128);
        // mean_p1 = num / den
        let num = a0 * m1 + a1 * m0;
        let den = 2 * m0 * m1;
        let mean_p1 = num as f64 / den as f64;
        let cutoff = match (rule, cutoff) {
            (DecisionRule::Argmax, _) => None,
            (DecisionRule::Threshold(_), Some(c)) => Some(c),
            (DecisionRule::Threshold(Theta::Fixed(t)), None) => Some(Cutoff::Value(t)),
            (DecisionRule::Threshold(Theta::Auto), None) => Some(Cutoff::Fraction(1, 2)),
        };
        let above = match cutoff {
            // argmax: mean_p1 > mean_p0, i.e. mean_p1 > 1/2
            None => 2 * num > den,
            Some(Cutoff::Fraction(p, q)) => num * q as u128 > p as u128 * den,
            Some(Cutoff::Value(t)) => mean_p1 > t,
        };
        let prediction = u8::from(above);
        VennOutput {
            dist,
            mean_p1,
            prediction,
            pred_interval: interval(&dist, prediction),
            // [1 - U, 1 - L] is the interval of the other class
            error_interval: interval(&dist, 1 - prediction),
            theta: cutoff.map(|c| c.value()),
        }
    }

    /// `[min_k p^k(class), max_k p^k(class)]`.
    pub fn interval_for(&self, class: u8) -> (f64, f64) {
        interval(&self.dist, class)
    }
}

fn interval(dist: &[Distribution; 2], class: u8) -> (f64, f64) {
    let a = dist[0].prob(class);
    let b = dist[1].prob(class);
    (a.min(b), a.max(b))
}

/// Full Venn prediction for `x`: one taxonomy evaluation per assumed label.
pub fn predict<T: Taxonomy + ?Sized>(
    taxonomy: &T,
    train: &Dataset,
    x: &[f64],
    rule: DecisionRule,
) -> Result<VennOutput> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let labels = train.labels()?;
    let run = |k: u8| -> Result<Distribution> {
        let cats = assign_categories(taxonomy, train, x, k)?;
        empirical_distribution(&cats.train, &labels, cats.new, k)
    };
    let (d0, d1) = rayon::join(|| run(0), || run(1));
    let cutoff = match rule {
        DecisionRule::Threshold(t) => Some(t.resolve(train)),
        DecisionRule::Argmax => None,
    };
    Ok(VennOutput::from_distributions([d0?, d1?], rule, cutoff))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(positives: usize, members: usize) -> Distribution {
        Distribution::new(positives, members).unwrap()
    }

    /// Categories read from the first feature.
    struct FirstFeature;

    impl Taxonomy for FirstFeature {
        fn categorize(&self, extended: &Dataset) -> Result<Vec<usize>> {
            Ok(extended
                .examples()
                .iter()
                .map(|e| e.features[0] as usize)
                .collect())
        }
    }

    #[test]
    fn bins() {
        assert_eq!(bin_index(0.49, 6), 2);
        assert_eq!(bin_index(1.0, 6), 5);
        let got: Vec<usize> = [0.1, 0.9, 0.5].iter().map(|&o| bin_index(o, 2)).collect();
        assert_eq!(got, vec![0, 1, 1]);
        assert_eq!(bin_index(0.0, 3), 0);
        assert_eq!(bin_index(0.999, 1), 0);
    }

    #[test]
    fn frequency_in_category() {
        let d = empirical_distribution(&[0, 0, 1], &[1, 0, 0], 0, 1).unwrap();
        assert_eq!((d.positives, d.members), (2, 3));
        assert_eq!(d.p1, 2.0 / 3.0);
    }

    #[test]
    fn unanimous_and_singleton_categories() {
        let d = empirical_distribution(&[0, 0, 0], &[0, 0, 0], 0, 0).unwrap();
        assert_eq!((d.p0, d.p1), (1.0, 0.0));
        let d = empirical_distribution(&[0, 0], &[0, 0], 4, 1).unwrap();
        assert_eq!((d.p1, d.members), (1.0, 1));
    }

    #[test]
    fn intervals_from_two_distributions() {
        let out = VennOutput::from_distributions([dist(1, 5), dist(2, 5)], DecisionRule::Argmax, None);
        assert_eq!(out.interval_for(1), (0.2, 0.4));
        assert_eq!(out.interval_for(0), (0.6, 0.8));
        assert_eq!(out.mean_p1, 0.3);
        assert_eq!(out.prediction, 0);
        assert_eq!(out.pred_interval, out.interval_for(0));
        assert_eq!(out.error_interval, (0.2, 0.4));
    }

    #[test]
    fn threshold_rule() {
        let rule = DecisionRule::Threshold(Theta::Fixed(0.1852));
        let out = VennOutput::from_distributions([dist(1, 5), dist(2, 5)], rule, Some(Cutoff::Value(0.1852)));
        assert_eq!(out.prediction, 1);
        assert_eq!(out.pred_interval, (0.2, 0.4));
        assert_eq!(out.error_interval, (0.6, 0.8));
    }

    #[test]
    fn argmax_tie_predicts_zero() {
        let out = VennOutput::from_distributions([dist(1, 4), dist(3, 4)], DecisionRule::Argmax, None);
        assert_eq!(out.mean_p1, 0.5);
        assert_eq!(out.prediction, 0);
    }

    #[test]
    fn predict_with_fixed_taxonomy() {
        let train = Dataset::from_rows(vec![vec![0.0], vec![0.0], vec![1.0]], &[1, 0, 0]).unwrap();
        let out = predict(&FirstFeature, &train, &[0.0], DecisionRule::Argmax).unwrap();
        // category 0 holds labels {1, 0} plus the new example
        assert_eq!(out.dist[0].p1, 1.0 / 3.0);
        assert_eq!(out.dist[1].p1, 2.0 / 3.0);
        assert_eq!(out.mean_p1, 0.5);
        assert_eq!(out.prediction, 0);
    }

    #[test]
    fn auto_theta_is_training_prevalence() {
        let train = Dataset::from_rows(vec![vec![0.0]; 4], &[1, 0, 0, 0]).unwrap();
        assert_eq!(Theta::Auto.resolve(&train), Cutoff::Fraction(1, 4));
        let out = predict(&FirstFeature, &train, &[0.0], DecisionRule::Threshold(Theta::Auto)).unwrap();
        assert_eq!(out.theta, Some(0.25));
        // p^0(1) = 1/5, p^1(1) = 2/5, mean 0.3 > 0.25
        assert_eq!(out.prediction, 1);
    }

    #[test]
    fn exact_tie_with_fractional_cutoff() {
        // mean of 1/3 and 1/6 is exactly 1/4
        let rule = DecisionRule::Threshold(Theta::Auto);
        let out = VennOutput::from_distributions([dist(1, 3), dist(1, 6)], rule, Some(Cutoff::Fraction(1, 4)));
        assert_eq!(out.prediction, 0);
        let out = VennOutput::from_distributions([dist(1, 3), dist(1, 6)], rule, Some(Cutoff::Fraction(6, 25)));
        assert_eq!(out.prediction, 1);
    }

    #[test]
    fn theta_parsing() {
        assert_eq!("auto".parse::<Theta>().unwrap(), Theta::Auto);
        assert_eq!("0.1852".parse::<Theta>().unwrap(), Theta::Fixed(0.1852));
        assert!("1.5".parse::<Theta>().is_err());
        let json = serde_json::to_string(&DecisionRule::Threshold(Theta::Fixed(0.25))).unwrap();
        let back: DecisionRule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, DecisionRule::Threshold(Theta::Fixed(0.25)));
    }

    #[test]
    fn single_bin_closed_form() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let labels = [1, 0, 0, 1, 0, 0, 0, 1, 0];
        let train = Dataset::from_rows(rows, &labels).unwrap();
        let tax = AnnBinTaxonomy::new(1, RebalanceMode::default(), TrainConfig::default()).unwrap();
        let out = predict(&tax, &train, &[2.5, 1.0], DecisionRule::Argmax).unwrap();
        for k in 0..2 {
            assert_eq!(out.dist[k].p1, (3 + k) as f64 / 10.0);
        }
    }

    #[test]
    fn rejects_zero_lambda_and_bad_dims() {
        assert!(AnnBinTaxonomy::new(0, RebalanceMode::default(), TrainConfig::default()).is_err());
        let train = Dataset::from_rows(vec![vec![0.0]; 3], &[1, 0, 0]).unwrap();
        assert!(assign_categories(&FirstFeature, &train, &[0.0, 1.0], 0).is_err());
    }
}
