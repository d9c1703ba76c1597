//! Minority oversampling (MO) and majority undersampling (MU).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RebalanceKind {
    #[default]
    None,
    /// Copy randomly chosen minority examples until the classes are equal.
    Mo,
    /// Keep a random majority subset the size of the minority class.
    Mu,
}

impl fmt::Display for RebalanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RebalanceKind::None => "none",
            RebalanceKind::Mo => "mo",
            RebalanceKind::Mu => "mu",
        })
    }
}

impl FromStr for RebalanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RebalanceKind::None),
            "mo" => Ok(RebalanceKind::Mo),
            "mu" => Ok(RebalanceKind::Mu),
            other => Err(Error::invalid(format!("unknown rebalance mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RebalanceMode {
    pub kind: RebalanceKind,
    pub seed_material: u64,
}

impl RebalanceMode {
    pub fn new(kind: RebalanceKind) -> Self {
        RebalanceMode {
            kind,
            seed_material: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rebalanced {
    pub data: Dataset,
    /// One class was empty, so the input was returned as is.
    pub degenerate: bool,
}

/// Rebalances `data`. The output is in canonical order followed by any
/// added copies; it depends only on the multiset of examples and `mode`.
pub fn rebalance(data: &Dataset, mode: RebalanceMode) -> Result<Rebalanced> {
    let mut rows = data.labeled_rows()?;
    if mode.kind == RebalanceKind::None {
        return Ok(Rebalanced {
            data: data.clone(),
            degenerate: false,
        });
    }
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Ok(Rebalanced {
            data: data.clone(),
            degenerate: true,
        });
    }
    if neg == pos {
        return Ok(Rebalanced {
            data: data.clone(),
            degenerate: false,
        });
    }

    rows.sort_by(|a, b| seed::cmp_rows(*a, *b));
    let salt = seed::derive(mode.seed_material, mode.kind as u64 + 1);
    let mut rng = seed::rng_from(seed::hash_sorted_rows(rows.iter().copied(), salt));
    let minority_label = u8::from(pos < neg);
    let (minority, majority): (Vec<_>, Vec<_>) =
        rows.iter().partition(|(_, y)| *y == minority_label);

    let to_example = |(x, y): (&[f64], u8)| Example {
        features: x.to_vec(),
        label: Some(y),
    };

    let examples: Vec<Example> = match mode.kind {
        RebalanceKind::Mo => {
            let extra = majority.len() - minority.len();
            let mut out: Vec<Example> = rows.iter().copied().map(to_example).collect();
            out.reserve(extra);
            for _ in 0..extra {
                let pick = minority[rng.gen_range(0..minority.len())];
                out.push(to_example(pick));
            }
            out
        }
        RebalanceKind::Mu => {
            let mut keep = index::sample(&mut rng, majority.len(), minority.len()).into_vec();
            keep.sort_unstable();
            let mut out: Vec<Example> = Vec::with_capacity(2 * minority.len());
            out.extend(minority.iter().copied().map(to_example));
            out.extend(keep.into_iter().map(|i| to_example(majority[i])));
            out
        }
        RebalanceKind::None => unreachable!(),
    };

    Ok(Rebalanced {
        data: Dataset::new(examples, data.dim())?,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imbalanced(pos: usize, neg: usize) -> Dataset {
        let rows = (0..pos + neg).map(|i| vec![i as f64]).collect();
        let labels: Vec<u8> = (0..pos + neg).map(|i| u8::from(i < pos)).collect();
        Dataset::from_rows(rows, &labels).unwrap()
    }

    #[test]
    fn mo_small() {
        let out = rebalance(&imbalanced(3, 10), RebalanceMode::new(RebalanceKind::Mo)).unwrap();
        assert!(!out.degenerate);
        assert_eq!(out.data.len(), 20);
        assert_eq!(out.data.class_counts(), (10, 10));
        // every original positive is still there
        for i in 0..3 {
            assert!(out.data.examples().iter().any(|e| e.features == vec![i as f64]));
        }
    }

    #[test]
    fn mo_clinical_counts() {
        let out = rebalance(&imbalanced(30, 132), RebalanceMode::new(RebalanceKind::Mo)).unwrap();
        assert_eq!(out.data.len(), 264);
        assert_eq!(out.data.class_counts(), (132, 132));
    }

    #[test]
    fn mu_small() {
        let out = rebalance(&imbalanced(3, 10), RebalanceMode::new(RebalanceKind::Mu)).unwrap();
        assert_eq!(out.data.len(), 6);
        assert_eq!(out.data.class_counts(), (3, 3));
        let positives: Vec<f64> = out
            .data
            .examples()
            .iter()
            .filter(|e| e.label == Some(1))
            .map(|e| e.features[0])
            .collect();
        assert_eq!(positives, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn none_is_identity() {
        let d = imbalanced(2, 7);
        assert_eq!(rebalance(&d, RebalanceMode::default()).unwrap().data, d);
    }

    #[test]
    fn single_class_is_degenerate() {
        let d = imbalanced(0, 7);
        let out = rebalance(&d, RebalanceMode::new(RebalanceKind::Mo)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.data, d);
    }

    #[test]
    fn unlabeled_is_error() {
        let d = Dataset::new(vec![Example::unlabeled(vec![1.0])], 1).unwrap();
        assert!(matches!(
            rebalance(&d, RebalanceMode::new(RebalanceKind::Mu)),
            Err(Error::Unlabeled(0))
        ));
    }

    #[test]
    fn parse_modes() {
        assert_eq!("MO".parse::<RebalanceKind>().unwrap(), RebalanceKind::Mo);
        assert!("smote".parse::<RebalanceKind>().is_err());
    }
}
