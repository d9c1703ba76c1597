//! Chi-squared and information-gain scoring of binary features against the
//! label, keeping features whose score is above a threshold (zero by default).

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Chi2,
    Ig,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Chi2 => "chi2",
            Criterion::Ig => "ig",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" => Ok(Criterion::Chi2),
            "ig" => Ok(Criterion::Ig),
            other => Err(Error::invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub index: usize,
    pub chi2: f64,
    /// Information gain in bits.
    pub info_gain: f64,
    pub retained: bool,
}

/// `counts[x][y]` for binary feature value `x` and label `y`.
type Table = [[u64; 2]; 2];

fn chi_squared(t: &Table) -> f64 {
    let n = (t[0][0] + t[0][1] + t[1][0] + t[1][1]) as f64;
    let mut chi = 0.0;
    for x in 0..2 {
        for y in 0..2 {
            let row = (t[x][0] + t[x][1]) as f64;
            let col = (t[0][y] + t[1][y]) as f64;
            let expected = row * col / n;
            if expected > 0.0 {
                let d = t[x][y] as f64 - expected;
                chi += d * d / expected;
            }
        }
    }
    chi
}

/// Mutual information between feature and label, in bits.
fn information_gain(t: &Table) -> f64 {
    let n: u64 = t.iter().flatten().sum();
    let mut ig = 0.0;
    for x in 0..2 {
        for y in 0..2 {
            let o = t[x][y];
            if o == 0 {
                continue;
            }
            let row = t[x][0] + t[x][1];
            let col = t[0][y] + t[1][y];
            let ratio = (u128::from(n) * u128::from(o)) as f64 / (u128::from(row) * u128::from(col)) as f64;
            ig += o as f64 / n as f64 * ratio.log2();
        }
    }
    ig.max(0.0)
}

/// Entropy in bits of a binary variable with the given counts.
pub fn entropy_bits(a: u64, b: u64) -> f64 {
    let n = (a + b) as f64;
    [a, b]
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn tables(data: &Dataset) -> Result<Vec<Table>> {
    let rows = data.labeled_rows()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("cannot score features of an empty dataset".into()));
    }
    let mut out = vec![[[0u64; 2]; 2]; data.dim()];
    for (i, (x, y)) in rows.iter().enumerate() {
        for (j, v) in x.iter().enumerate() {
            let bit = match *v {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                other => {
                    return Err(Error::invalid(format!(
                        "feature {j} is not binary (value {other} in example {i}); discretize it first"
                    )))
                }
            };
            out[j][bit][usize::from(*y)] += 1;
        }
    }
    Ok(out)
}

/// Scores every feature; `retained` marks scores strictly above `epsilon`
/// under `criterion`.
pub fn score_features(data: &Dataset, criterion: Criterion, epsilon: f64) -> Result<Vec<FeatureScore>> {
    Ok(tables(data)?
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let chi2 = chi_squared(t);
            // an exact product table has no information, whatever the rounding
            let info_gain = if chi2 == 0.0 { 0.0 } else { information_gain(t) };
            let score = match criterion {
                Criterion::Chi2 => chi2,
                Criterion::Ig => info_gain,
            };
            FeatureScore {
                index,
                chi2,
                info_gain,
                retained: score > epsilon,
            }
        })
        .collect())
}

pub fn retained_indices(scores: &[FeatureScore]) -> Vec<usize> {
    scores.iter().filter(|s| s.retained).map(|s| s.index).collect()
}

pub fn write_scores_csv(path: &Path, scores: &[FeatureScore]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "index,chi2,info_gain,retained").map_err(io)?;
    for s in scores {
        writeln!(w, "{},{},{},{}", s.index, s.chi2, s.info_gain, u8::from(s.retained)).map_err(io)?;
    }
    w.flush().map_err(io)
}
