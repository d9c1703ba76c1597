//! Two-layer feed-forward network: `tanh` hidden units, one logistic output,
//! trained by full-batch gradient descent with an adaptive learning rate on
//! mean cross-entropy, with early stopping on a held-out 20% split.
//!
//! Training first puts the examples in canonical order and seeds every random
//! choice from a hash of that ordered multiset, so a permuted training list
//! yields a bit-identical model.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sigmoid, Dataset};
use crate::error::{Error, Result};
use crate::seed;

/// Fraction of the training set held out for early stopping.
pub const VAL_FRACTION: f64 = 0.2;

/// Smallest training set that still leaves a validation split.
pub const MIN_TRAIN_EXAMPLES: usize = 5;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub lr_init: f64,
    /// Rate multiplier after an epoch that lowered the training error.
    pub lr_increase: f64,
    /// Rate multiplier after a rejected step.
    pub lr_decrease: f64,
    /// A step is rejected when the new error exceeds the old one times this.
    pub error_increase_tolerance: f64,
    pub max_epochs: usize,
    /// Accepted epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed_material: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_units: 5,
            lr_init: 0.01,
            lr_increase: 1.05,
            lr_decrease: 0.7,
            error_increase_tolerance: 1.04,
            max_epochs: 500,
            patience: 30,
            seed_material: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_hidden(hidden_units: usize) -> Self {
        TrainConfig {
            hidden_units,
            ..Self::default()
        }
    }

    pub fn val_fraction(&self) -> f64 {
        VAL_FRACTION
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::invalid("hidden_units must be positive"));
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return Err(Error::invalid("lr_init must be positive"));
        }
        if !(self.lr_increase > 1.0) {
            return Err(Error::invalid("lr_increase must exceed 1"));
        }
        if !(self.lr_decrease > 0.0 && self.lr_decrease < 1.0) {
            return Err(Error::invalid("lr_decrease must lie in (0, 1)"));
        }
        if !(self.error_increase_tolerance > 1.0) {
            return Err(Error::invalid("error_increase_tolerance must exceed 1"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("max_epochs and patience must be positive"));
        }
        Ok(())
    }
}

/// Network parameters. Hidden weights are stored input-major
/// (`w_hidden[j * h + k]` connects input `j` to hidden unit `k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    dim: usize,
    hidden: usize,
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

impl MlpModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        MlpModel {
            dim,
            hidden,
            w_hidden: vec![0.0; dim * hidden],
            b_hidden: vec![0.0; hidden],
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    /// Builds a model from an `h x d` hidden weight matrix.
    pub fn from_parts(
        hidden_weights: &[Vec<f64>],
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        let hidden = hidden_weights.len();
        let dim = hidden_weights.first().map_or(0, Vec::len);
        if hidden == 0 || dim == 0 {
            return Err(Error::invalid("model needs at least one input and one hidden unit"));
        }
        if hidden_weights.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged hidden weight matrix"));
        }
        if hidden_bias.len() != hidden || output_weights.len() != hidden {
            return Err(Error::DimensionMismatch {
                expected: hidden,
                got: hidden_bias.len().min(output_weights.len()),
            });
        }
        let mut m = MlpModel::zeros(dim, hidden);
        for (k, row) in hidden_weights.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                m.w_hidden[j * hidden + k] = *w;
            }
        }
        m.b_hidden = hidden_bias;
        m.w_out = output_weights;
        m.b_out = output_bias;
        Ok(m)
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = MlpModel::zeros(dim, hidden);
        let a = 1.0 / (dim as f64).sqrt();
        for w in m.w_hidden.iter_mut().chain(m.b_hidden.iter_mut()) {
            *w = rng.gen_range(-a..=a);
        }
        let b = 1.0 / (hidden as f64).sqrt();
        for w in m.w_out.iter_mut() {
            *w = rng.gen_range(-b..=b);
        }
        m.b_out = rng.gen_range(-b..=b);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn hidden_weight(&self, unit: usize, input: usize) -> f64 {
        self.w_hidden[input * self.hidden + unit]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.b_hidden
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.w_out
    }

    pub fn output_bias(&self) -> f64 {
        self.b_out
    }

    pub fn param_count(&self) -> usize {
        self.dim * self.hidden + 2 * self.hidden + 1
    }

    /// Parameters flattened as `[w_hidden, b_hidden, w_out, b_out]`, the same
    /// layout as [`Gradient`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w_hidden);
        v.extend_from_slice(&self.b_hidden);
        v.extend_from_slice(&self.w_out);
        v.push(self.b_out);
        v
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let (wh, rest) = params.split_at(self.dim * self.hidden);
        let (bh, rest) = rest.split_at(self.hidden);
        let (wo, bo) = rest.split_at(self.hidden);
        self.w_hidden.copy_from_slice(wh);
        self.b_hidden.copy_from_slice(bh);
        self.w_out.copy_from_slice(wo);
        self.b_out = bo[0];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Output probability for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut z = vec![0.0; self.hidden];
        Ok(self.forward_into(x, &mut z))
    }

    /// Forward pass leaving the hidden activations in `act`.
    fn forward_into(&self, x: &[f64], act: &mut [f64]) -> f64 {
        let h = self.hidden;
        act.copy_from_slice(&self.b_hidden);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let col = &self.w_hidden[j * h..(j + 1) * h];
                for (a, w) in act.iter_mut().zip(col) {
                    *a += xj * w;
                }
            }
        }
        let mut s = self.b_out;
        for (a, w) in act.iter_mut().zip(&self.w_out) {
            *a = a.tanh();
            s += *a * w;
        }
        sigmoid(s)
    }
}

/// Gradient of mean cross-entropy, flattened like [`MlpModel::to_flat`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Cross-entropy of one prediction with clamping.
pub fn example_ce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Examples in canonical order with duplicate rows merged into weights.
#[derive(Clone, Debug)]
struct Batch {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    weight: Vec<f64>,
    total: f64,
}

impl Batch {
    /// `rows` must already be in canonical order.
    fn from_sorted(rows: &[(&[f64], u8)], dim: usize) -> Batch {
        let mut b = Batch {
            dim,
            x: Vec::with_capacity(rows.len() * dim),
            y: Vec::with_capacity(rows.len()),
            weight: Vec::with_capacity(rows.len()),
            total: rows.len() as f64,
        };
        let mut prev: Option<(&[f64], u8)> = None;
        for &(x, y) in rows {
            if prev == Some((x, y)) {
                *b.weight.last_mut().expect("previous row exists") += 1.0;
            } else {
                b.x.extend_from_slice(x);
                b.y.push(f64::from(y));
                b.weight.push(1.0);
                prev = Some((x, y));
            }
        }
        b
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64, f64)> {
        self.x
            .chunks_exact(self.dim)
            .zip(&self.y)
            .zip(&self.weight)
            .map(|((x, y), w)| (x, *y, *w))
    }
}

fn sorted_rows(data: &Dataset) -> Result<Vec<(&[f64], u8)>> {
    let mut rows = data.labeled_rows()?;
    rows.sort_by(|a, b| seed::cmp_rows(*a, *b));
    Ok(rows)
}

/// Mean cross-entropy over `batch`; accumulates the gradient into `grad` when given.
fn loss_and_grad(model: &MlpModel, batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
    let h = model.hidden;
    let d = model.dim;
    let mut act = vec![0.0; h];
    let mut dz = vec![0.0; h];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut loss = 0.0;
    for (x, y, w) in batch.rows() {
        let o = model.forward_into(x, &mut act);
        loss += w * example_ce(o, y);
        if let Some(g) = grad.as_deref_mut() {
            let delta = w * (o - y);
            let (g_wh, rest) = g.split_at_mut(d * h);
            let (g_bh, rest) = rest.split_at_mut(h);
            let (g_wo, g_bo) = rest.split_at_mut(h);
            g_bo[0] += delta;
            for k in 0..h {
                g_wo[k] += delta * act[k];
                dz[k] = delta * model.w_out[k] * (1.0 - act[k] * act[k]);
                g_bh[k] += dz[k];
            }
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    let col = &mut g_wh[j * h..(j + 1) * h];
                    for (gv, dzk) in col.iter_mut().zip(&dz) {
                        *gv += xj * dzk;
                    }
                }
            }
        }
    }
    let inv = 1.0 / batch.total;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    loss * inv
}

/// Exact gradient of mean cross-entropy over `batch`.
pub fn gradient(model: &MlpModel, batch: &Dataset) -> Result<Gradient> {
    if batch.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: batch.dim(),
        });
    }
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let rows = sorted_rows(batch)?;
    let b = Batch::from_sorted(&rows, model.dim);
    let mut g = vec![0.0; model.param_count()];
    loss_and_grad(model, &b, Some(&mut g));
    Ok(Gradient(g))
}

/// Mean cross-entropy of `model` over a labeled dataset.
pub fn mean_cross_entropy(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: data.dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let rows = sorted_rows(data)?;
    Ok(loss_and_grad(model, &Batch::from_sorted(&rows, model.dim), None))
}

/// Diagnostics from one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub rejected_steps: usize,
    pub best_epoch: usize,
    /// Training error after each accepted step, starting with the initial model.
    pub train_errors: Vec<f64>,
    /// Validation error after each accepted step, starting with the initial model.
    pub val_errors: Vec<f64>,
    pub best_val_error: f64,
    pub final_val_error: f64,
    pub train_size: usize,
    pub val_size: usize,
}

/// Splits canonical rows into (train, validation), stratified when both
/// classes are present. The split is drawn over distinct rows: every copy of
/// a duplicated example lands on the same side.
fn split_rows<'a, R: Rng>(
    rows: &[(&'a [f64], u8)],
    rng: &mut R,
) -> (Vec<(&'a [f64], u8)>, Vec<(&'a [f64], u8)>) {
    // group start offsets; rows are sorted so copies are adjacent
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        match groups.last_mut() {
            Some((start, len)) if rows[*start] == *row => *len += 1,
            _ => groups.push((i, 1)),
        }
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (g, (start, _)) in groups.iter().enumerate() {
        by_class[usize::from(rows[*start].1)].push(g);
    }
    let stratified = by_class.iter().all(|c| !c.is_empty());
    let mut val_groups = Vec::new();
    if stratified {
        for class in &mut by_class {
            class.shuffle(rng);
            let take = (VAL_FRACTION * class.len() as f64).round() as usize;
            val_groups.extend_from_slice(&class[..take.min(class.len() - 1)]);
        }
    } else {
        let mut all: Vec<usize> = (0..groups.len()).collect();
        all.shuffle(rng);
        let take = (VAL_FRACTION * groups.len() as f64).round() as usize;
        val_groups.extend_from_slice(&all[..take.min(groups.len().saturating_sub(1))]);
    }
    let mut in_val = vec![false; rows.len()];
    for g in val_groups {
        let (start, len) = groups[g];
        in_val[start..start + len].iter_mut().for_each(|v| *v = true);
    }
    if !in_val.contains(&true) {
        // all rows identical: hold out one copy
        in_val[0] = true;
    }
    let mut train = Vec::with_capacity(rows.len());
    let mut val = Vec::new();
    for (row, v) in rows.iter().zip(in_val) {
        if v {
            val.push(*row);
        } else {
            train.push(*row);
        }
    }
    (train, val)
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    train_with_report(data, cfg).map(|(m, _)| m)
}

/// Trains a network and returns the model with the lowest validation error.
pub fn train_with_report(data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if data.len() < MIN_TRAIN_EXAMPLES {
        return Err(Error::InsufficientData(
            "insufficient data for validation split".into(),
        ));
    }
    let rows = sorted_rows(data)?;
    let content = seed::hash_sorted_rows(rows.iter().copied(), cfg.seed_material);
    let mut rng = seed::rng_from(content);

    let dim = data.dim();
    let mut model = MlpModel::random(dim, cfg.hidden_units, &mut rng);
    let (train_rows, val_rows) = split_rows(&rows, &mut rng);
    let train_batch = Batch::from_sorted(&train_rows, dim);
    let val_batch = Batch::from_sorted(&val_rows, dim);

    let mut report = TrainReport {
        train_size: train_rows.len(),
        val_size: val_rows.len(),
        ..TrainReport::default()
    };

    let mut params = model.to_flat();
    let mut grad = vec![0.0; params.len()];
    let mut err = loss_and_grad(&model, &train_batch, Some(&mut grad));
    if !err.is_finite() {
        return Err(Error::Numerical("non-finite initial training error".into()));
    }
    let mut val_err = loss_and_grad(&model, &val_batch, None);
    report.train_errors.push(err);
    report.val_errors.push(val_err);

    let mut best = params.clone();
    let mut best_val = val_err;
    let mut since_best = 0usize;
    let mut lr = cfg.lr_init;
    let mut candidate = vec![0.0; params.len()];
    let mut cand_grad = vec![0.0; params.len()];
    let mut cand_model = model.clone();

    for epoch in 1..=cfg.max_epochs {
        report.epochs = epoch;
        for ((c, p), g) in candidate.iter_mut().zip(&params).zip(&grad) {
            *c = p - lr * g;
        }
        cand_model.set_flat(&candidate)?;
        let new_err = loss_and_grad(&cand_model, &train_batch, Some(&mut cand_grad));
        let finite = new_err.is_finite() && cand_grad.iter().all(|g| g.is_finite());
        if !finite || new_err > err * cfg.error_increase_tolerance {
            lr *= cfg.lr_decrease;
            report.rejected_steps += 1;
            continue;
        }
        if new_err < err {
            lr *= cfg.lr_increase;
        }
        std::mem::swap(&mut params, &mut candidate);
        std::mem::swap(&mut grad, &mut cand_grad);
        std::mem::swap(&mut model, &mut cand_model);
        err = new_err;
        val_err = loss_and_grad(&model, &val_batch, None);
        report.train_errors.push(err);
        report.val_errors.push(val_err);
        if val_err < best_val {
            best_val = val_err;
            best.copy_from_slice(&params);
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    report.best_val_error = best_val;
    report.final_val_error = val_err;
    model.set_flat(&best)?;
    if !model.is_finite() {
        return Err(Error::Numerical("training produced non-finite weights".into()));
    }
    Ok((model, report))
}
