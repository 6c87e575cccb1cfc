//! Parameter layout, forward pass, softmax cross-entropy loss, analytic
//! gradients and plain mini-batch SGD for the two supported models.
//!
//! Parameters are one flat vector. Each output unit owns a contiguous row
//! of its incoming weights followed by its bias:
//!
//! * logistic regression: `num_classes` rows of `input_dim + 1`;
//! * one-hidden-layer MLP: `hidden_dim` rows of `input_dim + 1` (tanh
//!   units), then `num_classes` rows of `hidden_dim + 1`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::rng::{self, fnv1a};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp1 { hidden_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

/// Flat model parameters tagged with the fingerprint of the spec that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    fingerprint: u64,
}

/// Borrowed mini-batch: row-major features and one label per row.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [usize],
    input_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

pub fn steps_per_epoch(rows: usize, batch_size: usize) -> u64 {
    rows.div_ceil(batch_size) as u64
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if let ModelKind::Mlp1 { hidden_dim: 0 } = kind {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            num_classes,
        })
    }

    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::LogisticRegression, input_dim, num_classes)
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp1 { hidden_dim }, input_dim, num_classes)
    }

    pub fn parameter_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression => (d + 1) * c,
            ModelKind::Mlp1 { hidden_dim: h } => (d + 1) * h + (h + 1) * c,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let (tag, h) = match self.kind {
            ModelKind::LogisticRegression => (1, 0),
            ModelKind::Mlp1 { hidden_dim } => (2, hidden_dim as u64),
        };
        fnv1a([tag, self.input_dim as u64, self.num_classes as u64, h])
    }

    /// Glorot-uniform weights per layer, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let mut values = vec![0.0; self.parameter_count()];
        let mut fill = |block: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for row in block.chunks_mut(fan_in + 1) {
                for w in &mut row[..fan_in] {
                    *w = rng.random_range(-a..a);
                }
            }
        };
        let d = self.input_dim;
        match self.kind {
            ModelKind::LogisticRegression => fill(&mut values, d, self.num_classes),
            ModelKind::Mlp1 { hidden_dim: h } => {
                let (first, second) = values.split_at_mut((d + 1) * h);
                fill(first, d, h);
                fill(second, h, self.num_classes);
            }
        }
        ParamVector {
            values,
            fingerprint: self.fingerprint(),
        }
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.parameter_count()],
            fingerprint: self.fingerprint(),
        }
    }

    pub fn params_from(&self, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != self.parameter_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("params_from"));
        }
        Ok(ParamVector {
            values,
            fingerprint: self.fingerprint(),
        })
    }

    fn check(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<()> {
        if params.fingerprint != self.fingerprint() {
            return Err(Error::SpecMismatch);
        }
        if batch.input_dim != self.input_dim {
            return Err(Error::Dimension(format!(
                "batch has {} features, model expects {}",
                batch.input_dim, self.input_dim
            )));
        }
        if let Some(&y) = batch.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Dimension(format!(
                "label {y} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    fn hidden_dim(&self) -> usize {
        match self.kind {
            ModelKind::LogisticRegression => 0,
            ModelKind::Mlp1 { hidden_dim } => hidden_dim,
        }
    }

    /// Writes the logits of one sample into `out`; `hidden` receives the
    /// tanh activations for the MLP and is untouched otherwise.
    fn forward(&self, p: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let d = self.input_dim;
        match self.kind {
            ModelKind::LogisticRegression => affine(p, x, out),
            ModelKind::Mlp1 { hidden_dim: h } => {
                let (first, second) = p.split_at((d + 1) * h);
                affine(first, x, hidden);
                for a in hidden.iter_mut() {
                    *a = libm::tanh(*a);
                }
                affine(second, hidden, out);
            }
        }
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, params: &ParamVector, batch: Batch<'_>) -> Result<f64> {
        self.check(params, &batch)?;
        let mut hidden = vec![0.0; self.hidden_dim()];
        let mut logits = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for (x, &y) in batch.rows() {
            self.forward(&params.values, x, &mut hidden, &mut logits);
            total += log_sum_exp(&logits) - logits[y];
        }
        Ok(total / batch.len() as f64)
    }

    pub fn gradient(&self, params: &ParamVector, batch: Batch<'_>) -> Result<ParamVector> {
        self.check(params, &batch)?;
        let mut grad = vec![0.0; params.values.len()];
        self.accumulate_gradient(&params.values, batch, &mut grad);
        Ok(ParamVector {
            values: grad,
            fingerprint: params.fingerprint,
        })
    }

    fn accumulate_gradient(&self, p: &[f64], batch: Batch<'_>, grad: &mut [f64]) {
        grad.fill(0.0);
        let d = self.input_dim;
        let h = self.hidden_dim();
        let scale = 1.0 / batch.len() as f64;
        let mut hidden = vec![0.0; h];
        let mut dz = vec![0.0; self.num_classes];
        let mut dh = vec![0.0; h];
        for (x, &y) in batch.rows() {
            self.forward(p, x, &mut hidden, &mut dz);
            softmax_in_place(&mut dz);
            dz[y] -= 1.0;
            for g in dz.iter_mut() {
                *g *= scale;
            }
            match self.kind {
                ModelKind::LogisticRegression => outer_add(grad, &dz, x),
                ModelKind::Mlp1 { .. } => {
                    let off = (d + 1) * h;
                    outer_add(&mut grad[off..], &dz, &hidden);
                    dh.fill(0.0);
                    for (c, &g) in dz.iter().enumerate() {
                        let row = &p[off + c * (h + 1)..off + c * (h + 1) + h];
                        for (acc, &v) in dh.iter_mut().zip(row) {
                            *acc += g * v;
                        }
                    }
                    for (acc, &a) in dh.iter_mut().zip(&hidden) {
                        *acc *= 1.0 - a * a;
                    }
                    outer_add(&mut grad[..off], &dh, x);
                }
            }
        }
    }

    /// One shuffled pass over `data` in mini-batches of `batch_size` (the
    /// last batch may be short). Returns the updated copy.
    pub fn sgd_epoch<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        data: &LabeledDataset,
        lr: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ParamVector> {
        let steps = steps_per_epoch(data.len(), batch_size.max(1));
        self.sgd_steps(params, data, lr, batch_size, steps, rng)
    }

    /// Runs exactly `steps` mini-batch updates, reshuffling at the start of
    /// every pass over the data.
    pub fn sgd_steps<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        data: &LabeledDataset,
        lr: f64,
        batch_size: usize,
        steps: u64,
        rng: &mut R,
    ) -> Result<ParamVector> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyData("training set has no rows".into()));
        }
        self.check(params, &data.as_batch())?;

        let d = self.input_dim;
        let mut p = params.values.clone();
        let mut grad = vec![0.0; p.len()];
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut xs = Vec::with_capacity(batch_size * d);
        let mut ys = Vec::with_capacity(batch_size);
        let mut done = 0u64;
        while done < steps {
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                if done == steps {
                    break;
                }
                xs.clear();
                ys.clear();
                for &i in chunk {
                    xs.extend_from_slice(data.row(i));
                    ys.push(data.labels()[i]);
                }
                let batch = Batch {
                    features: &xs,
                    labels: &ys,
                    input_dim: d,
                };
                self.accumulate_gradient(&p, batch, &mut grad);
                for (w, g) in p.iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
                done += 1;
            }
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sgd"));
        }
        Ok(ParamVector {
            values: p,
            fingerprint: params.fingerprint,
        })
    }

    /// Argmax accuracy (ties go to the lowest class index) and mean loss.
    pub fn evaluate(&self, params: &ParamVector, data: &LabeledDataset) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::EmptyData("evaluation set has no rows".into()));
        }
        let batch = data.as_batch();
        self.check(params, &batch)?;
        let mut hidden = vec![0.0; self.hidden_dim()];
        let mut logits = vec![0.0; self.num_classes];
        let mut correct = 0;
        let mut total_loss = 0.0;
        for (x, &y) in batch.rows() {
            self.forward(&params.values, x, &mut hidden, &mut logits);
            if argmax(&logits) == y {
                correct += 1;
            }
            total_loss += log_sum_exp(&logits) - logits[y];
        }
        let n = batch.len();
        Ok(Evaluation {
            accuracy: correct as f64 / n as f64,
            loss: total_loss / n as f64,
            correct,
            total: n,
        })
    }

    /// Predicted class for one feature row.
    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden_dim()];
        let mut logits = vec![0.0; self.num_classes];
        self.forward(&params.values, x, &mut hidden, &mut logits);
        argmax(&logits)
    }
}

impl ParamVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Hash of the exact bit patterns, used to compare trajectories.
    pub fn content_hash(&self) -> u64 {
        fnv1a(
            core::iter::once(self.fingerprint).chain(self.values.iter().map(|v| v.to_bits())),
        )
    }

    pub fn same_spec(&self, other: &ParamVector) -> Result<()> {
        if self.fingerprint != other.fingerprint || self.values.len() != other.values.len() {
            return Err(Error::SpecMismatch);
        }
        Ok(())
    }

    /// Builds a vector with the same binding from new values of equal length.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> ParamVector {
        debug_assert_eq!(values.len(), self.values.len());
        ParamVector {
            values,
            fingerprint: self.fingerprint,
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.same_spec(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyData("batch has no rows".into()));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch features"));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub(crate) fn new_unchecked(features: &'a [f64], labels: &'a [usize], input_dim: usize) -> Self {
        Self {
            features,
            labels,
            input_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &'a [f64] {
        self.features
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn rows(&self) -> impl Iterator<Item = (&'a [f64], &'a usize)> {
        self.features.chunks(self.input_dim).zip(self.labels)
    }
}

/// `out[r] = row_r · x + bias_r` over rows of `x.len() + 1`.
fn affine(p: &[f64], x: &[f64], out: &mut [f64]) {
    let w = x.len() + 1;
    for (o, row) in out.iter_mut().zip(p.chunks(w)) {
        *o = row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()];
    }
}

/// `grad[r] += g_r · [x, 1]` over rows of `x.len() + 1`.
fn outer_add(grad: &mut [f64], g: &[f64], x: &[f64]) {
    let w = x.len() + 1;
    for (row, &gr) in grad.chunks_mut(w).zip(g) {
        for (acc, &xi) in row[..x.len()].iter_mut().zip(x) {
            *acc += gr * xi;
        }
        row[x.len()] += gr;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - m);
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}
