//! Differentiable classifiers over a flat parameter vector.
//!
//! Parameter layout, layer by layer, weights row-major (`out x in`) followed
//! by biases:
//!
//! * softmax regression: `W (classes x input)`, `b (classes)`
//! * one-hidden-layer MLP: `W1 (hidden x input)`, `b1 (hidden)`,
//!   `W2 (classes x hidden)`, `b2 (classes)`, with `tanh` hidden units.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::data::LabeledDataset;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter vector has length {found}, model expects {expected}")]
    ParamDim { expected: usize, found: usize },
    #[error("dataset has {found} features per sample, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("dataset has {found} classes, model expects {expected}")]
    Classes { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample index {0} out of range")]
    Index(usize),
    #[error("unknown model kind `{0}` (expected softmax or mlp1)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp1,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::SoftmaxRegression => "softmax",
            ModelKind::Mlp1 => "mlp1",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "softmax" | "softmax_regression" => Ok(ModelKind::SoftmaxRegression),
            "mlp1" | "mlp" => Ok(ModelKind::Mlp1),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
    /// Hidden width, ignored for softmax regression.
    pub hidden: usize,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::SoftmaxRegression,
            input_dim,
            classes,
            hidden: 0,
        }
    }

    pub fn mlp1(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1,
            input_dim,
            classes,
            hidden,
        }
    }

    /// Number of parameters `d`.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxRegression => self.classes * (self.input_dim + 1),
            ModelKind::Mlp1 => {
                self.hidden * (self.input_dim + 1) + self.classes * (self.hidden + 1)
            }
        }
    }

    fn check(&self, params: &[f64], data: &LabeledDataset) -> Result<(), ModelError> {
        if params.len() != self.dim() {
            return Err(ModelError::ParamDim {
                expected: self.dim(),
                found: params.len(),
            });
        }
        if data.dim() != self.input_dim {
            return Err(ModelError::InputDim {
                expected: self.input_dim,
                found: data.dim(),
            });
        }
        if data.classes() > self.classes {
            return Err(ModelError::Classes {
                expected: self.classes,
                found: data.classes(),
            });
        }
        Ok(())
    }

    // Class scores for one input; `hidden` receives the activations for mlp1.
    fn forward(&self, params: &[f64], x: &[f64], hidden: &mut [f64], scores: &mut [f64]) {
        let k = self.classes;
        match self.kind {
            ModelKind::SoftmaxRegression => {
                let n = self.input_dim;
                let (w, b) = params.split_at(k * n);
                for c in 0..k {
                    scores[c] = b[c] + dot(&w[c * n..(c + 1) * n], x);
                }
            }
            ModelKind::Mlp1 => {
                let (n, h) = (self.input_dim, self.hidden);
                let (w1, rest) = params.split_at(h * n);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                for j in 0..h {
                    hidden[j] = (b1[j] + dot(&w1[j * n..(j + 1) * n], x)).tanh();
                }
                for c in 0..k {
                    scores[c] = b2[c] + dot(&w2[c * h..(c + 1) * h], hidden);
                }
            }
        }
    }

    /// Mean cross-entropy over `batch` and its exact gradient.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        data: &LabeledDataset,
        batch: &[usize],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.check(params, data)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let k = self.classes;
        let mut grad = vec![0.0; self.dim()];
        let mut hidden = vec![0.0; self.hidden];
        let mut scores = vec![0.0; k];
        let mut dhidden = vec![0.0; self.hidden];
        let mut loss = 0.0;

        for &i in batch {
            if i >= data.len() {
                return Err(ModelError::Index(i));
            }
            let x = data.row(i);
            let y = data.label(i);
            self.forward(params, x, &mut hidden, &mut scores);
            let lse = log_sum_exp(&scores);
            loss += lse - scores[y];
            // scores <- softmax - onehot
            for (c, s) in scores.iter_mut().enumerate() {
                *s = (*s - lse).exp() - if c == y { 1.0 } else { 0.0 };
            }
            match self.kind {
                ModelKind::SoftmaxRegression => {
                    let n = self.input_dim;
                    let (gw, gb) = grad.split_at_mut(k * n);
                    for c in 0..k {
                        axpy(scores[c], x, &mut gw[c * n..(c + 1) * n]);
                        gb[c] += scores[c];
                    }
                }
                ModelKind::Mlp1 => {
                    let (n, h) = (self.input_dim, self.hidden);
                    let w2 = &params[h * n + h..h * n + h + k * h];
                    let (g1, rest) = grad.split_at_mut(h * n);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(k * h);
                    dhidden.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..k {
                        axpy(scores[c], &hidden, &mut gw2[c * h..(c + 1) * h]);
                        gb2[c] += scores[c];
                        axpy(scores[c], &w2[c * h..(c + 1) * h], &mut dhidden);
                    }
                    for j in 0..h {
                        let dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                        axpy(dz, x, &mut g1[j * n..(j + 1) * n]);
                        gb1[j] += dz;
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(
        &self,
        params: &[f64],
        data: &LabeledDataset,
        batch: &[usize],
    ) -> Result<f64, ModelError> {
        self.check(params, data)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut hidden = vec![0.0; self.hidden];
        let mut scores = vec![0.0; self.classes];
        let mut loss = 0.0;
        for &i in batch {
            if i >= data.len() {
                return Err(ModelError::Index(i));
            }
            self.forward(params, data.row(i), &mut hidden, &mut scores);
            loss += log_sum_exp(&scores) - scores[data.label(i)];
        }
        Ok(loss / batch.len() as f64)
    }

    /// Mean cross-entropy over the whole dataset.
    pub fn full_loss(&self, params: &[f64], data: &LabeledDataset) -> Result<f64, ModelError> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.loss(params, data, &all)
    }

    /// Raw class scores for one input.
    pub fn scores(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden];
        let mut scores = vec![0.0; self.classes];
        self.forward(params, x, &mut hidden, &mut scores);
        scores
    }

    /// Fraction of samples whose highest score (lowest index on ties) is the label.
    pub fn accuracy(&self, params: &[f64], data: &LabeledDataset) -> Result<f64, ModelError> {
        self.check(params, data)?;
        if data.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        Ok(self.correct_count(params, data) as f64 / data.len() as f64)
    }

    pub(crate) fn correct_count(&self, params: &[f64], data: &LabeledDataset) -> usize {
        let mut hidden = vec![0.0; self.hidden];
        let mut scores = vec![0.0; self.classes];
        (0..data.len())
            .filter(|&i| {
                self.forward(params, data.row(i), &mut hidden, &mut scores);
                argmax(&scores) == data.label(i)
            })
            .count()
    }
}

/// Index of the largest entry, the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
