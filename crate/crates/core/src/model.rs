//! Desk-scale differentiable models with hand-written backpropagation.
//!
//! Parameter layout (row-major, biases after weights):
//!
//! * `LogReg`: `W[c][i]` at `c * input_dim + i`, then `b[c]`.
//!   Length `(input_dim + 1) * num_classes`.
//! * `Mlp`: `W1[h][i]`, then `b1[h]`, then `W2[c][h]`, then `b2[c]`.
//!   Length `(input_dim + 1) * hidden_dim + (hidden_dim + 1) * num_classes`.
//!   Hidden activation is `tanh`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    LogReg,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn logreg(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LogReg,
            input_dim,
            num_classes,
            hidden_dim: 0,
            init_seed: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize, init_seed: u64) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_dim,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model.input_dim", "must be > 0"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("model.num_classes", "must be >= 2"));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::invalid("model.hidden_dim", "must be > 0 for an MLP"));
        }
        Ok(())
    }

    /// Parameter count `d`.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LogReg => (self.input_dim + 1) * self.num_classes,
            ModelKind::Mlp => {
                (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes
            }
        }
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                actual: w.len(),
            });
        }
        Ok(())
    }
}

/// A mini-batch of feature rows (row-major) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the given rows of `data`.
    pub fn gather(data: &Dataset, rows: &[usize]) -> Batch {
        let dim = data.input_dim;
        let mut features = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(data.row(r));
            labels.push(data.labels[r]);
        }
        Batch { features, labels }
    }
}

/// Deterministic initial parameters.
pub fn init_params(spec: &ModelSpec) -> ParamVector {
    let mut w = vec![0.0; spec.param_count()];
    if spec.kind == ModelKind::Mlp {
        let mut rng = rng::stream(spec.init_seed, Purpose::ModelInit, 0, 0);
        let (i, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
        let a1 = (6.0 / (i + h) as f64).sqrt();
        let a2 = (6.0 / (h + c) as f64).sqrt();
        for x in &mut w[..h * i] {
            *x = rng.random_range(-a1..a1);
        }
        let off2 = h * (i + 1);
        for x in &mut w[off2..off2 + c * h] {
            *x = rng.random_range(-a2..a2);
        }
    }
    ParamVector::from_vec_unchecked(w)
}

/// In-place log-softmax over `z`, returning nothing; `z` becomes log-probabilities.
fn log_softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter_mut().for_each(|v| *v -= lse);
}

/// Lowest index wins ties.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = k;
        }
    }
    best
}

/// Forward pass for one row. Fills `hidden` (MLP only) and returns logits.
fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], hidden: &mut Vec<f64>, logits: &mut Vec<f64>) {
    let (i_dim, c_dim) = (spec.input_dim, spec.num_classes);
    logits.clear();
    match spec.kind {
        ModelKind::LogReg => {
            let bias = &w[c_dim * i_dim..];
            for c in 0..c_dim {
                let row = &w[c * i_dim..(c + 1) * i_dim];
                logits.push(row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[c]);
            }
        }
        ModelKind::Mlp => {
            let h_dim = spec.hidden_dim;
            let b1 = &w[h_dim * i_dim..h_dim * (i_dim + 1)];
            hidden.clear();
            for h in 0..h_dim {
                let row = &w[h * i_dim..(h + 1) * i_dim];
                let pre = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[h];
                hidden.push(pre.tanh());
            }
            let off2 = h_dim * (i_dim + 1);
            let b2 = &w[off2 + c_dim * h_dim..];
            for c in 0..c_dim {
                let row = &w[off2 + c * h_dim..off2 + (c + 1) * h_dim];
                logits.push(row.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>() + b2[c]);
            }
        }
    }
}

/// Mean cross-entropy over `batch` and its gradient with respect to `w`.
pub fn loss_and_grad(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    spec.check_params(w)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if batch.features.len() != batch.len() * spec.input_dim {
        return Err(Error::LengthMismatch {
            expected: batch.len() * spec.input_dim,
            actual: batch.features.len(),
        });
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::invalid("label", format!("{bad} >= num_classes {}", spec.num_classes)));
    }

    let ws = w.as_slice();
    let (i_dim, c_dim, h_dim) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let mut grad = vec![0.0; ws.len()];
    let mut hidden = Vec::with_capacity(h_dim);
    let mut z = Vec::with_capacity(c_dim);
    let mut dh = vec![0.0; h_dim];
    let mut loss = 0.0;

    for (n, &y) in batch.labels.iter().enumerate() {
        let x = &batch.features[n * i_dim..(n + 1) * i_dim];
        forward(spec, ws, x, &mut hidden, &mut z);
        log_softmax(&mut z);
        loss -= z[y];
        // z now holds log p; turn it into dL/dlogits = p - onehot(y)
        for (c, v) in z.iter_mut().enumerate() {
            *v = v.exp() - if c == y { 1.0 } else { 0.0 };
        }
        match spec.kind {
            ModelKind::LogReg => {
                for c in 0..c_dim {
                    let dz = z[c];
                    for (g, xi) in grad[c * i_dim..(c + 1) * i_dim].iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                    grad[c_dim * i_dim + c] += dz;
                }
            }
            ModelKind::Mlp => {
                let off2 = h_dim * (i_dim + 1);
                dh.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..c_dim {
                    let dz = z[c];
                    let row = off2 + c * h_dim;
                    for h in 0..h_dim {
                        grad[row + h] += dz * hidden[h];
                        dh[h] += dz * ws[row + h];
                    }
                    grad[off2 + c_dim * h_dim + c] += dz;
                }
                for h in 0..h_dim {
                    let dpre = dh[h] * (1.0 - hidden[h] * hidden[h]);
                    for (g, xi) in grad[h * i_dim..(h + 1) * i_dim].iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                    grad[h_dim * i_dim + h] += dpre;
                }
            }
        }
    }

    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let loss = loss * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let grad = ParamVector::from_vec_unchecked(grad);
    grad.check_finite("gradient")?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Full-dataset mean loss and top-1 accuracy.
pub fn evaluate(spec: &ModelSpec, w: &ParamVector, data: &Dataset) -> Result<Evaluation> {
    spec.check_params(w)?;
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    if data.input_dim != spec.input_dim {
        return Err(Error::LengthMismatch {
            expected: spec.input_dim,
            actual: data.input_dim,
        });
    }
    let ws = w.as_slice();
    let mut hidden = Vec::new();
    let mut z = Vec::new();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in 0..data.len() {
        let y = data.labels[r];
        forward(spec, ws, data.row(r), &mut hidden, &mut z);
        if argmax(&z) == y {
            correct += 1;
        }
        log_softmax(&mut z);
        loss -= z.get(y).copied().ok_or_else(|| Error::invalid("label", "out of range"))?;
    }
    let loss = loss / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("evaluation loss"));
    }
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / data.len() as f64,
    })
}

/// Class probabilities for one row.
pub fn predict_proba(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Vec<f64> {
    let mut hidden = Vec::new();
    let mut z = Vec::new();
    forward(spec, w.as_slice(), x, &mut hidden, &mut z);
    log_softmax(&mut z);
    z.into_iter().map(f64::exp).collect()
}

/// Predicted class for one row.
pub fn predict(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> usize {
    let mut hidden = Vec::new();
    let mut z = Vec::new();
    forward(spec, w.as_slice(), x, &mut hidden, &mut z);
    argmax(&z)
}
