//! Flat dense parameter vectors.
//!
//! Every quantity the protocol moves around (models, drifts, pseudo-gradients,
//! optimizer accumulators) lives in one fixed coordinate order of length `d`.
//! Reductions always sum in ascending index / ascending client order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.check_finite("param vector")?;
        Ok(v)
    }

    /// Wraps `values` without the finiteness check. Callers check before the
    /// value escapes.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }


    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> Result<f64> {
        self.check_finite("norm_sq input")?;
        Ok(self.0.iter().map(|x| x * x).sum())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other)?;
        let s: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        if !s.is_finite() {
            return Err(Error::NonFinite("dot"));
        }
        Ok(s)
    }

    /// `a * x + y`.
    pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
        x.check_len(y)?;
        let out = ParamVector(x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect());
        out.check_finite("axpy result")?;
        Ok(out)
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other)?;
        let out = ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect());
        out.check_finite("difference")?;
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        let out = ParamVector(self.0.iter().map(|x| a * x).collect());
        out.check_finite("scaled vector")?;
        Ok(out)
    }

    /// Elementwise arithmetic mean, accumulated in sequence order.
    pub fn mean<'a, I>(vs: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = vs.into_iter();
        let first = iter.next().ok_or(Error::Empty("mean of no vectors"))?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for v in iter {
            first.check_len(v)?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
            n += 1;
        }
        let inv = n as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
        let out = ParamVector(acc);
        out.check_finite("mean")?;
        Ok(out)
    }

    /// `Σ w_k v_k / Σ w_k`, accumulated in sequence order.
    pub fn weighted_mean(vs: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
        if vs.is_empty() {
            return Err(Error::Empty("weighted mean of no vectors"));
        }
        if vs.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: vs.len(),
                actual: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be non-negative with positive sum"));
        }
        let d = vs[0].len();
        let mut acc = vec![0.0; d];
        for (v, &w) in vs.iter().zip(weights) {
            vs[0].check_len(v)?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += w * x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        let out = ParamVector(acc);
        out.check_finite("weighted mean")?;
        Ok(out)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}
