//! Linear AMS sketches and the second-moment (F2) estimator.
//!
//! Each of the `depth` rows owns a bucket hash into `[0, width)` and a ±1 sign
//! hash. Both are degree-3 polynomials over the Mersenne prime `2^61 - 1`,
//! whose coefficients come from the splitmix64 counter generator keyed by
//! `(seed, row)`. The sign is the parity bit of its polynomial, which makes
//! it 4-wise independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::{self, Purpose};

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SketchConfig {
    pub depth: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            depth: 7,
            width: 1024,
            seed: 0,
        }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("sketch.depth", "must be >= 1"));
        }
        if self.width == 0 || self.width > u32::MAX as usize {
            return Err(Error::invalid("sketch.width", "must be in [1, 2^32)"));
        }
        Ok(())
    }

    /// Payload size of one sketch in bytes (8 per counter).
    pub fn sketch_bytes(&self) -> u64 {
        (self.depth * self.width * 8) as u64
    }
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let mut s = lo + (hi & MERSENNE_61) + ((x >> 122) as u64);
    while s >= MERSENNE_61 {
        s -= MERSENNE_61;
    }
    s
}

/// Degree-3 polynomial hash over GF(2^61 - 1).
#[derive(Debug, Clone, Copy)]
struct PolyHash {
    coeffs: [u64; 4],
}

impl PolyHash {
    fn new(seed: u64, row: usize, which: u64) -> Self {
        let mut coeffs = [0u64; 4];
        for (i, c) in coeffs.iter_mut().enumerate() {
            let word = rng::derive(seed, Purpose::SketchHash, row as u64, which * 4 + i as u64);
            *c = word % MERSENNE_61;
        }
        PolyHash { coeffs }
    }

    #[inline]
    fn eval(&self, x: u64) -> u64 {
        let x = x % MERSENNE_61;
        let [a0, a1, a2, a3] = self.coeffs;
        let mut acc = a3;
        for a in [a2, a1, a0] {
            acc = mod_mersenne(acc as u128 * x as u128 + a as u128);
        }
        acc
    }
}

/// Counter grid of one sketch, row-major `depth × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    pub config: SketchConfig,
    pub counters: Vec<f64>,
}

impl SketchMatrix {
    pub fn zeros(config: SketchConfig) -> Self {
        SketchMatrix {
            counters: vec![0.0; config.depth * config.width],
            config,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.config.width;
        &self.counters[r * w..(r + 1) * w]
    }

    /// Median over rows of the row's sum of squared counters. Even depth
    /// takes the lower median.
    pub fn estimate_f2(&self) -> f64 {
        let mut rows: Vec<f64> = (0..self.config.depth)
            .map(|r| self.row(r).iter().map(|c| c * c).sum())
            .collect();
        rows.sort_by(f64::total_cmp);
        rows[(rows.len() - 1) / 2]
    }

    /// Weighted elementwise sum `Σ w_k S_k`.
    pub fn combine(sketches: &[&SketchMatrix], weights: &[f64]) -> Result<SketchMatrix> {
        let first = sketches.first().ok_or(Error::Empty("combine of no sketches"))?;
        if sketches.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: sketches.len(),
                actual: weights.len(),
            });
        }
        if sketches.iter().any(|s| s.config != first.config) {
            return Err(Error::SketchConfigMismatch);
        }
        let mut out = SketchMatrix::zeros(first.config);
        for (s, &w) in sketches.iter().zip(weights) {
            for (o, c) in out.counters.iter_mut().zip(&s.counters) {
                *o += w * c;
            }
        }
        Ok(out)
    }
}

/// Precomputed bucket and sign tables for one `(config, d)` pair.
#[derive(Debug, Clone)]
pub struct AmsSketcher {
    config: SketchConfig,
    dim: usize,
    buckets: Vec<u32>,
    signs: Vec<f64>,
}

impl AmsSketcher {
    pub fn new(config: SketchConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let mut buckets = Vec::with_capacity(config.depth * dim);
        let mut signs = Vec::with_capacity(config.depth * dim);
        for r in 0..config.depth {
            let bucket_hash = PolyHash::new(config.seed, r, 0);
            let sign_hash = PolyHash::new(config.seed, r, 1);
            for j in 0..dim {
                buckets.push((bucket_hash.eval(j as u64) % config.width as u64) as u32);
                signs.push(if sign_hash.eval(j as u64) & 1 == 1 { 1.0 } else { -1.0 });
            }
        }
        Ok(AmsSketcher {
            config,
            dim,
            buckets,
            signs,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn sketch(&self, v: &ParamVector) -> Result<SketchMatrix> {
        if v.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        v.check_finite("sketch input")?;
        let width = self.config.width;
        let mut out = SketchMatrix::zeros(self.config);
        for r in 0..self.config.depth {
            let row = &mut out.counters[r * width..(r + 1) * width];
            let base = r * self.dim;
            for (j, x) in v.as_slice().iter().enumerate() {
                row[self.buckets[base + j] as usize] += self.signs[base + j] * x;
            }
        }
        Ok(out)
    }
}

/// One-shot sketch; prefer [`AmsSketcher`] when sketching many vectors.
pub fn sketch(config: &SketchConfig, v: &ParamVector) -> Result<SketchMatrix> {
    AmsSketcher::new(*config, v.len())?.sketch(v)
}
