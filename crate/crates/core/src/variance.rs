//! Model-variance mathematics for variance-monitored rounds.
//!
//! A client's local state is the pair `[‖Δ‖², sk(Δ)]`. Averaging the states of
//! a cohort gives the mean squared drift norm and a sketch of the mean drift,
//! so the variance `mean ‖Δ_k‖² − ‖mean Δ‖²` can be estimated from the average
//! alone. The exact form is used at round end, where the server holds the
//! true drifts anyway.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::param::ParamVector;
use crate::sketch::{AmsSketcher, SketchMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub drift_norm_sq: f64,
    pub drift_sketch: SketchMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub mean_norm_sq: f64,
    pub mean_sketch: SketchMatrix,
    pub cohort_size: usize,
}

pub fn local_state(sketcher: &AmsSketcher, delta: &ParamVector) -> Result<LocalState> {
    Ok(LocalState {
        drift_norm_sq: delta.norm_sq()?,
        drift_sketch: sketcher.sketch(delta)?,
    })
}

/// Arithmetic mean of both components.
pub fn aggregate(states: &[LocalState]) -> Result<GlobalState> {
    if states.is_empty() {
        return Err(Error::Empty("aggregate of no local states"));
    }
    let n = states.len();
    let w = 1.0 / n as f64;
    let sketches: Vec<&SketchMatrix> = states.iter().map(|s| &s.drift_sketch).collect();
    let mean_sketch = SketchMatrix::combine(&sketches, &vec![w; n])?;
    let mean_norm_sq = states.iter().map(|s| s.drift_norm_sq).sum::<f64>() / n as f64;
    Ok(GlobalState {
        mean_norm_sq,
        mean_sketch,
        cohort_size: n,
    })
}

/// `mean_norm_sq − F2(mean_sketch)`. Sketch noise can make this slightly
/// negative; the value is returned unclamped.
pub fn estimate_variance(g: &GlobalState) -> f64 {
    g.mean_norm_sq - g.mean_sketch.estimate_f2()
}

/// `mean_k ‖Δ_k‖² − ‖mean_k Δ_k‖²`, clamped at 0 against rounding.
pub fn exact_variance(deltas: &[ParamVector]) -> Result<f64> {
    let mean = ParamVector::mean(deltas)?;
    let mut first = 0.0;
    for d in deltas {
        first += d.norm_sq()?;
    }
    let first = first / deltas.len() as f64;
    Ok((first - mean.norm_sq()?).max(0.0))
}

/// `{e, 2e, …, ⌊τ̃/e⌋·e}`; empty when `e > τ̃`.
pub fn query_indices(e_steps: usize, tau_tilde: usize) -> Vec<usize> {
    assert!(e_steps >= 1, "e_steps must be >= 1");
    (1..=tau_tilde / e_steps).map(|m| m * e_steps).collect()
}

/// Next round's threshold under linear variance growth: the variance
/// expected at step `τ̃/2`, extrapolated from `var_t` observed after `s_t`
/// steps. A zero variance maps to `theta_min`.
pub fn threshold_adjust(var_t: f64, s_t: usize, tau_tilde: usize, theta_min: f64) -> Result<f64> {
    if s_t == 0 {
        return Err(Error::invalid("s_t", "termination step must be >= 1"));
    }
    if !(var_t >= 0.0 && var_t.is_finite()) {
        return Err(Error::invalid("var_t", format!("{var_t} must be finite and >= 0")));
    }
    if var_t == 0.0 {
        return Ok(theta_min);
    }
    Ok((tau_tilde as f64 / 2.0) / s_t as f64 * var_t)
}

/// Extended round length `2τ + 8⌈e⌉`.
pub fn extend_tau(tau: usize, e_steps: f64) -> usize {
    2 * tau + 8 * e_steps.ceil() as usize
}

/// Threshold bookkeeping carried across rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdState {
    pub theta: f64,
    pub tau_tilde: usize,
    pub last_s: usize,
    pub last_var: f64,
}

impl ThresholdState {
    /// Round-0 state: `Θ = −∞`, so the first query always terminates.
    pub fn new(tau_tilde: usize) -> Self {
        ThresholdState {
            theta: f64::NEG_INFINITY,
            tau_tilde,
            last_s: 0,
            last_var: 0.0,
        }
    }

    pub fn violated(&self, nu: f64) -> bool {
        nu > self.theta
    }

    /// Records the finished round and moves to the next threshold.
    pub fn advance(&mut self, var_t: f64, s_t: usize, theta_min: f64) -> Result<f64> {
        self.theta = threshold_adjust(var_t, s_t, self.tau_tilde, theta_min)?;
        self.last_s = s_t;
        self.last_var = var_t;
        Ok(self.theta)
    }
}

/// Source of the variance approximation queried mid-round.
pub trait VarianceProbe: Send {
    /// Variance estimate for the cohort's drifts after `step` local steps.
    fn estimate(&mut self, round: u64, step: usize, drifts: &[ParamVector]) -> Result<f64>;

    /// Bytes each client uploads per query besides the 8-byte norm.
    fn sketch_bytes(&self) -> u64;
}

/// Clients sketch their drifts; the server averages the local states and
/// applies the two-term estimator.
#[derive(Debug, Clone)]
pub struct SketchProbe {
    sketcher: AmsSketcher,
    execution: Execution,
}

impl SketchProbe {
    pub fn new(sketcher: AmsSketcher, execution: Execution) -> Self {
        SketchProbe { sketcher, execution }
    }
}

impl VarianceProbe for SketchProbe {
    fn estimate(&mut self, _round: u64, _step: usize, drifts: &[ParamVector]) -> Result<f64> {
        let states: Result<Vec<LocalState>> = self
            .execution
            .map(drifts, |d| local_state(&self.sketcher, d))
            .into_iter()
            .collect();
        Ok(estimate_variance(&aggregate(&states?)?))
    }

    fn sketch_bytes(&self) -> u64 {
        self.sketcher.config().sketch_bytes()
    }
}

/// Replays a fixed sequence of estimates, ignoring the drifts. Once the
/// script runs out it keeps returning the last value.
#[derive(Debug, Clone)]
pub struct ScriptedProbe {
    values: Vec<f64>,
    next: usize,
    sketch_bytes: u64,
}

impl ScriptedProbe {
    pub fn new(values: Vec<f64>, sketch_bytes: u64) -> Self {
        assert!(!values.is_empty(), "script must be nonempty");
        ScriptedProbe {
            values,
            next: 0,
            sketch_bytes,
        }
    }
}

impl VarianceProbe for ScriptedProbe {
    fn estimate(&mut self, _round: u64, _step: usize, _drifts: &[ParamVector]) -> Result<f64> {
        let v = self.values[self.next.min(self.values.len() - 1)];
        self.next += 1;
        Ok(v)
    }

    fn sketch_bytes(&self) -> u64 {
        self.sketch_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::SketchConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(xs: &[f64]) -> ParamVector {
        ParamVector::new(xs.to_vec()).unwrap()
    }

    fn random_deltas(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<ParamVector> {
        (0..n)
            .map(|_| pv(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    /// Σ_j population variance of coordinate j.
    fn coordinate_variance_oracle(deltas: &[ParamVector]) -> f64 {
        let n = deltas.len() as f64;
        let d = deltas[0].len();
        let mut total = 0.0;
        for j in 0..d {
            let mu = deltas.iter().map(|v| v.as_slice()[j]).sum::<f64>() / n;
            total += deltas.iter().map(|v| (v.as_slice()[j] - mu).powi(2)).sum::<f64>() / n;
        }
        total
    }

    #[test]
    fn local_state_examples() {
        let sk = AmsSketcher::new(SketchConfig::default(), 2).unwrap();
        let zero = local_state(&sk, &ParamVector::zeros(2)).unwrap();
        assert_eq!(zero.drift_norm_sq, 0.0);
        assert!(zero.drift_sketch.counters.iter().all(|c| *c == 0.0));
        let s = local_state(&sk, &pv(&[3.0, 4.0])).unwrap();
        assert_eq!(s.drift_norm_sq, 25.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = &random_deltas(&mut rng, 1, 40)[0];
        let sk = AmsSketcher::new(SketchConfig { depth: 3, width: 16, seed: 4 }, 40).unwrap();
        let s = local_state(&sk, d).unwrap();
        assert_eq!(s.drift_norm_sq, d.norm_sq().unwrap());
        assert_eq!(s.drift_sketch, sk.sketch(d).unwrap());
    }

    #[test]
    fn aggregate_examples() {
        let sk = AmsSketcher::new(SketchConfig { depth: 2, width: 8, seed: 0 }, 3).unwrap();
        let a = local_state(&sk, &pv(&[1.0, 0.0, 0.0])).unwrap();
        let g = aggregate(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(g.mean_norm_sq, a.drift_norm_sq);
        assert_eq!(g.mean_sketch, a.drift_sketch);
        assert_eq!(g.cohort_size, 2);

        let b = local_state(&sk, &pv(&[0.0, 3.0f64.sqrt(), 0.0])).unwrap();
        let g = aggregate(&[a, b]).unwrap();
        assert!((g.mean_norm_sq - 2.0).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());

        let other = AmsSketcher::new(SketchConfig { depth: 2, width: 8, seed: 1 }, 3).unwrap();
        let x = local_state(&sk, &pv(&[1.0, 2.0, 3.0])).unwrap();
        let y = local_state(&other, &pv(&[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(aggregate(&[x, y]), Err(Error::SketchConfigMismatch)));
    }

    #[test]
    fn aggregate_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let deltas = random_deltas(&mut rng, 7, 50);
        let sk = AmsSketcher::new(SketchConfig { depth: 3, width: 32, seed: 2 }, 50).unwrap();
        let states: Vec<LocalState> = deltas.iter().map(|d| local_state(&sk, d).unwrap()).collect();
        let g = aggregate(&states).unwrap();
        let mut norm = 0.0;
        let mut counters = vec![0.0; 3 * 32];
        for s in &states {
            norm += s.drift_norm_sq;
            for (c, x) in counters.iter_mut().zip(&s.drift_sketch.counters) {
                *c += x;
            }
        }
        assert!((g.mean_norm_sq - norm / 7.0).abs() < 1e-12);
        for (a, b) in g.mean_sketch.counters.iter().zip(&counters) {
            assert!((a - b / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_variance_exact_cases() {
        let sk = AmsSketcher::new(SketchConfig::default(), 10).unwrap();
        let mut v = vec![0.0; 10];
        v[4] = 1.5;
        let s = local_state(&sk, &pv(&v)).unwrap();
        let g = aggregate(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!(estimate_variance(&g), 0.0);

        let mut neg = vec![0.0; 10];
        neg[4] = -1.5;
        let a = local_state(&sk, &pv(&v)).unwrap();
        let b = local_state(&sk, &pv(&neg)).unwrap();
        assert_eq!(estimate_variance(&aggregate(&[a, b]).unwrap()), 2.25);
    }

    #[test]
    fn estimate_tracks_exact_variance() {
        let mut errs = Vec::new();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let deltas = random_deltas(&mut rng, 10, 500);
            let sk = AmsSketcher::new(SketchConfig { seed, ..SketchConfig::default() }, 500).unwrap();
            let mut probe = SketchProbe::new(sk, Execution::Sequential);
            let nu = probe.estimate(0, 1, &deltas).unwrap();
            let exact = exact_variance(&deltas).unwrap();
            errs.push((nu - exact).abs() / exact.max(1e-12));
        }
        errs.sort_by(f64::total_cmp);
        assert!(errs[50] <= 0.15, "median relative error {}", errs[50]);
    }

    #[test]
    fn exact_variance_examples() {
        let d = pv(&[0.3, -1.0, 2.0]);
        assert_eq!(exact_variance(&[d.clone(), d.clone(), d]).unwrap(), 0.0);
        let v = exact_variance(&[pv(&[1.0, 0.0]), pv(&[-1.0, 0.0])]).unwrap();
        assert_eq!(v, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let deltas = random_deltas(&mut rng, 20, 30);
        let a = exact_variance(&deltas).unwrap();
        let b = coordinate_variance_oracle(&deltas);
        assert!((a - b).abs() <= 1e-10 * b.max(1.0));
    }

    #[test]
    fn query_index_examples() {
        assert_eq!(query_indices(5, 23), vec![5, 10, 15, 20]);
        assert_eq!(query_indices(10, 100), (1..=10).map(|m| m * 10).collect::<Vec<_>>());
        assert!(query_indices(30, 20).is_empty());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_adjust(4.0, 20, 100, 1e-12).unwrap(), 10.0);
        assert_eq!(threshold_adjust(3.7, 50, 100, 1e-12).unwrap(), 3.7);
        assert_eq!(threshold_adjust(0.0, 10, 100, 1e-12).unwrap(), 1e-12);
        assert!(threshold_adjust(1.0, 0, 100, 1e-12).is_err());
    }

    #[test]
    fn extend_tau_examples() {
        assert_eq!(extend_tau(10, 10.0), 100);
        assert_eq!(extend_tau(1, 1.5), 18);
        for e in 1..30usize {
            assert_eq!(extend_tau(e, e as f64), 10 * e);
        }
    }

    #[test]
    fn bootstrap_threshold_always_violates() {
        let mut st = ThresholdState::new(100);
        assert!(st.violated(-1e300));
        assert!(st.violated(0.0));
        st.advance(2.0, 10, 1e-12).unwrap();
        assert_eq!(st.theta, 10.0);
        assert!(!st.violated(10.0));
        assert!(st.violated(10.5));
    }

    #[test]
    fn scripted_probe_replays() {
        let mut p = ScriptedProbe::new(vec![1.0, 2.0], 8);
        assert_eq!(p.estimate(0, 1, &[]).unwrap(), 1.0);
        assert_eq!(p.estimate(0, 2, &[]).unwrap(), 2.0);
        assert_eq!(p.estimate(0, 3, &[]).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn exact_variance_matches_coordinate_oracle(seed in any::<u64>(), n in 1usize..12, d in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let deltas = random_deltas(&mut rng, n, d);
            let a = exact_variance(&deltas).unwrap();
            let b = coordinate_variance_oracle(&deltas);
            prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0));
        }

        #[test]
        fn exact_variance_is_permutation_and_shift_invariant(seed in any::<u64>(), n in 2usize..10, rot in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let deltas = random_deltas(&mut rng, n, 16);
            let shift = pv(&(0..16).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let base = exact_variance(&deltas).unwrap();
            let mut perm = deltas.clone();
            perm.rotate_left(rot % n);
            prop_assert!((exact_variance(&perm).unwrap() - base).abs() <= 1e-10 * base.max(1.0));
            let shifted: Vec<ParamVector> = deltas.iter().map(|d| ParamVector::axpy(1.0, &shift, d).unwrap()).collect();
            prop_assert!((exact_variance(&shifted).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn threshold_is_positively_homogeneous(v in 0.001f64..1e3, c in 0.01f64..100.0, s in 1usize..200, tt in 1usize..400) {
            let a = threshold_adjust(c * v, s, tt, 1e-12).unwrap();
            let b = c * threshold_adjust(v, s, tt, 1e-12).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }
}
