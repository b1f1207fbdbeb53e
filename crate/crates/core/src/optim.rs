//! First-order optimizers used on clients and on the server.
//!
//! The server treats the averaged negative drift as a gradient, so the same
//! update rules serve both sides. Client state is rebuilt every round; the
//! server state persists for the whole run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sgdm,
    Adam,
    AdamW,
    AdaGrad,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::AdaGrad => "adagrad",
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerSpec {
            kind,
            learning_rate,
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Server side of FedAvg: plain SGD with unit step.
    pub fn fedavg_server() -> Self {
        Self::sgd(1.0)
    }

    /// Checks hyper-parameter ranges; `key` prefixes error messages.
    pub fn validate(&self, key: &str) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{key}.{name}"), format!("{v} not in [0, 1)")))
            }
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                format!("{key}.lr"),
                format!("{} must be a positive finite number", self.learning_rate),
            ));
        }
        unit("momentum", self.momentum)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("{key}.epsilon"), "must be >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("{key}.weight_decay"), "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Sgdm { buf: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, step: u64 },
    AdaGrad { acc: Vec<f64> },
}

impl OptimizerState {
    /// Zeroed accumulators for a `d`-dimensional model.
    pub fn init(spec: &OptimizerSpec, d: usize) -> Self {
        match spec.kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Sgdm => OptimizerState::Sgdm { buf: vec![0.0; d] },
            OptimizerKind::Adam | OptimizerKind::AdamW => OptimizerState::Adam {
                m: vec![0.0; d],
                v: vec![0.0; d],
                step: 0,
            },
            OptimizerKind::AdaGrad => OptimizerState::AdaGrad { acc: vec![0.0; d] },
        }
    }

    fn name(&self) -> &'static str {
        match self {
            OptimizerState::Sgd => "sgd",
            OptimizerState::Sgdm { .. } => "sgdm",
            OptimizerState::Adam { .. } => "adam",
            OptimizerState::AdaGrad { .. } => "adagrad",
        }
    }

    fn matches(&self, kind: OptimizerKind) -> bool {
        matches!(
            (self, kind),
            (OptimizerState::Sgd, OptimizerKind::Sgd)
                | (OptimizerState::Sgdm { .. }, OptimizerKind::Sgdm)
                | (OptimizerState::Adam { .. }, OptimizerKind::Adam)
                | (OptimizerState::Adam { .. }, OptimizerKind::AdamW)
                | (OptimizerState::AdaGrad { .. }, OptimizerKind::AdaGrad)
        )
    }

    fn dim(&self) -> Option<usize> {
        match self {
            OptimizerState::Sgd => None,
            OptimizerState::Sgdm { buf } => Some(buf.len()),
            OptimizerState::Adam { m, .. } => Some(m.len()),
            OptimizerState::AdaGrad { acc } => Some(acc.len()),
        }
    }
}

/// One optimizer update. Returns the new parameters and advances `state`.
///
/// `state` is left untouched when an error is returned.
pub fn step(
    spec: &OptimizerSpec,
    state: &mut OptimizerState,
    w: &ParamVector,
    g: &ParamVector,
) -> Result<ParamVector> {
    if w.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: g.len(),
        });
    }
    if !state.matches(spec.kind) {
        return Err(Error::KindMismatch {
            state: state.name(),
            spec: spec.kind.name(),
        });
    }
    if let Some(d) = state.dim() {
        if d != w.len() {
            return Err(Error::LengthMismatch {
                expected: d,
                actual: w.len(),
            });
        }
    }
    let lr = spec.learning_rate;
    let (ws, gs) = (w.as_slice(), g.as_slice());

    let (out, next) = match state {
        OptimizerState::Sgd => {
            let out: Vec<f64> = ws.iter().zip(gs).map(|(w, g)| w - lr * g).collect();
            (out, OptimizerState::Sgd)
        }
        OptimizerState::Sgdm { buf } => {
            let mu = spec.momentum;
            let buf: Vec<f64> = buf.iter().zip(gs).map(|(b, g)| mu * b + g).collect();
            let out = ws.iter().zip(&buf).map(|(w, b)| w - lr * b).collect();
            (out, OptimizerState::Sgdm { buf })
        }
        OptimizerState::Adam { m, v, step } => {
            let (b1, b2, eps) = (spec.beta1, spec.beta2, spec.epsilon);
            let t = *step + 1;
            let m: Vec<f64> = m.iter().zip(gs).map(|(m, g)| b1 * m + (1.0 - b1) * g).collect();
            let v: Vec<f64> = v.iter().zip(gs).map(|(v, g)| b2 * v + (1.0 - b2) * g * g).collect();
            let c1 = 1.0 - b1.powi(t as i32);
            let c2 = 1.0 - b2.powi(t as i32);
            let decay = if spec.kind == OptimizerKind::AdamW {
                spec.weight_decay
            } else {
                0.0
            };
            let out = ws
                .iter()
                .zip(m.iter().zip(&v))
                .map(|(w, (m, v))| {
                    let m_hat = m / c1;
                    let v_hat = v / c2;
                    w - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * decay * w
                })
                .collect();
            (out, OptimizerState::Adam { m, v, step: t })
        }
        OptimizerState::AdaGrad { acc } => {
            let eps = spec.epsilon;
            let acc: Vec<f64> = acc.iter().zip(gs).map(|(a, g)| a + g * g).collect();
            let out = ws
                .iter()
                .zip(gs.iter().zip(&acc))
                .map(|(w, (g, a))| {
                    let denom = a.sqrt() + eps;
                    // acc = 0 implies every gradient seen so far was 0
                    if denom == 0.0 {
                        *w
                    } else {
                        w - lr * g / denom
                    }
                })
                .collect();
            (out, OptimizerState::AdaGrad { acc })
        }
    };

    let out = ParamVector::from_vec_unchecked(out);
    out.check_finite("optimizer step")?;
    *state = next;
    Ok(out)
}

/// An optimizer spec paired with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, d: usize) -> Self {
        Optimizer {
            state: OptimizerState::init(&spec, d),
            spec,
        }
    }

    pub fn step(&mut self, w: &ParamVector, g: &ParamVector) -> Result<ParamVector> {
        step(&self.spec, &mut self.state, w, g)
    }
}

/// Named client/server pairings. Clients always run plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    FedAvg,
    FedAvgM,
    FedAdam,
    FedAdamW,
    FedAdaGrad,
}

impl Pairing {
    pub const ALL: [Pairing; 5] = [
        Pairing::FedAvg,
        Pairing::FedAvgM,
        Pairing::FedAdam,
        Pairing::FedAdamW,
        Pairing::FedAdaGrad,
    ];

    pub fn server_kind(self) -> OptimizerKind {
        match self {
            Pairing::FedAvg => OptimizerKind::Sgd,
            Pairing::FedAvgM => OptimizerKind::Sgdm,
            Pairing::FedAdam => OptimizerKind::Adam,
            Pairing::FedAdamW => OptimizerKind::AdamW,
            Pairing::FedAdaGrad => OptimizerKind::AdaGrad,
        }
    }

    /// Name of the fixed-round algorithm.
    pub fn fedopt_name(self) -> &'static str {
        match self {
            Pairing::FedAvg => "FedAvg",
            Pairing::FedAvgM => "FedAvgM",
            Pairing::FedAdam => "FedAdam",
            Pairing::FedAdamW => "FedAdamW",
            Pairing::FedAdaGrad => "FedAdaGrad",
        }
    }

    /// Name of the variance-monitored counterpart.
    pub fn fda_name(self) -> &'static str {
        match self {
            Pairing::FedAvg => "FDA-SGD",
            Pairing::FedAvgM => "FDA-SGDM",
            Pairing::FedAdam => "FDA-Adam",
            Pairing::FedAdamW => "FDA-AdamW",
            Pairing::FedAdaGrad => "FDA-AdaGrad",
        }
    }

    /// Client and server specs. FedAvg ignores `server_lr` and uses 1.0.
    pub fn specs(self, client_lr: f64, server_lr: f64) -> (OptimizerSpec, OptimizerSpec) {
        let server = match self {
            Pairing::FedAvg => OptimizerSpec::fedavg_server(),
            _ => OptimizerSpec::new(self.server_kind(), server_lr),
        };
        (OptimizerSpec::sgd(client_lr), server)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(xs: &[f64]) -> ParamVector {
        ParamVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn init_state_shapes() {
        assert_eq!(OptimizerState::init(&OptimizerSpec::sgd(0.1), 5), OptimizerState::Sgd);
        assert_eq!(
            OptimizerState::init(&OptimizerSpec::new(OptimizerKind::Adam, 0.1), 3),
            OptimizerState::Adam {
                m: vec![0.0; 3],
                v: vec![0.0; 3],
                step: 0
            }
        );
        assert_eq!(
            OptimizerState::init(&OptimizerSpec::new(OptimizerKind::AdaGrad, 0.1), 2),
            OptimizerState::AdaGrad { acc: vec![0.0; 2] }
        );
    }

    #[test]
    fn sgd_example() {
        let spec = OptimizerSpec::sgd(1.0);
        let mut st = OptimizerState::init(&spec, 2);
        let w = step(&spec, &mut st, &pv(&[1.0, 1.0]), &pv(&[0.5, -0.5])).unwrap();
        assert_eq!(w, pv(&[0.5, 1.5]));
    }

    #[test]
    fn adam_first_step_matches_scalar_computation() {
        let spec = OptimizerSpec {
            learning_rate: 0.001,
            ..OptimizerSpec::new(OptimizerKind::Adam, 0.001)
        };
        let mut st = OptimizerState::init(&spec, 1);
        let w = step(&spec, &mut st, &pv(&[0.0]), &pv(&[1.0])).unwrap();
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 up to rounding
        let m = 0.1f64;
        let v = 0.001f64;
        let m_hat = m / (1.0 - 0.9f64);
        let v_hat = v / (1.0 - 0.999f64);
        let expected = 0.0 - 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((w.as_slice()[0] - expected).abs() < 1e-15);
        assert!((w.as_slice()[0] + 0.00099999999).abs() < 1e-14);
        match st {
            OptimizerState::Adam { m, v, step } => {
                assert!((m[0] - 0.1).abs() < 1e-15);
                assert!((v[0] - 0.001).abs() < 1e-15);
                assert_eq!(step, 1);
            }
            other => panic!("unexpected state {other:?}"),
        }
    }

    #[test]
    fn adagrad_example() {
        let spec = OptimizerSpec {
            epsilon: 0.0,
            ..OptimizerSpec::new(OptimizerKind::AdaGrad, 0.1)
        };
        let mut st = OptimizerState::init(&spec, 1);
        let w = step(&spec, &mut st, &pv(&[2.0]), &pv(&[3.0])).unwrap();
        assert!((w.as_slice()[0] - 1.9).abs() < 1e-15);
        assert_eq!(st, OptimizerState::AdaGrad { acc: vec![9.0] });
    }

    #[test]
    fn mismatches_are_errors_and_leave_state_alone() {
        let spec = OptimizerSpec::new(OptimizerKind::Adam, 0.1);
        let mut st = OptimizerState::init(&OptimizerSpec::sgd(0.1), 2);
        assert!(matches!(
            step(&spec, &mut st, &pv(&[0.0, 0.0]), &pv(&[1.0, 1.0])),
            Err(Error::KindMismatch { .. })
        ));
        let mut st = OptimizerState::init(&spec, 2);
        assert!(step(&spec, &mut st, &pv(&[0.0]), &pv(&[1.0, 1.0])).is_err());
        let before = st.clone();
        let huge = OptimizerSpec::sgd(f64::MAX);
        let mut sgd_state = OptimizerState::Sgd;
        assert!(step(&huge, &mut sgd_state, &pv(&[0.0]), &pv(&[f64::MAX])).is_err());
        assert_eq!(st, before);
    }

    #[test]
    fn zero_gradient_behaviour() {
        let w = pv(&[1.0, -2.0, 3.0]);
        let z = ParamVector::zeros(3);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Sgdm, OptimizerKind::Adam, OptimizerKind::AdaGrad] {
            let mut opt = Optimizer::new(OptimizerSpec::new(kind, 0.1), 3);
            let out = opt.step(&w, &z).unwrap();
            assert_eq!(out, w, "{kind:?}");
        }
        let spec = OptimizerSpec::new(OptimizerKind::AdamW, 0.1);
        let mut opt = Optimizer::new(spec, 3);
        let out = opt.step(&w, &z).unwrap();
        for (o, x) in out.as_slice().iter().zip(w.as_slice()) {
            assert_eq!(*o, x - 0.1 * 0.01 * x);
        }
    }

    #[test]
    fn fedavg_server_step_is_mean_of_client_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let d = rng.random_range(1..40);
            let wt = pv(&(0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let clients: Vec<ParamVector> = (0..rng.random_range(1..8))
                .map(|_| pv(&(0..d).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
                .collect();
            let drifts: Vec<ParamVector> = clients.iter().map(|c| c.sub(&wt).unwrap()).collect();
            let mean_drift = ParamVector::mean(&drifts).unwrap();
            let g = mean_drift.scale(-1.0).unwrap();
            let mut opt = Optimizer::new(OptimizerSpec::fedavg_server(), d);
            let next = opt.step(&wt, &g).unwrap();
            let expected = ParamVector::axpy(1.0, &mean_drift, &wt).unwrap();
            assert_eq!(next, expected);
            let mean_model = ParamVector::mean(&clients).unwrap();
            for (a, b) in next.as_slice().iter().zip(mean_model.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_optimizer_descends_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w0 = pv(&(0..10).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let f = |w: &ParamVector| 0.5 * w.norm_sq().unwrap();
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Sgdm,
            OptimizerKind::Adam,
            OptimizerKind::AdamW,
            OptimizerKind::AdaGrad,
        ] {
            let mut opt = Optimizer::new(OptimizerSpec::new(kind, 0.01), 10);
            let mut w = w0.clone();
            for _ in 0..100 {
                let g = w.clone();
                w = opt.step(&w, &g).unwrap();
            }
            assert!(f(&w) < f(&w0), "{kind:?} did not descend");
        }
    }

    #[test]
    fn pairing_specs() {
        let (c, s) = Pairing::FedAvg.specs(0.05, 0.3);
        assert_eq!(c, OptimizerSpec::sgd(0.05));
        assert_eq!(s, OptimizerSpec::fedavg_server());
        let (_, s) = Pairing::FedAdaGrad.specs(0.05, 0.3);
        assert_eq!(s.kind, OptimizerKind::AdaGrad);
        assert_eq!(s.learning_rate, 0.3);
    }

    #[test]
    fn validation_names_the_key() {
        let mut spec = OptimizerSpec::new(OptimizerKind::Adam, 0.1);
        spec.beta2 = 1.0;
        let err = spec.validate("server_opt").unwrap_err().to_string();
        assert!(err.contains("server_opt.beta2"), "{err}");
        let spec = OptimizerSpec::sgd(-1.0);
        assert!(spec.validate("client").unwrap_err().to_string().contains("client.lr"));
    }

    proptest! {
        #[test]
        fn step_is_deterministic(
            xs in prop::collection::vec(-10f64..10.0, 1..16),
            gs_seed in any::<u64>(),
            kind_ix in 0usize..5,
        ) {
            let kinds = [OptimizerKind::Sgd, OptimizerKind::Sgdm, OptimizerKind::Adam, OptimizerKind::AdamW, OptimizerKind::AdaGrad];
            let mut rng = ChaCha8Rng::seed_from_u64(gs_seed);
            let g = pv(&xs.iter().map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let w = pv(&xs);
            let spec = OptimizerSpec::new(kinds[kind_ix], 0.05);
            let mut s1 = OptimizerState::init(&spec, xs.len());
            let mut s2 = s1.clone();
            let a = step(&spec, &mut s1, &w, &g).unwrap();
            let b = step(&spec, &mut s2, &w, &g).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(s1, s2);
        }
    }
}
