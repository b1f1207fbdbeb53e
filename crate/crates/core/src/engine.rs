//! The round loop for fixed-length and variance-monitored federated training.
//!
//! Every round broadcasts `w_t` to a sampled cohort, runs local SGD on each
//! client, averages the drifts into a pseudo-gradient and hands it to the
//! server optimizer. In [`Algorithm::FdaOpt`] the clients pause at each query
//! index, the server estimates the model variance from their local states
//! and the round ends early once the estimate exceeds the threshold.

use serde::{Deserialize, Serialize};

use crate::data::{mean_shard_size, sample_cohort, CohortSpec, Dataset, FederatedDataset, ShardBatcher};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{evaluate, init_params, loss_and_grad, Batch, ModelSpec};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::param::ParamVector;
use crate::rng::{self, Purpose};
use crate::sketch::{AmsSketcher, SketchConfig};
use crate::variance::{self, exact_variance, query_indices, SketchProbe, ThresholdState, VarianceProbe};

pub const DEFAULT_THETA_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[serde(rename = "fedopt")]
    FedOpt,
    FdaOpt,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedOpt => "fedopt",
            Algorithm::FdaOpt => "fda-opt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub algorithm: Algorithm,
    pub client_opt: OptimizerSpec,
    pub server_opt: OptimizerSpec,
    /// Local steps per round for FedOpt, and the base of `τ̃` for FDA-Opt.
    pub tau: usize,
    /// Overrides `2τ + 8⌈e⌉`.
    pub tau_tilde: Option<usize>,
    /// Steps between variance queries; defaults to `⌈e⌉`.
    pub query_every: Option<usize>,
    pub total_rounds: usize,
    pub sketch: SketchConfig,
    pub cohort: CohortSpec,
    pub batch_size: usize,
    pub seed: u64,
    pub weighted_average: bool,
    pub theta_min: f64,
    /// Pins the threshold for every round, `+∞` included.
    pub theta_override: Option<f64>,
    pub execution: Execution,
}

impl EngineConfig {
    pub fn new(algorithm: Algorithm, client_opt: OptimizerSpec, server_opt: OptimizerSpec) -> Self {
        EngineConfig {
            algorithm,
            client_opt,
            server_opt,
            tau: 1,
            tau_tilde: None,
            query_every: None,
            total_rounds: 1,
            sketch: SketchConfig::default(),
            cohort: CohortSpec { cohort_size: 1, seed: 0 },
            batch_size: 1,
            seed: 0,
            weighted_average: false,
            theta_min: DEFAULT_THETA_MIN,
            theta_override: None,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.client_opt.validate("client_opt")?;
        self.server_opt.validate("server_opt")?;
        self.sketch.validate()?;
        if self.tau == 0 {
            return Err(Error::invalid("tau", "must be >= 1"));
        }
        if self.tau_tilde == Some(0) {
            return Err(Error::invalid("tau_tilde", "must be >= 1"));
        }
        if self.query_every == Some(0) {
            return Err(Error::invalid("query_every", "must be >= 1"));
        }
        if self.total_rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.theta_min > 0.0 && self.theta_min.is_finite()) {
            return Err(Error::invalid("theta_min", "must be finite and > 0"));
        }
        if matches!(self.theta_override, Some(t) if t.is_nan()) {
            return Err(Error::invalid("theta_override", "must not be NaN"));
        }
        Ok(())
    }
}

/// One variance query inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub step: usize,
    pub nu: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub cohort: Vec<usize>,
    /// Local steps every cohort client ran this round.
    pub steps: usize,
    pub exact_var: f64,
    /// Threshold in force during the round; `None` for FedOpt.
    pub theta: Option<f64>,
    pub queries: Vec<QueryRecord>,
    /// Mean minibatch loss over all local steps of the cohort.
    pub local_loss: f64,
    /// Loss of `w_{t+1}` on the pooled training data.
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Cumulative local steps through this round.
    pub wall_steps: u64,
}

/// Bytes moved in one round. Model traffic is a broadcast and an upload of
/// `d` doubles per client; each query adds a norm plus sketch upload and a
/// one-double broadcast.
pub fn communication_bytes(cohort_size: usize, d: usize, queries: usize, sketch_bytes: u64) -> (u64, u64) {
    let n = cohort_size as u64;
    let model = n * d as u64 * 8;
    let q = queries as u64;
    (model + q * n * (8 + sketch_bytes), model + q * n * 8)
}

struct Client {
    w: ParamVector,
    opt: Optimizer,
    batcher: ShardBatcher,
    steps: usize,
    loss_sum: f64,
    failure: Option<Error>,
}

impl Client {
    fn advance(&mut self, spec: &ModelSpec, data: &Dataset, until: usize) -> Result<()> {
        while self.steps < until {
            let batch = Batch::gather(data, self.batcher.next_rows());
            let (loss, g) = loss_and_grad(spec, &self.w, &batch)?;
            self.w = self.opt.step(&self.w, &g)?;
            self.loss_sum += loss;
            self.steps += 1;
        }
        Ok(())
    }
}

/// Outcome of a training run. A failed round stops the run; the rounds
/// completed before it are kept.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub params: ParamVector,
    pub failure: Option<String>,
}

/// Training state carried across rounds.
pub struct Simulation<'a> {
    config: EngineConfig,
    model: ModelSpec,
    data: &'a FederatedDataset,
    eval: &'a Dataset,
    w: ParamVector,
    server: Optimizer,
    threshold: ThresholdState,
    e_steps: f64,
    queries: Vec<usize>,
    probe: Box<dyn VarianceProbe + 'a>,
    round: u64,
    wall_steps: u64,
}

impl<'a> Simulation<'a> {
    /// Starts from the model's initial parameters. `eval` is the held-out set
    /// used for accuracy.
    pub fn new(config: EngineConfig, model: ModelSpec, data: &'a FederatedDataset, eval: &'a Dataset) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if data.data.input_dim != model.input_dim || eval.input_dim != model.input_dim {
            return Err(Error::invalid("model.input_dim", "does not match the dataset"));
        }
        if data.data.num_classes > model.num_classes || eval.num_classes > model.num_classes {
            return Err(Error::invalid("model.num_classes", "smaller than the dataset's label range"));
        }
        if data.shards.iter().any(|s| s.is_empty()) {
            return Err(Error::Dataset("every client shard must be nonempty".into()));
        }
        sample_cohort(data.num_clients(), &config.cohort, 0)?;

        let d = model.param_count();
        let e_steps = mean_shard_size(data, config.batch_size);
        let tau_tilde = match config.algorithm {
            Algorithm::FedOpt => config.tau,
            Algorithm::FdaOpt => config.tau_tilde.unwrap_or_else(|| variance::extend_tau(config.tau, e_steps)),
        };
        let every = config.query_every.unwrap_or(e_steps.ceil() as usize).max(1);
        let sketcher = AmsSketcher::new(config.sketch, d)?;
        let mut threshold = ThresholdState::new(tau_tilde);
        if let Some(t) = config.theta_override {
            threshold.theta = t;
        }
        Ok(Simulation {
            w: init_params(&model),
            server: Optimizer::new(config.server_opt, d),
            probe: Box::new(SketchProbe::new(sketcher, config.execution)),
            queries: query_indices(every, tau_tilde),
            threshold,
            e_steps,
            model,
            data,
            eval,
            config,
            round: 0,
            wall_steps: 0,
        })
    }

    /// Replaces the sketch-based variance estimator.
    pub fn with_probe(mut self, probe: Box<dyn VarianceProbe + 'a>) -> Self {
        self.probe = probe;
        self
    }

    /// Replaces the starting parameters.
    pub fn with_params(mut self, w: ParamVector) -> Result<Self> {
        if w.len() != self.model.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.model.param_count(),
                actual: w.len(),
            });
        }
        self.w = w;
        Ok(self)
    }

    pub fn params(&self) -> &ParamVector {
        &self.w
    }

    pub fn theta(&self) -> f64 {
        self.threshold.theta
    }

    pub fn tau_tilde(&self) -> usize {
        self.threshold.tau_tilde
    }

    pub fn query_steps(&self) -> &[usize] {
        &self.queries
    }

    pub fn e_steps(&self) -> f64 {
        self.e_steps
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Runs one round and advances to the next. On error the state is left
    /// at the start of the failed round.
    pub fn step_round(&mut self) -> Result<RoundRecord> {
        let t = self.round;
        let cfg = &self.config;
        let cohort = sample_cohort(self.data.num_clients(), &cfg.cohort, t)?;
        let d = self.model.param_count();
        let mut clients: Vec<Client> = cohort
            .iter()
            .map(|&k| Client {
                w: self.w.clone(),
                opt: Optimizer::new(cfg.client_opt, d),
                batcher: ShardBatcher::new(
                    &self.data.shards[k],
                    rng::derive(cfg.seed, Purpose::Batch, t, k as u64),
                    cfg.batch_size,
                ),
                steps: 0,
                loss_sum: 0.0,
                failure: None,
            })
            .collect();

        let mut queries = Vec::new();
        let steps = match cfg.algorithm {
            Algorithm::FedOpt => {
                self.advance_all(&mut clients, cfg.tau)?;
                cfg.tau
            }
            Algorithm::FdaOpt => {
                let theta = self.threshold.theta;
                let mut stop = None;
                for &q in &self.queries {
                    self.advance_all(&mut clients, q)?;
                    let drifts = self.drifts(&clients)?;
                    let nu = self.probe.estimate(t, q, &drifts)?;
                    queries.push(QueryRecord { step: q, nu, theta });
                    if self.threshold.violated(nu) {
                        stop = Some(q);
                        break;
                    }
                }
                match stop {
                    Some(q) => q,
                    None => {
                        let tt = self.threshold.tau_tilde;
                        self.advance_all(&mut clients, tt)?;
                        tt
                    }
                }
            }
        };

        let drifts = self.drifts(&clients)?;
        let mean_drift = if self.config.weighted_average {
            let refs: Vec<&ParamVector> = drifts.iter().collect();
            let weights: Vec<f64> = cohort.iter().map(|&k| self.data.shards[k].len() as f64).collect();
            ParamVector::weighted_mean(&refs, &weights)?
        } else {
            ParamVector::mean(&drifts)?
        };
        let pseudo_grad = mean_drift.scale(-1.0)?;
        let exact_var = exact_variance(&drifts)?;
        let mut server = self.server.clone();
        let w_next = server.step(&self.w, &pseudo_grad)?;

        let train = evaluate(&self.model, &w_next, &self.data.data)?;
        let held_out = evaluate(&self.model, &w_next, self.eval)?;

        let theta = match self.config.algorithm {
            Algorithm::FedOpt => None,
            Algorithm::FdaOpt => Some(self.threshold.theta),
        };
        if self.config.algorithm == Algorithm::FdaOpt {
            match self.config.theta_override {
                Some(t) => {
                    self.threshold.last_s = steps;
                    self.threshold.last_var = exact_var;
                    self.threshold.theta = t;
                }
                None => {
                    self.threshold.advance(exact_var, steps, self.config.theta_min)?;
                }
            }
        }

        let sketch_bytes = self.probe.sketch_bytes();
        let (bytes_up, bytes_down) = communication_bytes(cohort.len(), d, queries.len(), sketch_bytes);
        let local_loss = clients.iter().map(|c| c.loss_sum).sum::<f64>() / (steps * clients.len()) as f64;
        self.w = w_next;
        self.server = server;
        self.round += 1;
        self.wall_steps += steps as u64;
        Ok(RoundRecord {
            round: t,
            cohort,
            steps,
            exact_var,
            theta,
            queries,
            local_loss,
            train_loss: train.loss,
            eval_loss: held_out.loss,
            eval_accuracy: held_out.accuracy,
            bytes_up,
            bytes_down,
            wall_steps: self.wall_steps,
        })
    }

    fn advance_all(&self, clients: &mut [Client], until: usize) -> Result<()> {
        let model = &self.model;
        let data = &self.data.data;
        self.config.execution.for_each_mut(clients, |c| {
            if c.failure.is_none() {
                c.failure = c.advance(model, data, until).err();
            }
        });
        match clients.iter_mut().find_map(|c| c.failure.take()) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn drifts(&self, clients: &[Client]) -> Result<Vec<ParamVector>> {
        clients.iter().map(|c| c.w.sub(&self.w)).collect()
    }
}

/// Runs `config.total_rounds` rounds from the model's initial parameters.
/// Setup errors are returned; a round failure ends the run early and is
/// reported in [`TrainingRun::failure`].
pub fn run_training(
    config: &EngineConfig,
    data: &FederatedDataset,
    eval: &Dataset,
    model: &ModelSpec,
) -> Result<TrainingRun> {
    let mut sim = Simulation::new(config.clone(), *model, data, eval)?;
    let mut records = Vec::with_capacity(config.total_rounds);
    let mut failure = None;
    for _ in 0..config.total_rounds {
        match sim.step_round() {
            Ok(r) => records.push(r),
            Err(e) => {
                failure = Some(format!("round {}: {e}", sim.round()));
                break;
            }
        }
    }
    Ok(TrainingRun {
        records,
        params: sim.w,
        failure,
    })
}

/// One FedOpt round from `w_t`.
pub fn run_round_fedopt(
    w_t: &ParamVector,
    round: u64,
    config: &EngineConfig,
    model: &ModelSpec,
    data: &FederatedDataset,
    eval: &Dataset,
) -> Result<(ParamVector, RoundRecord)> {
    let cfg = EngineConfig {
        algorithm: Algorithm::FedOpt,
        ..config.clone()
    };
    let mut sim = Simulation::new(cfg, *model, data, eval)?.with_params(w_t.clone())?;
    sim.round = round;
    let rec = sim.step_round()?;
    Ok((sim.w, rec))
}

/// One FDA-Opt round from `w_t` under threshold `theta_t`. Returns the next
/// parameters and threshold.
pub fn run_round_fdaopt(
    w_t: &ParamVector,
    round: u64,
    theta_t: f64,
    config: &EngineConfig,
    model: &ModelSpec,
    data: &FederatedDataset,
    eval: &Dataset,
) -> Result<(ParamVector, f64, RoundRecord)> {
    let cfg = EngineConfig {
        algorithm: Algorithm::FdaOpt,
        ..config.clone()
    };
    let mut sim = Simulation::new(cfg, *model, data, eval)?.with_params(w_t.clone())?;
    sim.round = round;
    sim.threshold.theta = theta_t;
    let rec = sim.step_round()?;
    Ok((sim.w, sim.threshold.theta, rec))
}
