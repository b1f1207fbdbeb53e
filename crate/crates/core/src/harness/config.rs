//! Experiment configuration, read from TOML.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{PartitionSpec, SyntheticSpec};
use crate::engine::{Algorithm, DEFAULT_THETA_MIN};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::{OptimizerSpec, Pairing};
use crate::sketch::SketchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    #[serde(rename = "fedopt")]
    FedOpt,
    FdaOpt,
    Both,
}

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::FedOpt => vec![Algorithm::FedOpt],
            AlgorithmChoice::FdaOpt => vec![Algorithm::FdaOpt],
            AlgorithmChoice::Both => vec![Algorithm::FedOpt, Algorithm::FdaOpt],
        }
    }
}

/// Which figure of merit the summary reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryMetric {
    #[default]
    RoundsToTarget,
    BestAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub client_lr: f64,
    pub server_lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            client_lr: 0.1,
            server_lr: 1.0,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalSection {
    /// Local steps per round, in epochs of the mean client shard.
    pub tau_epochs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_tilde: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_every: Option<usize>,
    pub theta_min: f64,
    pub weighted_average: bool,
}

impl Default for LocalSection {
    fn default() -> Self {
        LocalSection {
            tau_epochs: 1.0,
            tau: None,
            tau_tilde: None,
            query_every: None,
            theta_min: DEFAULT_THETA_MIN,
            weighted_average: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    LogReg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelChoice,
    pub hidden_dim: usize,
    /// Fixed initialisation seed; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelChoice::LogReg,
            hidden_dim: 32,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Synthetic {
        #[serde(default = "defaults::input_dim")]
        input_dim: usize,
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
        #[serde(default = "defaults::holdout_per_class")]
        holdout_per_class: usize,
        /// Fixed data seed; defaults to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        /// Held-out set; the training file is used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_path: Option<PathBuf>,
    },
}

mod defaults {
    pub fn input_dim() -> usize {
        20
    }
    pub fn num_classes() -> usize {
        10
    }
    pub fn samples_per_class() -> usize {
        100
    }
    pub fn separation() -> f64 {
        4.0
    }
    pub fn holdout_per_class() -> usize {
        100
    }
}

impl DataSection {
    pub fn synthetic_spec(&self, run_seed: u64) -> Option<SyntheticSpec> {
        match *self {
            DataSection::Synthetic {
                input_dim,
                num_classes,
                samples_per_class,
                separation,
                seed,
                ..
            } => Some(SyntheticSpec {
                input_dim,
                num_classes,
                samples_per_class,
                separation,
                seed: seed.unwrap_or(run_seed),
            }),
            DataSection::Csv { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub num_clients: usize,
    pub alpha: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            num_clients: 10,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    /// Clients per round; defaults to all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[allow(clippy::derivable_impls)]
impl Default for CohortSection {
    fn default() -> Self {
        CohortSection { size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub fractions: Vec<f64>,
    /// Supplied ceiling; measured per seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            fractions: vec![0.9, 0.95],
            baseline_accuracy: None,
            baseline_epochs: 30,
            baseline_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub client_lrs: Vec<f64>,
    pub server_lrs: Vec<f64>,
    /// Round budget per cell; defaults to `rounds`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            client_lrs: vec![1e-3, 1e-2, 1e-1],
            server_lrs: vec![1e-3, 1e-2, 1e-1, 1.0],
            rounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub tau_epochs: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            tau_epochs: vec![1.0, 2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: AlgorithmChoice,
    #[serde(default = "default_pairing")]
    pub pairing: Pairing,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub summary_metric: SummaryMetric,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub local: LocalSection,
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub cohort: CohortSection,
    #[serde(default)]
    pub sketch: SketchConfig,
    #[serde(default)]
    pub targets: TargetSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_pairing() -> Pairing {
    Pairing::FedAvg
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_rounds() -> usize {
    100
}
fn default_batch_size() -> usize {
    8
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(key, format!("{v} must be finite and > 0")))
    }
}

pub(crate) fn lr_list(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(key, "must be nonempty"));
    }
    v.iter().try_for_each(|&x| positive(key, x))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("name", "must be nonempty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "must be nonempty"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        let (client, server) = self.optimizer_specs();
        client.validate("optimizer.client_lr")?;
        server.validate("optimizer")?;
        positive("optimizer.client_lr", self.optimizer.client_lr)?;
        positive("optimizer.server_lr", self.optimizer.server_lr)?;
        positive("local.tau_epochs", self.local.tau_epochs)?;
        positive("local.theta_min", self.local.theta_min)?;
        if self.local.tau == Some(0) {
            return Err(Error::invalid("local.tau", "must be >= 1"));
        }
        if self.local.tau_tilde == Some(0) {
            return Err(Error::invalid("local.tau_tilde", "must be >= 1"));
        }
        if self.local.query_every == Some(0) {
            return Err(Error::invalid("local.query_every", "must be >= 1"));
        }
        if self.model.kind == ModelChoice::Mlp && self.model.hidden_dim == 0 {
            return Err(Error::invalid("model.hidden_dim", "must be >= 1"));
        }
        match &self.data {
            DataSection::Synthetic {
                input_dim,
                num_classes,
                samples_per_class,
                separation,
                holdout_per_class,
                ..
            } => {
                if *input_dim == 0 {
                    return Err(Error::invalid("data.input_dim", "must be >= 1"));
                }
                if *num_classes < 2 {
                    return Err(Error::invalid("data.num_classes", "must be >= 2"));
                }
                if *samples_per_class == 0 {
                    return Err(Error::invalid("data.samples_per_class", "must be >= 1"));
                }
                if !(*separation >= 0.0 && separation.is_finite()) {
                    return Err(Error::invalid("data.separation", "must be finite and >= 0"));
                }
                if *holdout_per_class == 0 {
                    return Err(Error::invalid("data.holdout_per_class", "must be >= 1"));
                }
            }
            DataSection::Csv { path, .. } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::invalid("data.path", "must be nonempty"));
                }
            }
        }
        PartitionSpec {
            num_clients: self.partition.num_clients,
            alpha: self.partition.alpha,
            seed: 0,
        }
        .validate()?;
        if let Some(n) = self.cohort.size {
            if n == 0 || n > self.partition.num_clients {
                return Err(Error::invalid(
                    "cohort.size",
                    format!("{n} not in [1, {}]", self.partition.num_clients),
                ));
            }
        }
        self.sketch.validate()?;
        let f = &self.targets.fractions;
        if f.is_empty() {
            return Err(Error::invalid("targets.fractions", "must be nonempty"));
        }
        if f.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::invalid("targets.fractions", "values must lie in (0, 1]"));
        }
        if f.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("targets.fractions", "must be strictly ascending"));
        }
        if let Some(b) = self.targets.baseline_accuracy {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::invalid("targets.baseline_accuracy", format!("{b} not in (0, 1]")));
            }
        }
        positive("targets.baseline_lr", self.targets.baseline_lr)?;
        lr_list("grid.client_lrs", &self.grid.client_lrs)?;
        lr_list("grid.server_lrs", &self.grid.server_lrs)?;
        if self.grid.rounds == Some(0) {
            return Err(Error::invalid("grid.rounds", "must be >= 1"));
        }
        if self.sweep.tau_epochs.is_empty() {
            return Err(Error::invalid("sweep.tau_epochs", "must be nonempty"));
        }
        self.sweep
            .tau_epochs
            .iter()
            .try_for_each(|&t| positive("sweep.tau_epochs", t))?;
        Ok(())
    }

    /// Client and server optimizer specs for the configured pairing.
    pub fn optimizer_specs(&self) -> (OptimizerSpec, OptimizerSpec) {
        let o = &self.optimizer;
        let (client, mut server) = self.pairing.specs(o.client_lr, o.server_lr);
        server.momentum = o.momentum;
        server.beta1 = o.beta1;
        server.beta2 = o.beta2;
        server.epsilon = o.epsilon;
        server.weight_decay = o.weight_decay;
        (client, server)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses and validates a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_overrides(text, &[])
}

/// Like [`parse_config`], with `key.path=value` overrides applied to the
/// document first. Values are read as TOML literals and fall back to plain
/// strings.
pub fn parse_config_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for (key, value) in overrides {
        set_path(&mut doc, key, parse_value(value))?;
    }
    let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(key, "malformed override key"));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(key, format!("`{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
