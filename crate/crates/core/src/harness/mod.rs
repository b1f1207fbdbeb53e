//! Experiment front end: config-driven runs, centralized baselines,
//! rounds-to-target evaluation, learning-rate grids, τ sweeps and metrics
//! export.

mod config;
mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Serialize, Serializer};

pub use config::*;
pub use metrics::*;

use crate::data::{dirichlet_partition, mean_shard_size, synth_generate, synth_holdout, CohortSpec, Dataset, FederatedDataset, PartitionSpec, ShardBatcher};
use crate::engine::{run_training, Algorithm, EngineConfig, RoundRecord, TrainingRun};
use crate::error::{Error, Result};
use crate::model::{evaluate, init_params, loss_and_grad, Batch, ModelSpec};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::rng::{self, Purpose};

/// Marker for a target that was never reached.
pub const NOT_CONVERGED: &str = "×";

/// Rounds to a target, or non-convergence. Serialises as a number or `×`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Reach(pub Option<usize>);

impl Reach {
    pub fn rounds(self) -> Option<usize> {
        self.0
    }

    /// Lower median, with non-convergence ordered above every count.
    pub fn median(values: &[Reach]) -> Reach {
        assert!(!values.is_empty(), "median of nothing");
        let mut v = values.to_vec();
        v.sort_by_key(|r| r.0.unwrap_or(usize::MAX));
        v[(v.len() - 1) / 2]
    }
}

impl std::fmt::Display for Reach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str(NOT_CONVERGED),
        }
    }
}

impl Serialize for Reach {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(n) => s.serialize_u64(n as u64),
            None => s.serialize_str(NOT_CONVERGED),
        }
    }
}

fn ratio_or_marker<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str(NOT_CONVERGED),
    }
}

/// 1-based index of the first round whose accuracy is at least
/// `fraction · baseline`.
pub fn rounds_to_target(history: &[RoundRecord], baseline: f64, fraction: f64) -> Option<usize> {
    let target = fraction * baseline;
    history.iter().position(|r| r.eval_accuracy >= target).map(|i| i + 1)
}

/// `rounds_fedopt / rounds_fdaopt`; `None` when either side never converged.
pub fn speedup(rounds_fedopt: Option<usize>, rounds_fdaopt: Option<usize>) -> Option<f64> {
    match (rounds_fedopt, rounds_fdaopt) {
        (Some(a), Some(b)) if a > 0 && b > 0 => Some(a as f64 / b as f64),
        _ => None,
    }
}

/// Trains on the pooled data with minibatch `opt` and returns the best
/// held-out accuracy seen, the initial model included.
pub fn centralized_baseline(
    model: &ModelSpec,
    train: &Dataset,
    eval: &Dataset,
    epochs: usize,
    opt: OptimizerSpec,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be >= 1"));
    }
    opt.validate("targets.baseline_lr")?;
    let mut w = init_params(model);
    let mut best = evaluate(model, &w, eval)?.accuracy;
    let rows: Vec<usize> = (0..train.len()).collect();
    let mut batcher = ShardBatcher::new(&rows, rng::derive(seed, Purpose::Centralized, 0, 0), batch_size);
    let mut optimizer = Optimizer::new(opt, w.len());
    let steps_per_epoch = train.len().div_ceil(batch_size);
    for _ in 0..epochs {
        for _ in 0..steps_per_epoch {
            let (_, g) = loss_and_grad(model, &w, &Batch::gather(train, batcher.next_rows()))?;
            w = optimizer.step(&w, &g)?;
        }
        best = best.max(evaluate(model, &w, eval)?.accuracy);
    }
    Ok(best)
}

/// Training and held-out data for one seed.
pub fn load_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSection::Synthetic { holdout_per_class, .. } => {
            let spec = cfg.data.synthetic_spec(seed).expect("synthetic section");
            Ok((synth_generate(&spec)?, synth_holdout(&spec, *holdout_per_class)?))
        }
        DataSection::Csv { path, eval_path } => {
            let train = Dataset::from_csv_path(path)?;
            let eval = match eval_path {
                Some(p) => Dataset::from_csv_path(p)?,
                None => train.clone(),
            };
            if eval.input_dim != train.input_dim {
                return Err(Error::Dataset(format!(
                    "evaluation file has {} features, training file {}",
                    eval.input_dim, train.input_dim
                )));
            }
            Ok((train, eval))
        }
    }
}

pub fn model_spec(cfg: &ExperimentConfig, train: &Dataset, eval: &Dataset, seed: u64) -> ModelSpec {
    let classes = train.num_classes.max(eval.num_classes);
    match cfg.model.kind {
        ModelChoice::LogReg => ModelSpec::logreg(train.input_dim, classes),
        ModelChoice::Mlp => ModelSpec::mlp(
            train.input_dim,
            cfg.model.hidden_dim,
            classes,
            cfg.model.init_seed.unwrap_or(seed),
        ),
    }
}

/// Everything a run needs for one seed.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub seed: u64,
    pub model: ModelSpec,
    pub data: FederatedDataset,
    pub eval: Dataset,
    /// Mean client epoch length in steps.
    pub e_steps: f64,
    pub baseline: f64,
}

/// Loads and partitions the data and settles the baseline accuracy.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedRun> {
    let (train, eval) = load_datasets(cfg, seed)?;
    let model = model_spec(cfg, &train, &eval, seed);
    let data = dirichlet_partition(
        &train,
        &PartitionSpec {
            num_clients: cfg.partition.num_clients,
            alpha: cfg.partition.alpha,
            seed,
        },
    )?;
    let baseline = match cfg.targets.baseline_accuracy {
        Some(b) => b,
        None => centralized_baseline(
            &model,
            &train,
            &eval,
            cfg.targets.baseline_epochs,
            OptimizerSpec::sgd(cfg.targets.baseline_lr),
            cfg.batch_size,
            seed,
        )?,
    };
    Ok(PreparedRun {
        seed,
        e_steps: mean_shard_size(&data, cfg.batch_size),
        model,
        data,
        eval,
        baseline,
    })
}

/// Local steps per round: `local.tau` if set, else `⌈tau_epochs · e⌉`.
pub fn tau_steps(cfg: &ExperimentConfig, e_steps: f64, tau_epochs: f64) -> usize {
    cfg.local.tau.unwrap_or_else(|| ((tau_epochs * e_steps).ceil() as usize).max(1))
}

pub fn engine_config(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64, tau: usize) -> EngineConfig {
    let (client_opt, server_opt) = cfg.optimizer_specs();
    EngineConfig {
        algorithm,
        client_opt,
        server_opt,
        tau,
        tau_tilde: cfg.local.tau_tilde,
        query_every: cfg.local.query_every,
        total_rounds: cfg.rounds,
        sketch: cfg.sketch,
        cohort: CohortSpec {
            cohort_size: cfg.cohort.size.unwrap_or(cfg.partition.num_clients),
            seed,
        },
        batch_size: cfg.batch_size,
        seed,
        weighted_average: cfg.local.weighted_average,
        theta_min: cfg.local.theta_min,
        theta_override: None,
        execution: cfg.execution,
    }
}

/// A finished training run with its identity.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub key: RunKey,
    pub algorithm: Algorithm,
    pub tau_epochs: f64,
    pub baseline: f64,
    pub run: TrainingRun,
}

impl RunResult {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.run.records.iter().map(|r| MetricsRow::new(&self.key, r)).collect()
    }

    pub fn query_rows(&self) -> Vec<QueryRow> {
        self.run
            .records
            .iter()
            .flat_map(|r| QueryRow::from_record(&self.key, r))
            .collect()
    }

    pub fn rounds_to(&self, fraction: f64) -> Reach {
        Reach(rounds_to_target(&self.run.records, self.baseline, fraction))
    }

    /// Best accuracy and its 1-based round; the earliest round wins ties.
    pub fn best(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, r) in self.run.records.iter().enumerate() {
            if best.is_none_or(|(a, _)| r.eval_accuracy > a) {
                best = Some((r.eval_accuracy, i + 1));
            }
        }
        best
    }
}

fn run_one(cfg: &ExperimentConfig, prep: &PreparedRun, algorithm: Algorithm, tau_epochs: f64) -> Result<RunResult> {
    let tau = tau_steps(cfg, prep.e_steps, tau_epochs);
    let ec = engine_config(cfg, algorithm, prep.seed, tau);
    let run = run_training(&ec, &prep.data, &prep.eval, &prep.model)?;
    let optimizer = match algorithm {
        Algorithm::FedOpt => cfg.pairing.fedopt_name(),
        Algorithm::FdaOpt => cfg.pairing.fda_name(),
    };
    Ok(RunResult {
        key: RunKey {
            experiment: cfg.name.clone(),
            algorithm: algorithm.name().to_string(),
            optimizer: optimizer.to_string(),
            seed: prep.seed,
            tau,
        },
        algorithm,
        tau_epochs,
        baseline: prep.baseline,
        run,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub optimizer: String,
    pub seed: u64,
    pub tau: usize,
    pub tau_epochs: f64,
    pub baseline_accuracy: f64,
    pub rounds_completed: usize,
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_to_target: Option<BTreeMap<String, Reach>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_round: Option<usize>,
    #[serde(serialize_with = "opt_real")]
    pub final_train_loss: Option<f64>,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
    pub total_steps: u64,
}

fn opt_real<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => extended_real(x, s),
        None => s.serialize_none(),
    }
}

fn fraction_key(f: f64) -> String {
    format!("{f}")
}

impl RunSummary {
    pub fn new(r: &RunResult, fractions: &[f64], metric: SummaryMetric) -> Self {
        let recs = &r.run.records;
        let best = r.best();
        let (rounds_to_target, best_accuracy, best_round) = match metric {
            SummaryMetric::RoundsToTarget => (
                Some(fractions.iter().map(|&f| (fraction_key(f), r.rounds_to(f))).collect()),
                None,
                None,
            ),
            SummaryMetric::BestAccuracy => (None, best.map(|b| b.0), best.map(|b| b.1)),
        };
        RunSummary {
            algorithm: r.key.algorithm.clone(),
            optimizer: r.key.optimizer.clone(),
            seed: r.key.seed,
            tau: r.key.tau,
            tau_epochs: r.tau_epochs,
            baseline_accuracy: r.baseline,
            rounds_completed: recs.len(),
            failure: r.run.failure.clone(),
            rounds_to_target,
            best_accuracy,
            best_round,
            final_train_loss: recs.last().map(|x| x.train_loss),
            total_bytes_up: recs.iter().map(|x| x.bytes_up).sum(),
            total_bytes_down: recs.iter().map(|x| x.bytes_down).sum(),
            total_steps: recs.iter().map(|x| x.steps as u64).sum(),
        }
    }
}

/// FedOpt against FDA-Opt on one seed and τ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub seed: u64,
    pub tau_epochs: f64,
    pub fraction: f64,
    pub fedopt_rounds: Reach,
    pub fda_rounds: Reach,
    #[serde(serialize_with = "ratio_or_marker")]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub summary_metric: SummaryMetric,
    pub target_fractions: Vec<f64>,
    pub runs: Vec<RunSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
}

fn comparisons(results: &[RunResult], fractions: &[f64]) -> Vec<Comparison> {
    let mut out = Vec::new();
    for f in results.iter().filter(|r| r.algorithm == Algorithm::FedOpt) {
        let Some(d) = results.iter().find(|r| {
            r.algorithm == Algorithm::FdaOpt && r.key.seed == f.key.seed && r.tau_epochs == f.tau_epochs
        }) else {
            continue;
        };
        for &fraction in fractions {
            let (a, b) = (f.rounds_to(fraction), d.rounds_to(fraction));
            out.push(Comparison {
                seed: f.key.seed,
                tau_epochs: f.tau_epochs,
                fraction,
                fedopt_rounds: a,
                fda_rounds: b,
                speedup: speedup(a.0, b.0),
            });
        }
    }
    out
}

pub fn summarize(cfg: &ExperimentConfig, results: &[RunResult]) -> Summary {
    let fractions = &cfg.targets.fractions;
    Summary {
        experiment: cfg.name.clone(),
        summary_metric: cfg.summary_metric,
        target_fractions: fractions.clone(),
        runs: results
            .iter()
            .map(|r| RunSummary::new(r, fractions, cfg.summary_metric))
            .collect(),
        comparisons: match cfg.summary_metric {
            SummaryMetric::RoundsToTarget => comparisons(results, fractions),
            SummaryMetric::BestAccuracy => Vec::new(),
        },
    }
}

/// Output of `run` and `sweep-tau`.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub results: Vec<RunResult>,
    pub summary: Summary,
    pub sweep: Vec<SweepCell>,
}

impl ExperimentReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.results.iter().flat_map(|r| r.rows()).collect()
    }

    pub fn query_rows(&self) -> Vec<QueryRow> {
        self.results.iter().flat_map(|r| r.query_rows()).collect()
    }

    /// Writes the resolved config, metrics, queries, summary and, for
    /// sweeps, `sweep.csv`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let resolved = dir.join("config.toml");
        std::fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
        emit_metrics(&self.rows(), dir)?;
        emit_queries(&self.query_rows(), dir)?;
        write_json(&self.summary, &dir.join("summary.json"))?;
        if !self.sweep.is_empty() {
            write_csv(&self.sweep, &SWEEP_COLUMNS, &dir.join("sweep.csv"))?;
        }
        Ok(())
    }
}

fn run_matrix(cfg: &ExperimentConfig, taus: &[f64]) -> Result<Vec<RunResult>> {
    let preps: Vec<PreparedRun> = cfg
        .execution
        .map(&cfg.seeds, |&s| prepare(cfg, s))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for &tau in taus {
        for prep in &preps {
            for alg in cfg.algorithm.algorithms() {
                jobs.push((prep, alg, tau));
            }
        }
    }
    cfg.execution
        .map(&jobs, |&(prep, alg, tau)| run_one(cfg, prep, alg, tau))
        .into_iter()
        .collect()
}

/// Every seed and algorithm at the configured τ.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let results = run_matrix(cfg, &[cfg.local.tau_epochs])?;
    Ok(ExperimentReport {
        summary: summarize(cfg, &results),
        results,
        sweep: Vec::new(),
    })
}

pub const SWEEP_COLUMNS: [&str; 6] = ["optimizer", "algorithm", "tau_epochs", "fraction", "rounds", "median"];

/// Rounds-to-target of one algorithm at one τ across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub optimizer: String,
    pub algorithm: String,
    pub tau_epochs: f64,
    pub fraction: f64,
    /// Per-seed counts joined by `;`, in seed order.
    pub rounds: String,
    pub median: Reach,
}

/// Repeats every seed and algorithm for each τ in `sweep.tau_epochs`.
/// `local.tau`, if set, is ignored.
pub fn sweep_tau(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut c = cfg.clone();
    c.local.tau = None;
    let results = run_matrix(&c, &cfg.sweep.tau_epochs)?;
    let mut sweep = Vec::new();
    for &tau in &cfg.sweep.tau_epochs {
        for alg in cfg.algorithm.algorithms() {
            let cell: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.tau_epochs == tau && r.algorithm == alg)
                .collect();
            for &fraction in &cfg.targets.fractions {
                let reach: Vec<Reach> = cell.iter().map(|r| r.rounds_to(fraction)).collect();
                sweep.push(SweepCell {
                    optimizer: cell[0].key.optimizer.clone(),
                    algorithm: alg.name().to_string(),
                    tau_epochs: tau,
                    fraction,
                    rounds: reach.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";"),
                    median: Reach::median(&reach),
                });
            }
        }
    }
    Ok(ExperimentReport {
        summary: summarize(&c, &results),
        results,
        sweep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub client_lr: f64,
    pub server_lr: f64,
    pub best_accuracy: f64,
    pub rounds_completed: usize,
}

pub const GRID_COLUMNS: [&str; 4] = ["client_lr", "server_lr", "best_accuracy", "rounds_completed"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub algorithm: String,
    pub optimizer: String,
    pub seed: u64,
    pub rounds: usize,
    /// Ordered by server lr, then client lr.
    pub cells: Vec<GridCell>,
    pub best: GridCell,
}

impl GridReport {
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let resolved = dir.join("config.toml");
        std::fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
        write_csv(&self.cells, &GRID_COLUMNS, &dir.join("grid.csv"))?;
        write_json(self, &dir.join("grid.json"))
    }
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Runs every `(client_lr, server_lr)` pair on the first seed and picks the
/// one with the highest accuracy over all rounds. Ties go to the smaller
/// server lr, then the smaller client lr. FedOpt is tuned unless the config
/// asks for FDA-Opt alone.
pub fn grid_search(cfg: &ExperimentConfig, client_lrs: &[f64], server_lrs: &[f64]) -> Result<GridReport> {
    cfg.validate()?;
    config::lr_list("grid.client_lrs", client_lrs)?;
    config::lr_list("grid.server_lrs", server_lrs)?;
    let algorithm = match cfg.algorithm {
        AlgorithmChoice::FdaOpt => Algorithm::FdaOpt,
        _ => Algorithm::FedOpt,
    };
    let seed = cfg.seeds[0];
    let rounds = cfg.grid.rounds.unwrap_or(cfg.rounds);
    let mut base = cfg.clone();
    base.rounds = rounds;
    let prep = prepare(&base, seed)?;
    let mut pairs = Vec::new();
    for &s in &sorted_unique(server_lrs) {
        for &c in &sorted_unique(client_lrs) {
            pairs.push((c, s));
        }
    }
    let cells: Vec<GridCell> = cfg
        .execution
        .map(&pairs, |&(c, s)| {
            let mut cell_cfg = base.clone();
            cell_cfg.optimizer.client_lr = c;
            cell_cfg.optimizer.server_lr = s;
            let r = run_one(&cell_cfg, &prep, algorithm, cfg.local.tau_epochs)?;
            Ok(GridCell {
                client_lr: c,
                server_lr: s,
                best_accuracy: r.best().map_or(0.0, |b| b.0),
                rounds_completed: r.run.records.len(),
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let mut best = cells[0];
    for c in &cells[1..] {
        if c.best_accuracy > best.best_accuracy {
            best = *c;
        }
    }
    let optimizer = match algorithm {
        Algorithm::FedOpt => cfg.pairing.fedopt_name(),
        Algorithm::FdaOpt => cfg.pairing.fda_name(),
    };
    Ok(GridReport {
        algorithm: algorithm.name().to_string(),
        optimizer: optimizer.to_string(),
        seed,
        rounds,
        cells,
        best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineRow {
    pub seed: u64,
    pub baseline_accuracy: f64,
}

/// Baseline accuracy for every configured seed.
pub fn baselines(cfg: &ExperimentConfig) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    cfg.execution
        .map(&cfg.seeds, |&seed| {
            prepare(cfg, seed).map(|p| BaselineRow {
                seed,
                baseline_accuracy: p.baseline,
            })
        })
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RoundRecord;
    use proptest::prelude::*;

    fn history(acc: &[f64]) -> Vec<RoundRecord> {
        acc.iter()
            .enumerate()
            .map(|(i, &a)| RoundRecord {
                round: i as u64,
                cohort: vec![0],
                steps: 1,
                exact_var: 0.0,
                theta: None,
                queries: Vec::new(),
                local_loss: 0.0,
                train_loss: 0.0,
                eval_loss: 0.0,
                eval_accuracy: a,
                bytes_up: 0,
                bytes_down: 0,
                wall_steps: i as u64 + 1,
            })
            .collect()
    }

    #[test]
    fn rounds_to_target_examples() {
        let target: f64 = 0.9 * 0.902;
        assert!((target - 0.8118).abs() < 1e-12);
        let mut acc = vec![0.5; 20];
        acc.push(0.812);
        acc.push(0.7);
        assert_eq!(rounds_to_target(&history(&acc), 0.902, 0.9), Some(21));
        assert_eq!(rounds_to_target(&history(&[0.5, 0.8, 0.85]), 0.9, 1.0), None);
        assert_eq!(rounds_to_target(&history(&[0.99, 0.2]), 0.9, 0.5), Some(1));
        assert_eq!(rounds_to_target(&[], 0.9, 0.5), None);
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup(Some(29), Some(21)).unwrap() - 1.38).abs() < 0.005);
        assert_eq!(speedup(Some(7), Some(7)), Some(1.0));
        assert!((speedup(Some(35), Some(23)).unwrap() - 1.52).abs() < 0.005);
        assert_eq!(speedup(None, Some(3)), None);
        assert_eq!(speedup(Some(3), None), None);
    }

    #[test]
    fn reach_median_and_marker() {
        let r = |x: Option<usize>| Reach(x);
        assert_eq!(Reach::median(&[r(Some(5)), r(None), r(Some(3))]), r(Some(5)));
        assert_eq!(Reach::median(&[r(None), r(None), r(Some(3))]), r(None));
        assert_eq!(Reach::median(&[r(Some(4)), r(Some(2))]), r(Some(2)));
        assert_eq!(r(None).to_string(), NOT_CONVERGED);
        assert_eq!(serde_json::to_string(&r(None)).unwrap(), "\"×\"");
        assert_eq!(serde_json::to_string(&r(Some(7))).unwrap(), "7");
    }

    proptest! {
        #[test]
        fn rounds_to_target_monotone_in_fraction(acc in prop::collection::vec(0.0f64..1.0, 0..40), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let h = history(&acc);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let key = |x: Option<usize>| x.unwrap_or(usize::MAX);
            prop_assert!(key(rounds_to_target(&h, 0.9, lo)) <= key(rounds_to_target(&h, 0.9, hi)));
        }
    }
}
