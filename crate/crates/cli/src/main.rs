use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fdaopt::harness::{self, ExperimentConfig};

/// Federated training simulator with variance-monitored rounds.
#[derive(Parser)]
#[command(name = "fdaopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed and algorithm once.
    Run(Common),
    /// Learning-rate grid search on the first seed.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Comma-separated client learning rates; defaults to `grid.client_lrs`.
        #[arg(long, value_delimiter = ',')]
        client_lrs: Option<Vec<f64>>,
        /// Comma-separated server learning rates; defaults to `grid.server_lrs`.
        #[arg(long, value_delimiter = ',')]
        server_lrs: Option<Vec<f64>>,
    },
    /// Rounds-to-target for each τ in `sweep.tau_epochs`.
    SweepTau(Common),
    /// Centralized baseline accuracy per seed.
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set partition.alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; takes precedence over `output_dir` in the config.
    #[arg(short, long, env = "FDAOPT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut overrides = Vec::new();
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("override `{o}` is not KEY=VALUE");
            };
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = harness::parse_config_with_overrides(&text, &overrides)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn print_summary(report: &harness::ExperimentReport) {
    for r in &report.summary.runs {
        let reach = r
            .rounds_to_target
            .as_ref()
            .map(|m| m.iter().map(|(f, n)| format!("{f}:{n}")).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let best = r.best_accuracy.map(|a| format!(" best {a:.4}")).unwrap_or_default();
        println!(
            "{:<12} seed {:<3} tau {:<4} rounds {:<4} {}{}{}",
            r.optimizer,
            r.seed,
            r.tau,
            r.rounds_completed,
            reach,
            best,
            r.failure.as_deref().map(|f| format!(" FAILED: {f}")).unwrap_or_default()
        );
    }
    for c in &report.sweep {
        println!(
            "{:<12} tau_epochs {:<4} target {:<5} rounds {:<16} median {}",
            c.optimizer, c.tau_epochs, c.fraction, c.rounds, c.median
        );
    }
}

fn written(dir: &Path) {
    println!("wrote {}", dir.display());
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let report = harness::run_experiment(&cfg)?;
            report.write(&cfg, &cfg.output_dir)?;
            print_summary(&report);
            written(&cfg.output_dir);
        }
        Command::SweepTau(common) => {
            let cfg = common.load()?;
            let report = harness::sweep_tau(&cfg)?;
            report.write(&cfg, &cfg.output_dir)?;
            print_summary(&report);
            written(&cfg.output_dir);
        }
        Command::Grid {
            common,
            client_lrs,
            server_lrs,
        } => {
            let cfg = common.load()?;
            let c = client_lrs.unwrap_or_else(|| cfg.grid.client_lrs.clone());
            let s = server_lrs.unwrap_or_else(|| cfg.grid.server_lrs.clone());
            let report = harness::grid_search(&cfg, &c, &s)?;
            report.write(&cfg, &cfg.output_dir)?;
            for cell in &report.cells {
                println!(
                    "client_lr {:<8} server_lr {:<8} best_accuracy {:.4}",
                    cell.client_lr, cell.server_lr, cell.best_accuracy
                );
            }
            println!(
                "best {} client_lr {} server_lr {} accuracy {:.4}",
                report.optimizer, report.best.client_lr, report.best.server_lr, report.best.best_accuracy
            );
            written(&cfg.output_dir);
        }
        Command::Baseline(common) => {
            let cfg = common.load()?;
            let values = harness::baselines(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)
                .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            harness::write_json(&values, &cfg.output_dir.join("baseline.json"))?;
            for v in &values {
                println!("seed {:<3} baseline_accuracy {:.4}", v.seed, v.baseline_accuracy);
            }
            written(&cfg.output_dir);
        }
    }
    Ok(())
}
