//! Command-line front end: argument parsing, config loading and dispatch.
//!
//! Exit codes: 0 ok, 2 input or config, 3 numeric abort, 4 artifact
//! mismatch, 5 verification failure.

pub mod commands;
pub mod config;

pub use commands::{
    ablate_cmd, build_id, eval_cmd, gen_data, grad_check_cmd, stats_path, train_cmd, AblationDelta,
    AblationReport, AblationRow, EvalReport, GradCheckSummary, REPORT_FORMAT, REPORT_VERSION,
};
pub use config::{AblationOptions, EvalOptions, Paths, RunConfig, SplitConfig};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{LtvError, Result};

#[derive(Debug, Parser)]
#[command(name = "ltvforge", version, about = "Cascaded ordinal-residual LTV modeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run config, merged over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides both `generator.seed` and `model.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker cap. All commands are serial, so every value is deterministic.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Start from the published layer sizes instead of the desk defaults.
    #[arg(long)]
    pub paper_defaults: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset CSV and its `.stats.json` sidecar.
    GenData(Common),
    /// Train on the train split; write a checkpoint and JSONL history.
    Train(Common),
    /// Evaluate a checkpoint; write the metrics report.
    Eval(Common),
    /// Train and evaluate each stage of the ablation ladder.
    Ablate(Common),
    /// Finite-difference check of every loss component on a tiny model.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Double the analytic gradients, which must make every component fail.
        #[arg(long)]
        corrupt_gradients: bool,
    },
}

impl Common {
    pub fn run_config(&self) -> Result<RunConfig> {
        if self.threads == 0 {
            return Err(LtvError::config("--threads must be at least 1"));
        }
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p, self.paper_defaults)?,
            None => RunConfig::from_value(serde_json::Value::Null, self.paper_defaults)?,
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Runs one parsed command, printing its result to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => print_json(&gen_data(&c.run_config()?)?),
        Command::Train(c) => {
            let cfg = c.run_config()?;
            train_cmd(&cfg)?;
            if let Some(p) = &cfg.paths.checkpoint {
                println!("checkpoint written to {}", p.display());
            }
            Ok(())
        }
        Command::Eval(c) => {
            let cfg = c.run_config()?;
            let r = eval_cmd(&cfg)?;
            print_json(&r.metrics)
        }
        Command::Ablate(c) => {
            let cfg = c.run_config()?;
            let r = ablate_cmd(&cfg)?;
            for row in &r.rows {
                let m = &row.metrics;
                println!(
                    "{:>9}  bucket_acc {}  sva {}  gini {}  chi2 {}  top_ambe {}",
                    row.stage.name(),
                    fmt(m.bucket_acc),
                    fmt(m.sva),
                    fmt(m.gini),
                    fmt(m.chi_squared),
                    fmt(m.top_bucket_ambe)
                );
            }
            Ok(())
        }
        Command::GradCheck {
            common,
            corrupt_gradients,
        } => {
            let s = grad_check_cmd(&common.run_config()?, corrupt_gradients)?;
            for c in &s.components {
                println!(
                    "{:<10} max_rel_error {:.3e}  {}",
                    c.component,
                    c.report.max_rel_error,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            if s.passed {
                Ok(())
            } else {
                Err(LtvError::Verification(format!(
                    "gradient check above tolerance {:e}",
                    s.tolerance
                )))
            }
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}
