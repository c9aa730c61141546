//! The five commands as library functions. Each returns its report and
//! writes files named in the run config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::{chronological_split, generate, load_csv, write_csv, Dataset, GeneratorStats};
use crate::error::{LtvError, Result};
use crate::metrics::MetricsReport;
use crate::model::{model_grad_check, train, ComponentCheck, Model, Stage, GRAD_CHECK_COMPONENTS};

pub const REPORT_FORMAT: &str = "ltvforge-report";
pub const REPORT_VERSION: u32 = 1;

/// Identifies the producing binary. `LTVFORGE_BUILD_ID` at compile time wins.
pub fn build_id() -> String {
    option_env!("LTVFORGE_BUILD_ID")
        .map(str::to_string)
        .unwrap_or_else(|| format!("ltvforge-{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub build_id: String,
    pub seed: u64,
    pub config: RunConfig,
    /// `"test"` for the test split of `paths.data`, `"eval_data"` otherwise.
    pub split: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stage: Stage,
    pub metrics: MetricsReport,
    pub final_train_loss: f64,
}

/// Differences between consecutive rows, `row − previous`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub stage: Stage,
    pub versus: Stage,
    pub bucket_acc: Option<f64>,
    pub sva: Option<f64>,
    pub gini: Option<f64>,
    pub spearman: Option<f64>,
    pub nmae: Option<f64>,
    pub chi_squared: Option<f64>,
    pub top_bucket_ambe: Option<f64>,
    /// Relative change of top-bucket AMBE, `(row − previous) / previous`.
    pub top_bucket_ambe_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub build_id: String,
    pub seed: u64,
    pub config: RunConfig,
    pub rows: Vec<AblationRow>,
    pub deltas: Vec<AblationDelta>,
}

impl AblationReport {
    pub fn row(&self, stage: Stage) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub build_id: String,
    pub seed: u64,
    pub tolerance: f64,
    pub corrupted: bool,
    pub passed: bool,
    pub components: Vec<ComponentCheck>,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| LtvError::config(format!("paths.{key} is required for this command")))
}

/// `data.csv` → `data.stats.json`.
pub fn stats_path(data: &Path) -> PathBuf {
    data.with_extension("stats.json")
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> Result<GeneratorStats> {
    let out = required(&cfg.paths.data, "data")?;
    let ds = generate(&cfg.generator)?;
    let stats = GeneratorStats::from_labels(&ds.labels)?;
    write_csv(&ds, out)?;
    write_json(&stats, &stats_path(out))?;
    log::info!("wrote {} rows to {}, zero ratio {:.4}", ds.len(), out.display(), stats.zero_ratio);
    Ok(stats)
}

fn split(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    chronological_split(ds, cfg.split.test_frac, cfg.split.val_frac)
}

/// Trains on the train split with validation loss per epoch. The history
/// file gets one line per finished epoch, flushed immediately, so a numeric
/// abort leaves every completed epoch on disk.
pub fn train_cmd(cfg: &RunConfig) -> Result<Model> {
    let data = required(&cfg.paths.data, "data")?;
    let ckpt = required(&cfg.paths.checkpoint, "checkpoint")?;
    let ds = load_csv(data)?;
    let (tr, val, _) = split(cfg, &ds)?;
    let mut history = match &cfg.paths.history {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut io_err = None;
    let result = train(&tr, Some(&val), &cfg.model, &mut |rec| {
        if let Some(w) = history.as_mut() {
            let line = serde_json::to_string(rec).expect("epoch record serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                io_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let (model, _) = result?;
    model.save(ckpt)?;
    Ok(model)
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<EvalReport> {
    let model = Model::load(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let (ds, which) = match &cfg.paths.eval_data {
        Some(p) => (load_csv(p)?, "eval_data"),
        None => {
            let ds = load_csv(required(&cfg.paths.data, "data")?)?;
            model.net.schema.check(&ds)?;
            (split(cfg, &ds)?.2, "test")
        }
    };
    let metrics = model.evaluate(&ds, cfg.eval.recall_k)?;
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        command: "eval".into(),
        build_id: build_id(),
        seed: model.net.cfg.seed,
        config: cfg.clone(),
        split: which.into(),
        metrics,
    };
    if let Some(p) = &cfg.paths.report {
        write_json(&report, p)?;
    }
    Ok(report)
}

fn delta(stage: Stage, versus: Stage, a: &MetricsReport, b: &MetricsReport) -> AblationDelta {
    let d = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    AblationDelta {
        stage,
        versus,
        bucket_acc: d(a.bucket_acc, b.bucket_acc),
        sva: d(a.sva, b.sva),
        gini: d(a.gini, b.gini),
        spearman: d(a.spearman, b.spearman),
        nmae: d(a.nmae, b.nmae),
        chi_squared: d(a.chi_squared, b.chi_squared),
        top_bucket_ambe: d(a.top_bucket_ambe, b.top_bucket_ambe),
        top_bucket_ambe_rel: match (a.top_bucket_ambe, b.top_bucket_ambe) {
            (Some(x), Some(y)) if y > 0.0 => Some((x - y) / y),
            _ => None,
        },
    }
}

/// Trains every listed stage on the same data and seed and evaluates each on
/// the test split. Data comes from `paths.data` when set, otherwise from the
/// generator config.
pub fn ablate_cmd(cfg: &RunConfig) -> Result<AblationReport> {
    Stage::validate_list(&cfg.ablation.stages)?;
    let ds = match &cfg.paths.data {
        Some(p) => load_csv(p)?,
        None => generate(&cfg.generator)?,
    };
    let (tr, val, test) = split(cfg, &ds)?;
    let mut rows = Vec::with_capacity(cfg.ablation.stages.len());
    for &stage in &cfg.ablation.stages {
        let mc = cfg.model.clone().with_stage(stage);
        let (model, hist) = train(&tr, Some(&val), &mc, &mut |_| {})?;
        let metrics = model.evaluate(&test, cfg.eval.recall_k)?;
        log::info!(
            "{:>9}: bucket_acc {:?} sva {:?} chi2 {:?} top_ambe {:?}",
            stage.name(),
            metrics.bucket_acc,
            metrics.sva,
            metrics.chi_squared,
            metrics.top_bucket_ambe
        );
        rows.push(AblationRow {
            stage,
            metrics,
            final_train_loss: hist.epochs.last().map_or(f64::NAN, |e| e.total),
        });
    }
    let deltas = rows
        .windows(2)
        .map(|w| delta(w[1].stage, w[0].stage, &w[1].metrics, &w[0].metrics))
        .collect();
    let report = AblationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        command: "ablate".into(),
        build_id: build_id(),
        seed: cfg.model.seed,
        config: cfg.clone(),
        rows,
        deltas,
    };
    if let Some(p) = &cfg.paths.report {
        write_json(&report, p)?;
    }
    Ok(report)
}

/// Checks every loss component on the tiny reference model seeded from the
/// config. Returns the summary even on failure; the caller maps `passed`.
pub fn grad_check_cmd(cfg: &RunConfig, corrupt: bool) -> Result<GradCheckSummary> {
    let components = model_grad_check(cfg.model.seed, corrupt)?;
    debug_assert_eq!(components.len(), GRAD_CHECK_COMPONENTS.len());
    let summary = GradCheckSummary {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        command: "grad-check".into(),
        build_id: build_id(),
        seed: cfg.model.seed,
        tolerance: crate::model::gradcheck::GRAD_CHECK_TOLERANCE,
        corrupted: corrupt,
        passed: components.iter().all(|c| c.passed),
        components,
    };
    if let Some(p) = &cfg.paths.report {
        write_json(&summary, p)?;
    }
    Ok(summary)
}
