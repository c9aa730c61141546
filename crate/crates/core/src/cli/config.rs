//! Run configuration: one JSON file deep-merged over the desk (or full-size)
//! defaults, with unknown keys rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::GeneratorConfig;
use crate::error::{LtvError, Result};
use crate::model::{ModelConfig, Stage};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset CSV: written by `gen-data`, read by `train`, `eval`, `ablate`.
    pub data: Option<PathBuf>,
    /// Evaluated as a whole when set; otherwise `eval` uses the test split of `data`.
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch JSON lines.
    pub history: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_frac: 0.4,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Cut-off for Recall@k, clamped to the evaluated row count.
    pub recall_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { recall_k: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationOptions {
    pub stages: Vec<Stage>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            stages: Stage::LADDER.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub paths: Paths,
    pub split: SplitConfig,
    pub eval: EvalOptions,
    pub ablation: AblationOptions,
}

impl RunConfig {
    pub fn defaults(paper: bool) -> RunConfig {
        RunConfig {
            generator: GeneratorConfig::default(),
            model: if paper { ModelConfig::paper() } else { ModelConfig::desk() },
            paths: Paths::default(),
            split: SplitConfig::default(),
            eval: EvalOptions::default(),
            ablation: AblationOptions::default(),
        }
    }

    /// Overlays `overrides` on the defaults. Objects merge key by key; any
    /// other value, arrays included, replaces the default.
    pub fn from_value(overrides: Value, paper: bool) -> Result<RunConfig> {
        let mut base = serde_json::to_value(RunConfig::defaults(paper))?;
        if !overrides.is_object() && !overrides.is_null() {
            return Err(LtvError::config("config root must be a JSON object"));
        }
        if !overrides.is_null() {
            merge(&mut base, overrides);
        }
        let cfg: RunConfig =
            serde_json::from_value(base).map_err(|e| LtvError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, paper: bool) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LtvError::config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| LtvError::config(format!("malformed config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_value(value, paper)?;
        if let Some(dir) = path.parent() {
            cfg.paths.resolve(dir);
        }
        Ok(cfg)
    }

    /// `--seed` drives both the generator and the model.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.generator.seed = seed;
        self.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        crate::data::split::split_sizes(1_000_000, self.split.test_frac, self.split.val_frac)?;
        if self.eval.recall_k == 0 {
            return Err(LtvError::config("recall_k must be positive"));
        }
        Stage::validate_list(&self.ablation.stages)
    }
}

impl Paths {
    fn resolve(&mut self, dir: &Path) {
        for p in [
            &mut self.data,
            &mut self.eval_data,
            &mut self.checkpoint,
            &mut self.history,
            &mut self.report,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
