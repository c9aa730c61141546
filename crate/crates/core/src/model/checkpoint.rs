//! Self-describing JSON checkpoints: config echo, schema, bucket spec and
//! every named tensor in row-major order. Reals are written in shortest
//! round-trip form, so save-then-load is bit-exact.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::{Network, Schema};
use super::Model;
use crate::data::BucketSpec;
use crate::error::{LtvError, Result};
use crate::nn::{Matrix, ParamSet};

pub const CHECKPOINT_FORMAT: &str = "ltvforge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub schema: Schema,
    pub bucket_spec: BucketSpec,
    pub tau_low: f64,
    pub optimizer_steps: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(m: &Model) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: m.net.cfg.clone(),
            schema: m.net.schema.clone(),
            bucket_spec: m.net.spec.clone(),
            tau_low: m.net.tau_low,
            optimizer_steps: m.ps.step(),
            tensors: m
                .ps
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    trainable: p.trainable,
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the network from the stored config and overwrites every tensor.
    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(LtvError::Artifact(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(LtvError::Artifact(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.bucket_spec.validate().map_err(|e| LtvError::Artifact(e.to_string()))?;
        let mut ps = ParamSet::new();
        let net = Network::build(self.config, self.schema, self.bucket_spec, self.tau_low, &mut ps)
            .map_err(|e| LtvError::Artifact(format!("checkpoint config: {e}")))?;
        let expected: BTreeSet<String> = ps.iter().map(|p| p.name.clone()).collect();
        let stored: BTreeSet<String> = self.tensors.iter().map(|t| t.name.clone()).collect();
        if expected != stored {
            let missing: Vec<_> = expected.difference(&stored).collect();
            let extra: Vec<_> = stored.difference(&expected).collect();
            return Err(LtvError::Artifact(format!(
                "checkpoint tensors differ from the architecture: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for t in self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(LtvError::Artifact(format!("tensor {} holds non-finite values", t.name)));
            }
            let m = Matrix::from_vec(t.rows, t.cols, t.data)
                .map_err(|e| LtvError::Artifact(format!("tensor {}: {e}", t.name)))?;
            ps.load_value(&t.name, m)?;
        }
        ps.set_step(self.optimizer_steps);
        Ok(Model { net, ps })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LtvError::Artifact(format!("cannot read checkpoint {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LtvError::Artifact(format!("malformed checkpoint {}: {e}", path.display())))
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Model> {
        Checkpoint::load(path)?.into_model()
    }
}
