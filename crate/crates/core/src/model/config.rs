use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::cascade::CascadeConfig;
use crate::error::{LtvError, Result};
use crate::high_value::HighValueConfig;

/// Which modules are active. Valid settings form a ladder: distillation and
/// the residual path need the cascade, augmentation needs the residual path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFlags {
    pub cascade: bool,
    pub distill: bool,
    pub residual: bool,
    pub augment: bool,
}

impl StageFlags {
    pub const FULL: StageFlags = StageFlags {
        cascade: true,
        distill: true,
        residual: true,
        augment: true,
    };

    pub fn validate(&self) -> Result<()> {
        if (self.distill || self.residual) && !self.cascade {
            return Err(LtvError::config("distill and residual require the cascade"));
        }
        if self.augment && !self.residual {
            return Err(LtvError::config("augment requires the residual module"));
        }
        Ok(())
    }
}

/// Rows of the incremental ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "+cascade")]
    Cascade,
    #[serde(rename = "+distill")]
    Distill,
    #[serde(rename = "+residual")]
    Residual,
    #[serde(rename = "+aug")]
    Augment,
}

impl Stage {
    pub const LADDER: [Stage; 5] = [
        Stage::Baseline,
        Stage::Cascade,
        Stage::Distill,
        Stage::Residual,
        Stage::Augment,
    ];

    pub fn flags(self) -> StageFlags {
        let rank = self as u8;
        StageFlags {
            cascade: rank >= 1,
            distill: rank >= 2,
            residual: rank >= 3,
            augment: rank >= 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Cascade => "+cascade",
            Stage::Distill => "+distill",
            Stage::Residual => "+residual",
            Stage::Augment => "+aug",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::LADDER
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| LtvError::config(format!("unknown stage {s:?}")))
    }

    /// Stages must be distinct and in ladder order.
    pub fn validate_list(stages: &[Stage]) -> Result<()> {
        if stages.is_empty() {
            return Err(LtvError::config("stage list is empty"));
        }
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LtvError::config("stages must follow ladder order without repeats"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
    pub alpha_cascade: f64,
    pub alpha_residual: f64,
    pub alpha_distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.8,
            alpha_cascade: 3.0,
            alpha_residual: 3.0,
            alpha_distill: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 5e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub encoder_hidden: Vec<usize>,
    /// Hidden width of the baseline regression head.
    pub baseline_hidden: usize,
    pub cascade: CascadeConfig,
    pub alignment: AlignmentConfig,
    pub high_value: HighValueConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub stages: StageFlags,
    /// Route predicted top-bucket samples through the high-value head.
    pub whale_head_override: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Sizes suited to 10^5-row runs on one core.
    pub fn desk() -> Self {
        ModelConfig {
            k: 4,
            encoder_hidden: vec![64, 48, 32],
            baseline_hidden: 32,
            cascade: CascadeConfig {
                neg_weights: vec![1.0; 3],
                ..CascadeConfig::default_k4(32)
            },
            alignment: AlignmentConfig::default(),
            high_value: HighValueConfig::default(),
            loss: LossWeights::default(),
            optim: OptimConfig::default(),
            batch_size: 1024,
            epochs: 12,
            seed: 42,
            stages: StageFlags::FULL,
            whale_head_override: true,
        }
    }

    /// The published layer sizes.
    pub fn paper() -> Self {
        ModelConfig {
            encoder_hidden: vec![400, 300, 200],
            baseline_hidden: 200,
            cascade: CascadeConfig::default_k4(200),
            alignment: AlignmentConfig {
                residual_dims: [200, 100],
                align_dim: 200,
                ..AlignmentConfig::default()
            },
            high_value: HighValueConfig {
                attention_hidden: 100,
                trunk: vec![300, 200],
                ..HighValueConfig::default()
            },
            batch_size: 100_000,
            ..ModelConfig::desk()
        }
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stages = stage.flags();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.validate()?;
        if self.k < 2 {
            return Err(LtvError::config("k must be at least 2"));
        }
        if self.encoder_hidden.is_empty() || self.encoder_hidden.contains(&0) {
            return Err(LtvError::config("encoder_hidden must be non-empty and positive"));
        }
        if self.baseline_hidden == 0 {
            return Err(LtvError::config("baseline_hidden must be positive"));
        }
        self.cascade.validate(self.k)?;
        self.alignment.validate()?;
        self.high_value.validate()?;
        let l = &self.loss;
        if !(0.0..=1.0).contains(&l.gamma) {
            return Err(LtvError::config("gamma must lie in [0, 1]"));
        }
        if [l.alpha_cascade, l.alpha_residual, l.alpha_distill]
            .iter()
            .any(|a| !(*a >= 0.0))
        {
            return Err(LtvError::config("alpha weights must be >= 0"));
        }
        let o = &self.optim;
        if !(o.lr0 >= 0.0 && o.lr_min >= 0.0 && o.lr0 >= o.lr_min) || !(o.weight_decay >= 0.0) {
            return Err(LtvError::config("need lr0 >= lr_min >= 0 and weight_decay >= 0"));
        }
        if self.batch_size < 2 {
            return Err(LtvError::config("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(LtvError::config("epochs must be positive"));
        }
        Ok(())
    }
}

/// Embedding width for a categorical column: `min(50, ⌈cardinality/2⌉)`, at least 1.
pub fn embedding_dim(cardinality: usize) -> usize {
    cardinality.div_ceil(2).clamp(1, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_flags() {
        assert!(!Stage::Baseline.flags().cascade);
        assert_eq!(Stage::Augment.flags(), StageFlags::FULL);
        for s in Stage::LADDER {
            assert!(s.flags().validate().is_ok());
            assert_eq!(Stage::parse(s.name()).unwrap(), s);
        }
        let bad = StageFlags {
            cascade: false,
            distill: false,
            residual: true,
            augment: false,
        };
        assert!(bad.validate().is_err());
        assert!(Stage::validate_list(&[Stage::Cascade, Stage::Baseline]).is_err());
        assert!(Stage::validate_list(&[Stage::Residual]).is_ok());
    }

    #[test]
    fn embedding_widths() {
        assert_eq!(embedding_dim(1), 1);
        assert_eq!(embedding_dim(10), 5);
        assert_eq!(embedding_dim(11), 6);
        assert_eq!(embedding_dim(1000), 50);
    }

    #[test]
    fn defaults_validate() {
        ModelConfig::desk().validate().unwrap();
        ModelConfig::paper().validate().unwrap();
        let mut c = ModelConfig::desk();
        c.loss.gamma = 1.5;
        assert!(c.validate().is_err());
    }
}
