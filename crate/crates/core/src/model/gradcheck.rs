//! Finite-difference verification of every loss component on a tiny model.
//!
//! Detached tensors, predicted buckets, top-bucket membership, dropout masks
//! and augmentation noise are all held fixed at a reference pass, so the
//! numeric derivative sees the same stop-gradient semantics as backward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::{Batch, ObjectiveWeights, StepContext};
use super::Model;
use crate::alignment::AlignmentConfig;
use crate::cascade::CascadeConfig;
use crate::data::{generate, GeneratorConfig};
use crate::error::{LtvError, Result};
use crate::high_value::HighValueConfig;
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport};

pub const GRAD_CHECK_COMPONENTS: [&str; 5] = ["cascade", "distill", "residual", "high_value", "total"];
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_BATCH: usize = 8;
/// Upper bound on the trainable scalars of the checked model.
pub const GRAD_CHECK_MAX_PARAMS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub passed: bool,
    pub report: GradCheckReport,
}

/// All modules on, every width a handful of units.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        k: 4,
        encoder_hidden: vec![8, 6],
        baseline_hidden: 4,
        cascade: CascadeConfig {
            depths: vec![1, 1, 1],
            ..CascadeConfig::default_k4(4)
        },
        alignment: AlignmentConfig {
            embed_dim: 2,
            align_dim: 4,
            residual_dims: [4, 3],
            value_weight_beta: 0.5,
        },
        high_value: HighValueConfig {
            attention_hidden: 4,
            trunk: vec![5, 4],
            ..HighValueConfig::default()
        },
        batch_size: GRAD_CHECK_BATCH,
        epochs: 1,
        seed,
        ..ModelConfig::desk()
    }
}

fn tiny_data(seed: u64) -> Result<crate::data::Dataset> {
    generate(&GeneratorConfig {
        n_samples: 64,
        n_numeric: 3,
        n_categorical: 1,
        cat_cardinality: 4,
        seed,
        ..GeneratorConfig::default()
    })
}

fn weights_for(component: &str, cfg: &ModelConfig) -> ObjectiveWeights {
    let one = ObjectiveWeights::NONE;
    match component {
        "cascade" => ObjectiveWeights { cascade: 1.0, ..one },
        "distill" => ObjectiveWeights { distill: 1.0, ..one },
        "residual" => ObjectiveWeights { residual: 1.0, ..one },
        "high_value" => ObjectiveWeights { high_value: 1.0, ..one },
        _ => ObjectiveWeights::training(cfg, false),
    }
}

/// Two rows from each true bucket, so every loss sees every bucket.
fn pick_rows(model: &Model, ds: &crate::data::Dataset) -> Vec<usize> {
    let k = model.net.cfg.k;
    let mut rows = Vec::with_capacity(GRAD_CHECK_BATCH);
    for b in 0..k {
        rows.extend(
            (0..ds.len())
                .filter(|&i| model.net.spec.assign(ds.labels[i]) == b)
                .take(GRAD_CHECK_BATCH / k),
        );
    }
    let mut i = 0;
    while rows.len() < GRAD_CHECK_BATCH {
        if !rows.contains(&i) {
            rows.push(i);
        }
        i += 1;
    }
    rows
}

/// Finds a seed whose reference pass routes some, but not all, samples to the
/// top-bucket head, then checks each component. `corrupt` doubles the
/// analytic gradients as a planted failure.
pub fn model_grad_check(seed: u64, corrupt: bool) -> Result<Vec<ComponentCheck>> {
    for attempt in 0..64u64 {
        let s = seed.wrapping_add(attempt);
        let cfg = tiny_config(s);
        let ds = tiny_data(s)?;
        let mut model = Model::init(&cfg, &ds)?;
        jitter(&mut model.ps, s);
        let rows = pick_rows(&model, &ds);
        let std = model.net.standardize(&model.ps, &ds.numeric);
        let batch = model.net.batch(&ds, &std, &rows);
        let ctx = StepContext {
            capture: true,
            weights: ObjectiveWeights::training(&cfg, false),
            ..model.context(3, 10, true)
        };
        let reference = model.net.forward_loss(&model.ps, &batch, &ctx, None)?;
        let n_high = reference.breakdown.n_high;
        if n_high == 0 || n_high == rows.len() {
            continue;
        }
        if model.ps.num_trainable() > GRAD_CHECK_MAX_PARAMS {
            return Err(LtvError::config("grad-check model exceeds the parameter cap"));
        }
        log::info!("grad check on seed {s}: {} of {} samples in the top-bucket head", n_high, rows.len());
        let frozen = reference.frozen.expect("captured");
        return GRAD_CHECK_COMPONENTS
            .iter()
            .map(|&c| check_component(&model, &batch, &ctx, &frozen, c, corrupt))
            .collect();
    }
    Err(LtvError::Verification(
        "no seed produced a mixed top-bucket batch for the gradient check".into(),
    ))
}

/// Moves every trainable scalar off its initial value. Zero-initialised
/// biases otherwise leave ReLU inputs sitting exactly on the kink.
fn jitter(ps: &mut crate::nn::ParamSet, seed: u64) {
    let mut rng = crate::rng::stream(seed, &[crate::rng::tag::INIT, 0x6a17]);
    for p in ps.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

fn check_component(
    model: &Model,
    batch: &Batch,
    base_ctx: &StepContext,
    frozen: &super::net::Frozen,
    component: &str,
    corrupt: bool,
) -> Result<ComponentCheck> {
    let ctx = StepContext {
        weights: weights_for(component, &model.net.cfg),
        capture: false,
        ..*base_ctx
    };
    let net = &model.net;
    let mut ps = model.ps.clone();
    let analytic = |ps: &mut crate::nn::ParamSet| -> Result<()> {
        let fwd = net.forward_loss(ps, batch, &ctx, Some(frozen))?;
        net.backward(ps, &fwd, batch);
        if corrupt {
            for p in ps.iter_mut() {
                p.grad.scale(2.0);
            }
        }
        Ok(())
    };
    let loss = |ps: &crate::nn::ParamSet| -> Result<f64> {
        Ok(net.forward_loss(ps, batch, &ctx, Some(frozen))?.breakdown.objective)
    };
    let opts = GradCheckOptions {
        eps: 1e-4,
        fourth_order: true,
        max_params: GRAD_CHECK_MAX_PARAMS,
        abs_floor: 1e-5,
        refinements: 2,
        refine_above: GRAD_CHECK_TOLERANCE,
    };
    let report = grad_check(&mut ps, analytic, loss, opts)?;
    Ok(ComponentCheck {
        component: component.to_string(),
        passed: report.max_rel_error <= GRAD_CHECK_TOLERANCE,
        report,
    })
}
