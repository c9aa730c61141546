//! The composed model: shared encoder, cascade, alignment and residual
//! regressor, top-bucket head; the combined loss, training loop, inference
//! routing and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod net;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{embedding_dim, LossWeights, ModelConfig, OptimConfig, Stage, StageFlags};
pub use gradcheck::{model_grad_check, tiny_config, ComponentCheck, GRAD_CHECK_COMPONENTS};
pub use net::{
    Batch, Bundle, Frozen, LossBreakdown, Network, ObjectiveWeights, Route, Schema, StepContext,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::theta_schedule;
use crate::cascade::temperature_schedule;
use crate::data::{fit_bucket_spec, stats, Dataset};
use crate::error::{LtvError, Result};
use crate::metrics::{full_report, EvalInput, MetricsReport, StrataSpec};
use crate::nn::{cosine_lr, AdamW, ParamSet, ScheduleState};
use crate::rng::{stream, tag};

/// Rows per inference chunk.
const INFER_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub ps: ParamSet,
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub baseline: f64,
    pub cascade: f64,
    pub distill: f64,
    pub residual: f64,
    pub high_value: f64,
    pub l2: f64,
    pub total: f64,
    /// Fraction of training samples routed to the top-bucket head.
    pub high_fraction: f64,
    pub lr: f64,
    pub theta: f64,
    pub temperature: f64,
    pub val_total: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Per-sample outputs over a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub v_final: Vec<f64>,
    pub buckets: Vec<usize>,
    pub route: Vec<Route>,
    /// `P(y > 0)` from the first cascade level; absent for the baseline.
    pub nonzero_prob: Option<Vec<f64>>,
    pub v_norm: Option<Vec<f64>>,
    pub v_high: Vec<Option<f64>>,
    pub p_conf: Vec<Option<f64>>,
}

impl Model {
    /// Fresh parameters for `train`: fits buckets, `τ_L` and the feature
    /// standardizer on the training split only.
    pub fn init(cfg: &ModelConfig, train: &Dataset) -> Result<Model> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(LtvError::input("training split is empty"));
        }
        let spec = fit_bucket_spec(&train.labels, cfg.k)?;
        let positive: Vec<f64> = train.labels.iter().copied().filter(|&y| y > 0.0).collect();
        let tau_low = stats::median(&positive);
        let mut ps = ParamSet::new();
        let net = Network::build(cfg.clone(), Schema::of(train), spec, tau_low, &mut ps)?;
        net.fit_standardizer(&mut ps, train);
        Ok(Model { net, ps })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Schedules in effect at `step` of `total`.
    pub fn context(&self, step: u64, total: u64, train: bool) -> StepContext {
        let c = &self.net.cfg.cascade;
        StepContext {
            step,
            train,
            theta: theta_schedule(step, total),
            temperature: temperature_schedule(step, total, c.temperature_start, c.temperature_end),
            weights: ObjectiveWeights::training(&self.net.cfg, train),
            capture: false,
        }
    }

    /// Loss terms on a whole dataset in inference mode, averaged over chunks
    /// weighted by their size.
    pub fn evaluate_loss(&self, ds: &Dataset, step: u64, total: u64) -> Result<LossBreakdown> {
        self.net.schema.check(ds)?;
        let std = self.net.standardize(&self.ps, &ds.numeric);
        let ctx = self.context(step, total, false);
        let bs = self.net.cfg.batch_size;
        let mut acc = LossBreakdown::default();
        let n = ds.len() as f64;
        for start in (0..ds.len()).step_by(bs) {
            let idx: Vec<usize> = (start..(start + bs).min(ds.len())).collect();
            let wgt = idx.len() as f64 / n;
            let batch = self.net.batch(ds, &std, &idx);
            let b = self.net.forward_loss(&self.ps, &batch, &ctx, None)?.breakdown;
            acc.baseline += wgt * b.baseline;
            acc.cascade += wgt * b.cascade;
            acc.distill += wgt * b.distill;
            acc.residual += wgt * b.residual;
            acc.high_value += wgt * b.high_value;
            acc.n_high += b.n_high;
            acc.l2 = b.l2;
            acc.total += wgt * b.total;
            acc.objective += wgt * b.objective;
        }
        Ok(acc)
    }

    pub fn predict(&self, ds: &Dataset) -> Result<Predictions> {
        self.net.schema.check(ds)?;
        let std = self.net.standardize(&self.ps, &ds.numeric);
        let n = ds.len();
        let has_cascade = self.net.cascade.is_some();
        let mut p = Predictions {
            v_final: Vec::with_capacity(n),
            buckets: Vec::with_capacity(n),
            route: Vec::with_capacity(n),
            nonzero_prob: has_cascade.then(|| Vec::with_capacity(n)),
            v_norm: self.net.residual.is_some().then(|| Vec::with_capacity(n)),
            v_high: Vec::with_capacity(n),
            p_conf: Vec::with_capacity(n),
        };
        for start in (0..n).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
            let b = self.net.infer(&self.ps, &self.net.batch(ds, &std, &idx))?;
            p.v_final.extend(&b.v_final);
            p.buckets.extend(&b.buckets);
            p.route.extend(&b.route);
            if let (Some(dst), Some(co)) = (p.nonzero_prob.as_mut(), &b.cascade) {
                dst.extend(co.marginals.col_values(0));
            }
            if let (Some(dst), Some(src)) = (p.v_norm.as_mut(), &b.v_norm) {
                dst.extend(src);
            }
            p.v_high.extend(&b.v_high);
            p.p_conf.extend(&b.p_conf);
        }
        if let Some(bad) = p.v_final.iter().find(|v| !v.is_finite()) {
            return Err(LtvError::non_finite("predict", format!("prediction {bad}")));
        }
        Ok(p)
    }

    /// Metrics on `ds` with the training `τ_L` and the model's bucket spec.
    pub fn evaluate(&self, ds: &Dataset, recall_k: usize) -> Result<MetricsReport> {
        let pred = self.predict(ds)?;
        let truth: Vec<usize> = ds.labels.iter().map(|&y| self.net.spec.assign(y)).collect();
        full_report(&EvalInput {
            pred: &pred.v_final,
            y: &ds.labels,
            nonzero_prob: pred.nonzero_prob.as_deref(),
            pred_buckets: &pred.buckets,
            true_buckets: &truth,
            top_bucket: self.net.top(),
            strata: StrataSpec::new(self.net.tau_low)?,
            k: recall_k,
        })
    }
}

/// Epoch loop over seeded shuffles. Batches smaller than two rows are
/// skipped (batch norm needs two). `observer` sees each finished epoch.
pub fn train(
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &ModelConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    let mut model = Model::init(cfg, train_ds)?;
    let history = fit(&mut model, train_ds, val_ds, observer)?;
    Ok((model, history))
}

/// Trains an initialized model in place.
pub fn fit(
    model: &mut Model,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    let cfg = model.net.cfg.clone();
    model.net.schema.check(train_ds)?;
    if let Some(v) = val_ds {
        model.net.schema.check(v)?;
    }
    let n = train_ds.len();
    let bs = cfg.batch_size;
    let per_epoch = n / bs + usize::from(n % bs >= 2);
    if per_epoch == 0 {
        return Err(LtvError::input("training split has fewer than two rows"));
    }
    let total = (per_epoch * cfg.epochs) as u64;
    let std = model.net.standardize(&model.ps, &train_ds.numeric);
    let adam = AdamW::with_weight_decay(cfg.optim.weight_decay);
    let mut history = TrainHistory::default();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut sum = LossBreakdown::default();
        let mut high_rows = 0usize;
        let mut steps = 0u64;
        let mut ctx = model.context(step, total, true);
        let mut lr = cfg.optim.lr0;
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            ctx = model.context(step, total, true);
            lr = cosine_lr(&ScheduleState {
                step,
                total_steps: total,
                lr0: cfg.optim.lr0,
                lr_min: cfg.optim.lr_min,
            });
            let batch = model.net.batch(train_ds, &std, chunk);
            let fwd = model.net.forward_loss(&model.ps, &batch, &ctx, None)?;
            if !fwd.breakdown.objective.is_finite() {
                return Err(LtvError::non_finite("total", format!("objective at step {step}")));
            }
            model.net.backward(&mut model.ps, &fwd, &batch);
            model.net.update_running(&mut model.ps, &fwd);
            adam.step(&mut model.ps, lr);
            let b = fwd.breakdown;
            sum.baseline += b.baseline;
            sum.cascade += b.cascade;
            sum.distill += b.distill;
            sum.residual += b.residual;
            sum.high_value += b.high_value;
            sum.l2 += b.l2;
            sum.total += b.total;
            high_rows += b.n_high;
            steps += 1;
            step += 1;
        }
        let s = steps.max(1) as f64;
        let val_total = match val_ds {
            Some(v) if !v.is_empty() => Some(model.evaluate_loss(v, step, total)?.total),
            _ => None,
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            steps,
            baseline: sum.baseline / s,
            cascade: sum.cascade / s,
            distill: sum.distill / s,
            residual: sum.residual / s,
            high_value: sum.high_value / s,
            l2: sum.l2 / s,
            total: sum.total / s,
            high_fraction: high_rows as f64 / (steps as f64 * bs as f64).max(1.0),
            lr,
            theta: ctx.theta,
            temperature: ctx.temperature,
            val_total,
        };
        log::info!(
            "epoch {} total {:.5} cascade {:.5} residual {:.5} high {:.5} val {:?}",
            rec.epoch,
            rec.total,
            rec.cascade,
            rec.residual,
            rec.high_value,
            rec.val_total
        );
        observer(&rec);
        history.epochs.push(rec);
    }
    Ok(history)
}
