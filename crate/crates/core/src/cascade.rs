//! Ordinal cascade: `K − 1` binary exceedance heads, the chained bucket
//! distribution, sequential-threshold inference, the weighted point-wise BCE
//! and the batch-level distillation KL.
//!
//! Head `k` predicts `p_k`, the probability that a sample passes threshold
//! `k` given that it passed all earlier ones. Bucket probabilities follow
//!
//! ```text
//! P(0)   = 1 − p_0
//! P(k)   = (1 − p_k) · Π_{j<k} p_j      0 < k < K−1
//! P(K−1) = Π_{j<K−1} p_j
//! ```
//!
//! which telescopes to one for any `p ∈ (0,1)^{K−1}`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::BucketSpec;
use crate::error::{LtvError, Result};
use crate::nn::{sigmoid, Activation, Matrix, Mlp, MlpCache, ParamSet};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    /// Width of every hidden layer in the level heads.
    pub head_hidden: usize,
    /// Number of hidden layers per level.
    pub depths: Vec<usize>,
    /// L2 penalty on the level-head weight matrices.
    pub l2: Vec<f64>,
    pub dropout: Vec<f64>,
    /// Per-level weight `w_k` of the BCE term.
    pub stage_weights: Vec<f64>,
    /// Up-weighting `λ_k` of negative targets.
    pub neg_weights: Vec<f64>,
    /// Sequential decision threshold.
    pub threshold: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
}

impl CascadeConfig {
    /// Per-level values for `K = 4`; other `K` need explicit lists.
    pub fn default_k4(head_hidden: usize) -> Self {
        CascadeConfig {
            head_hidden,
            depths: vec![2, 1, 2],
            l2: vec![0.01, 0.01, 0.008],
            dropout: vec![0.2, 0.1, 0.1],
            stage_weights: vec![5.0, 2.5, 3.0],
            neg_weights: vec![3.0, 5.0, 8.0],
            threshold: 0.5,
            temperature_start: 2.0,
            temperature_end: 1.0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let levels = k.checked_sub(1).filter(|&l| l >= 1).ok_or_else(|| {
            LtvError::config("the cascade needs K >= 2")
        })?;
        let lens = [
            ("depths", self.depths.len()),
            ("l2", self.l2.len()),
            ("dropout", self.dropout.len()),
            ("stage_weights", self.stage_weights.len()),
            ("neg_weights", self.neg_weights.len()),
        ];
        for (name, len) in lens {
            if len != levels {
                return Err(LtvError::config(format!(
                    "cascade.{name} has {len} entries, K-1 = {levels} required"
                )));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LtvError::config("cascade.threshold must lie in (0, 1)"));
        }
        if self.stage_weights.iter().chain(&self.neg_weights).any(|&w| !(w > 0.0)) {
            return Err(LtvError::config("cascade weights must be positive"));
        }
        if self.dropout.iter().any(|&d| !(0.0..1.0).contains(&d)) || self.l2.iter().any(|&l| l < 0.0) {
            return Err(LtvError::config("invalid cascade dropout or l2"));
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return Err(LtvError::config("temperatures must be positive"));
        }
        if self.head_hidden == 0 {
            return Err(LtvError::config("cascade.head_hidden must be positive"));
        }
        Ok(())
    }
}

/// Chained bucket distribution from the `K − 1` conditional pass probabilities.
pub fn bucket_distribution(p: &[f64]) -> Vec<f64> {
    let k = p.len() + 1;
    let mut out = Vec::with_capacity(k);
    let mut survive = 1.0;
    for &pk in p {
        out.push(survive * (1.0 - pk));
        survive *= pk;
    }
    out.push(survive);
    out
}

/// Gradient of `Σ_b dP[b]·P(b)` with respect to `p`.
pub fn bucket_distribution_backward(p: &[f64], d_dist: &[f64]) -> Vec<f64> {
    let levels = p.len();
    // dP(b)/dp_j: b < j → 0; b == j → −Π_{i<j} p_i; b > j → P(b)/p_j written
    // as a product that skips p_j so p_j → 0 stays finite.
    let mut prefix = vec![1.0; levels + 1];
    for j in 0..levels {
        prefix[j + 1] = prefix[j] * p[j];
    }
    let mut grad = vec![0.0; levels];
    for (j, g) in grad.iter_mut().enumerate() {
        let mut acc = -prefix[j] * d_dist[j];
        let mut skip = prefix[j];
        for b in j + 1..=levels {
            // skip = Π_{i<b, i≠j} p_i
            let fail = if b < levels { 1.0 - p[b] } else { 1.0 };
            acc += skip * fail * d_dist[b];
            if b < levels {
                skip *= p[b];
            }
        }
        *g = acc;
    }
    grad
}

/// Sequential inference: the first level with `p_k ≤ threshold` stops the
/// sample in bucket `k`; samples passing every level land in the top bucket.
pub fn predict_bucket(p: &[f64], threshold: f64) -> usize {
    p.iter().position(|&pk| pk <= threshold).unwrap_or(p.len())
}

/// Binary cross-entropy computed from the logit: `max(z,0) − z·t + ln(1 + e^{−|z|})`.
#[inline]
pub fn bce_with_logits(target: f64, z: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Linear temperature decay from `start` at step 0 to `end` at `total`.
pub fn temperature_schedule(step: u64, total: u64, start: f64, end: f64) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    start + (end - start) * frac
}

/// Per-sample outputs of the cascade.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// `B x (K−1)` logits.
    pub logits: Matrix,
    /// `B x (K−1)` conditional pass probabilities.
    pub marginals: Matrix,
    /// `B x K` chained bucket distribution.
    pub bucket_dist: Matrix,
    pub predicted: Vec<usize>,
}

impl CascadeOutput {
    pub fn from_logits(logits: Matrix, threshold: f64) -> Self {
        let marginals = logits.map(sigmoid);
        let (b, levels) = marginals.shape();
        let mut bucket_dist = Matrix::zeros(b, levels + 1);
        let mut predicted = Vec::with_capacity(b);
        for i in 0..b {
            let p = marginals.row(i);
            bucket_dist.row_mut(i).copy_from_slice(&bucket_distribution(p));
            predicted.push(predict_bucket(p, threshold));
        }
        CascadeOutput {
            logits,
            marginals,
            bucket_dist,
            predicted,
        }
    }
}

/// Weighted teacher-forced BCE:
/// `Σ_k w_k · mean_i s_ik · BCE(1[y_i > τ_k], σ(z_ik))` with `s_ik = λ_k` on
/// negative targets. Returns the loss and `∂L/∂z`.
pub fn cascade_loss(
    logits: &Matrix,
    labels: &[f64],
    spec: &BucketSpec,
    cfg: &CascadeConfig,
) -> (f64, Matrix) {
    let (b, levels) = logits.shape();
    debug_assert_eq!(labels.len(), b);
    let nb = b as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, levels);
    for k in 0..levels {
        let tau = spec.thresholds[k];
        let mut level = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let z = logits.get(i, k);
            let (t, s) = if y > tau { (1.0, 1.0) } else { (0.0, cfg.neg_weights[k]) };
            level += s * bce_with_logits(t, z);
            grad.set(i, k, cfg.stage_weights[k] * s * (sigmoid_raw(z) - t) / nb);
        }
        loss += cfg.stage_weights[k] * level / nb;
    }
    (loss, grad)
}

/// Unclamped logistic; used where the exact derivative of the BCE is needed.
#[inline]
fn sigmoid_raw(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Batch distributions compared by the distillation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillStats {
    pub q_pred: Vec<f64>,
    pub q_true: Vec<f64>,
    pub temperature: f64,
}

pub const DISTILL_SMOOTHING: f64 = 1e-8;

fn smooth(q: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let s: f64 = q.iter().map(|v| v + eps).sum();
    (q.iter().map(|v| (v + eps) / s).collect(), s)
}

/// `KL(Q_true ‖ Q_pred)` after ε-smoothing and renormalizing both sides.
/// Returns the divergence and its gradient with respect to `q_pred`.
pub fn smoothed_kl(q_true: &[f64], q_pred: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let (t, _) = smooth(q_true, eps);
    let (p, s) = smooth(q_pred, eps);
    let kl = t.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).sum();
    // d/dq_j of −Σ_k t_k ln p̃_k with p̃ = (q + ε)/s
    let grad = t.iter().zip(&p).map(|(a, b)| (1.0 - a / b) / s).collect();
    (kl, grad)
}

/// Distribution-level distillation on a batch of cascade logits.
///
/// `Q_pred` averages the bucket distributions of `σ(z / T)`, `Q_true` counts
/// the true buckets. Returns the loss, `∂L/∂z` and the two distributions.
pub fn distill_loss(
    logits: &Matrix,
    true_buckets: &[usize],
    temperature: f64,
    eps: f64,
) -> Result<(f64, Matrix, DistillStats)> {
    let (b, levels) = logits.shape();
    if b == 0 {
        return Err(LtvError::input("distillation needs a non-empty batch"));
    }
    let k = levels + 1;
    if b < k {
        log::debug!("distillation batch of {b} is smaller than K = {k}");
    }
    let nb = b as f64;
    let mut q_pred = vec![0.0; k];
    let mut soft = Matrix::zeros(b, levels);
    for i in 0..b {
        for j in 0..levels {
            soft.set(i, j, sigmoid(logits.get(i, j) / temperature));
        }
        for (q, v) in q_pred.iter_mut().zip(bucket_distribution(soft.row(i))) {
            *q += v / nb;
        }
    }
    let mut q_true = vec![0.0; k];
    for &tb in true_buckets {
        q_true[tb] += 1.0 / nb;
    }
    let (loss, dq) = smoothed_kl(&q_true, &q_pred, eps);
    let d_dist: Vec<f64> = dq.iter().map(|g| g / nb).collect();
    let mut grad = Matrix::zeros(b, levels);
    for i in 0..b {
        let p = soft.row(i);
        let dp = bucket_distribution_backward(p, &d_dist);
        for j in 0..levels {
            grad.set(i, j, dp[j] * p[j] * (1.0 - p[j]) / temperature);
        }
    }
    Ok((
        loss,
        grad,
        DistillStats {
            q_pred,
            q_true,
            temperature,
        },
    ))
}

/// The `K − 1` level classifiers.
#[derive(Debug, Clone)]
pub struct CascadeHeads {
    pub levels: Vec<Mlp>,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct HeadsCache {
    levels: Vec<MlpCache>,
}

/// Where dropout masks come from during training. Masks depend only on
/// `(seed, step, level)` so two passes over the same batch see identical masks.
#[derive(Debug, Clone, Copy)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
}

impl CascadeHeads {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        cfg: &CascadeConfig,
        rng: &mut R,
    ) -> Self {
        let levels = cfg
            .depths
            .iter()
            .zip(&cfg.dropout)
            .enumerate()
            .map(|(k, (&depth, &drop))| {
                let mut dims = vec![in_dim];
                dims.extend(std::iter::repeat_n(cfg.head_hidden, depth));
                dims.push(1);
                Mlp::new(
                    ps,
                    &format!("{name}.level{k}"),
                    &dims,
                    Activation::Relu,
                    Activation::Identity,
                    drop,
                    rng,
                )
            })
            .collect();
        CascadeHeads {
            levels,
            threshold: cfg.threshold,
        }
    }

    /// Logits for every level on every sample (teacher forcing: no sample is
    /// dropped from later levels).
    pub fn forward(
        &self,
        ps: &ParamSet,
        h: &Matrix,
        dropout: Option<DropoutKey>,
    ) -> Result<(Matrix, HeadsCache)> {
        let b = h.rows();
        let mut logits = Matrix::zeros(b, self.levels.len());
        let mut caches = Vec::with_capacity(self.levels.len());
        for (k, mlp) in self.levels.iter().enumerate() {
            let mut rng = dropout.map(|d| stream(d.seed, &[tag::DROPOUT, d.step, k as u64]));
            let cache = mlp.forward(ps, h, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
            for i in 0..b {
                logits.set(i, k, cache.output().get(i, 0));
            }
            caches.push(cache);
        }
        Ok((logits, HeadsCache { levels: caches }))
    }

    pub fn backward(
        &self,
        ps: &mut ParamSet,
        cache: &HeadsCache,
        dlogits: &Matrix,
        need_dx: bool,
    ) -> Option<Matrix> {
        let mut dx: Option<Matrix> = None;
        for (k, (mlp, c)) in self.levels.iter().zip(&cache.levels).enumerate() {
            let dy = Matrix::column(&dlogits.col_values(k));
            if let Some(d) = mlp.backward(ps, c, &dy, need_dx) {
                match dx.as_mut() {
                    Some(acc) => acc.add_assign(&d),
                    None => dx = Some(d),
                }
            }
        }
        dx
    }

    /// `Σ_k l2_k ‖W‖²` over the head weight matrices.
    pub fn l2_value(&self, ps: &ParamSet, l2: &[f64]) -> f64 {
        let mut total = 0.0;
        for (mlp, &coef) in self.levels.iter().zip(l2) {
            for layer in &mlp.layers {
                total += coef * ps.value(layer.weight).data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        total
    }

    /// Adds `scale · ∇ l2_value` to the weight gradients.
    pub fn l2_backward(&self, ps: &mut ParamSet, l2: &[f64], scale: f64) {
        for (mlp, &coef) in self.levels.iter().zip(l2) {
            if coef == 0.0 {
                continue;
            }
            for layer in &mlp.layers {
                let w = ps.value(layer.weight).clone();
                for (g, v) in ps.grad_mut(layer.weight).data_mut().iter_mut().zip(w.data()) {
                    *g += scale * 2.0 * coef * v;
                }
            }
        }
    }
}
