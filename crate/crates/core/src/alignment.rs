//! Bucket-aware feature alignment and the dual-block residual regressor that
//! predicts a normalized position inside the predicted bucket.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::BucketSpec;
use crate::error::{LtvError, Result};
use crate::nn::{
    sigmoid, Activation, BatchNorm, BatchNormCache, Dense, Embedding, Init, Matrix, ParamSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    pub embed_dim: usize,
    pub align_dim: usize,
    /// Projection width and block-2 width.
    pub residual_dims: [usize; 2],
    /// Weight slope `β` of the value-weighted MSE.
    pub value_weight_beta: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            embed_dim: 8,
            align_dim: 32,
            residual_dims: [32, 16],
            value_weight_beta: 0.5,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.align_dim == 0 || self.residual_dims.contains(&0) {
            return Err(LtvError::config("alignment and residual widths must be positive"));
        }
        if !self.value_weight_beta.is_finite() {
            return Err(LtvError::config("value_weight_beta must be finite"));
        }
        Ok(())
    }
}

/// GLU-style gate over `[h, p_cascade, E(b̂)]`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub embedding: Embedding,
    pub gate: Dense,
    pub content: Dense,
    h_dim: usize,
    levels: usize,
}

#[derive(Debug, Clone)]
pub struct AlignCache {
    base: Matrix,
    gate: Matrix,
    content_pre: Matrix,
    content: Matrix,
    buckets: Vec<usize>,
}

impl Alignment {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        h_dim: usize,
        k: usize,
        cfg: &AlignmentConfig,
        rng: &mut R,
    ) -> Self {
        let embedding = Embedding::new(ps, &format!("{name}.bucket_embed"), k, cfg.embed_dim, 0.01, rng);
        let base = h_dim + (k - 1) + cfg.embed_dim;
        let gate = Dense::new(ps, &format!("{name}.gate"), base, cfg.align_dim, Init::Xavier, rng);
        let content = Dense::new(ps, &format!("{name}.content"), base, cfg.align_dim, Init::Xavier, rng);
        Alignment {
            embedding,
            gate,
            content,
            h_dim,
            levels: k - 1,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.gate.out_dim
    }

    /// `p_cascade` is treated as a constant; `buckets` are the predicted buckets.
    pub fn forward(
        &self,
        ps: &ParamSet,
        h: &Matrix,
        p_cascade: &Matrix,
        buckets: &[usize],
    ) -> Result<(Matrix, AlignCache)> {
        let e = self.embedding.lookup(ps, buckets)?;
        let base = Matrix::hconcat(&[h, p_cascade, &e])?;
        let gate = Activation::Sigmoid.forward(&self.gate.forward(ps, &base)?);
        let content_pre = self.content.forward(ps, &base)?;
        let content = Activation::Relu.forward(&content_pre);
        let out = gate.zip_map(&content, |g, c| g * c);
        Ok((
            out,
            AlignCache {
                base,
                gate,
                content_pre,
                content,
                buckets: buckets.to_vec(),
            },
        ))
    }

    /// Returns `∂L/∂h`; the `p_cascade` slice of the input gradient is discarded.
    pub fn backward(&self, ps: &mut ParamSet, cache: &AlignCache, dy: &Matrix) -> Matrix {
        let dg = dy.zip_map(&cache.content, |d, c| d * c);
        let dc = dy.zip_map(&cache.gate, |d, g| d * g);
        let dgz = dg.zip_map(&cache.gate, |d, g| d * g * (1.0 - g));
        let dcz = Activation::Relu.backward(&cache.content_pre, &cache.content, &dc);
        let mut dbase = self
            .gate
            .backward(ps, &cache.base, &dgz, true)
            .expect("dx requested");
        dbase.add_assign(
            &self
                .content
                .backward(ps, &cache.base, &dcz, true)
                .expect("dx requested"),
        );
        let parts = dbase.hsplit(&[self.h_dim, self.levels, self.embedding.dim]);
        self.embedding.backward(ps, &cache.buckets, &parts[2]);
        parts.into_iter().next().expect("three parts")
    }
}

/// Projection, batch-normed residual block, skip-projected block, tanh head.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    pub proj: Dense,
    pub dense1: Dense,
    pub bn: BatchNorm,
    pub dense2: Dense,
    pub skip: Dense,
    pub out: Dense,
}

#[derive(Debug, Clone)]
pub struct ResidualCache {
    x: Matrix,
    h0: Matrix,
    r0: Matrix,
    bn: Option<BatchNormCache>,
    s1: Matrix,
    h1: Matrix,
    r1: Matrix,
    s2: Matrix,
    h2: Matrix,
    out: Matrix,
}

impl ResidualCache {
    pub fn output(&self) -> &Matrix {
        &self.out
    }

    pub fn batch_norm(&self) -> Option<&BatchNormCache> {
        self.bn.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl ResidualNet {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        dims: [usize; 2],
        rng: &mut R,
    ) -> Self {
        let [dp, dr] = dims;
        ResidualNet {
            proj: Dense::new(ps, &format!("{name}.proj"), in_dim, dp, Init::Xavier, rng),
            dense1: Dense::new(ps, &format!("{name}.block1"), dp, dp, Init::Xavier, rng),
            bn: BatchNorm::new(ps, &format!("{name}.block1_bn"), dp),
            dense2: Dense::new(ps, &format!("{name}.block2"), dp, dr, Init::Xavier, rng),
            skip: Dense::new(ps, &format!("{name}.skip"), dp, dr, Init::Xavier, rng),
            out: Dense::new(ps, &format!("{name}.out"), dr, 1, Init::Xavier, rng),
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Matrix, mode: Mode) -> Result<ResidualCache> {
        let relu = Activation::Relu;
        let h0 = self.proj.forward(ps, x)?;
        let r0 = relu.forward(&h0);
        let z1 = self.dense1.forward(ps, &r0)?;
        let (n1, bn) = match mode {
            Mode::Train => {
                let (y, c) = self.bn.forward_train(ps, &z1)?;
                (y, Some(c))
            }
            Mode::Infer => (self.bn.forward_infer(ps, &z1), None),
        };
        let mut s1 = n1;
        s1.add_assign(&h0);
        let h1 = relu.forward(&s1);
        let r1 = relu.forward(&h1);
        let mut s2 = self.dense2.forward(ps, &r1)?;
        s2.add_assign(&self.skip.forward(ps, &h1)?);
        let h2 = relu.forward(&s2);
        let out = Activation::Tanh.forward(&self.out.forward(ps, &h2)?);
        Ok(ResidualCache {
            x: x.clone(),
            h0,
            r0,
            bn,
            s1,
            h1,
            r1,
            s2,
            h2,
            out,
        })
    }

    /// Requires a train-mode cache.
    pub fn backward(&self, ps: &mut ParamSet, c: &ResidualCache, dy: &Matrix) -> Matrix {
        let relu = Activation::Relu;
        let dz = Activation::Tanh.backward(&c.out, &c.out, dy);
        let dh2 = self.out.backward(ps, &c.h2, &dz, true).expect("dx");
        let ds2 = relu.backward(&c.s2, &c.h2, &dh2);
        let dr1 = self.dense2.backward(ps, &c.r1, &ds2, true).expect("dx");
        let mut dh1 = self.skip.backward(ps, &c.h1, &ds2, true).expect("dx");
        // relu(relu(x)) == relu(x), so the same mask applies twice.
        dh1.add_assign(&relu.backward(&c.h1, &c.r1, &dr1));
        let ds1 = relu.backward(&c.s1, &c.h1, &dh1);
        let bn_cache = c.bn.as_ref().expect("backward needs a train-mode forward");
        let dz1 = self.bn.backward(ps, bn_cache, &ds1);
        let dr0 = self.dense1.backward(ps, &c.r0, &dz1, true).expect("dx");
        let mut dh0 = relu.backward(&c.h0, &c.r0, &dr0);
        dh0.add_assign(&ds1);
        self.proj.backward(ps, &c.x, &dh0, true).expect("dx")
    }

    pub fn update_running(&self, ps: &mut ParamSet, c: &ResidualCache) {
        if let Some(bn) = &c.bn {
            self.bn.update_running(ps, bn);
        }
    }
}

/// Linear decay of the smoothing half-width from 1.0 to 0.1.
pub fn theta_schedule(step: u64, total: u64) -> f64 {
    let frac = step as f64 / total.max(1) as f64;
    (1.0 - 0.9 * frac).clamp(0.1, 1.0)
}

/// Zero-bucket targets are replaced by a draw from `U(−θ, θ)`.
pub fn smooth_target<R: Rng + ?Sized>(v: f64, true_bucket: usize, theta: f64, rng: &mut R) -> f64 {
    if true_bucket == 0 {
        rng.random_range(-theta..=theta)
    } else {
        v
    }
}

/// Value-weighted MSE `mean (v̂ − v)²·σ(β·v)` and its gradient in `v̂`.
pub fn residual_loss(pred: &[f64], target: &[f64], beta: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let w = sigmoid(beta * t);
            let e = p - t;
            loss += e * e * w;
            2.0 * e * w / n
        })
        .collect();
    (loss / n, grad)
}

/// `v_norm·r_b + c_b`, floored at zero; the zero bucket always yields exactly 0.
pub fn denormalize(v_norm: f64, spec: &BucketSpec, bucket: usize) -> f64 {
    if bucket == 0 {
        return 0.0;
    }
    (v_norm * spec.half_ranges[bucket] + spec.centers[bucket]).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> BucketSpec {
        BucketSpec {
            thresholds: vec![1e-6, 5.0, 20.0],
            centers: vec![0.0, 6.0, 15.0, 40.0],
            half_ranges: vec![1.0, 4.0, 10.0, 20.0],
            top_cap: 60.0,
        }
    }

    #[test]
    fn denormalize_examples() {
        let s = spec();
        assert_eq!(denormalize(0.0, &s, 2), 15.0);
        assert_eq!(denormalize(-0.5, &s, 1), 4.0);
        assert_eq!(denormalize(0.9, &s, 0), 0.0);
        assert_eq!(denormalize(-1.0, &BucketSpec { centers: vec![0.0, 1.0], half_ranges: vec![1.0, 3.0], thresholds: vec![1e-6], top_cap: 4.0 }, 1), 0.0);
    }

    #[test]
    fn residual_loss_examples() {
        assert_eq!(residual_loss(&[0.3, -0.2], &[0.3, -0.2], 0.5).0, 0.0);
        assert!((residual_loss(&[1.0], &[0.0], 0.5).0 - 0.5).abs() < 1e-15);
        assert!((residual_loss(&[0.0], &[1.0], 0.5).0 - sigmoid(0.5)).abs() < 1e-15);
        assert!((sigmoid(0.5) - 0.6225).abs() < 1e-4);
    }

    #[test]
    fn theta_endpoints() {
        assert_eq!(theta_schedule(0, 1000), 1.0);
        assert!((theta_schedule(1000, 1000) - 0.1).abs() < 1e-15);
        assert!((theta_schedule(500, 1000) - 0.55).abs() < 1e-15);
        assert!((theta_schedule(5000, 1000) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn smoothing_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(smooth_target(0.37, 2, 1.0, &mut rng), 0.37);
        for _ in 0..1000 {
            let v = smooth_target(-1.0, 0, 0.1, &mut rng);
            assert!((-0.1..=0.1).contains(&v));
        }
        let mean: f64 = (0..10_000).map(|_| smooth_target(0.0, 0, 1.0, &mut rng)).sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn zero_gate_and_content_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let cfg = AlignmentConfig::default();
        let a = Alignment::new(&mut ps, "a", 5, 4, &cfg, &mut rng);
        ps.value_mut(a.gate.weight).fill(0.0);
        ps.value_mut(a.content.weight).fill(0.0);
        let h = Matrix::filled(2, 5, 1.0);
        let p = Matrix::filled(2, 3, 0.5);
        let (out, _) = a.forward(&ps, &h, &p, &[0, 3]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_residual_params_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let net = ResidualNet::new(&mut ps, "r", 4, [6, 3], &mut rng);
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            if ps.is_trainable(id) {
                ps.value_mut(id).fill(0.0);
            }
        }
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap();
        let c = net.forward(&ps, &x, Mode::Train).unwrap();
        assert!(c.output().data().iter().all(|&v| v == 0.0));
        assert!(net.forward(&ps, &Matrix::zeros(1, 4), Mode::Train).is_err());
        let a = net.forward(&ps, &x, Mode::Infer).unwrap();
        let b = net.forward(&ps, &x, Mode::Infer).unwrap();
        assert_eq!(a.output(), b.output());
    }

    #[test]
    fn align_and_residual_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        let cfg = AlignmentConfig {
            embed_dim: 3,
            align_dim: 5,
            residual_dims: [4, 3],
            value_weight_beta: 0.5,
        };
        let a = Alignment::new(&mut ps, "a", 4, 4, &cfg, &mut rng);
        let net = ResidualNet::new(&mut ps, "r", 5, cfg.residual_dims, &mut rng);
        let h_id = ps.add("h", Matrix::from_vec(6, 4, (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect()).unwrap());
        let p = Matrix::from_vec(6, 3, (0..18).map(|i| 0.1 + 0.04 * i as f64).collect()).unwrap();
        let buckets = [0, 1, 2, 3, 1, 2];
        let target = [0.2, -0.5, 0.9, 0.1, -0.3, 0.6];
        let loss = |ps: &ParamSet| -> Result<f64> {
            let (al, _) = a.forward(ps, ps.value(h_id), &p, &buckets)?;
            let c = net.forward(ps, &al, Mode::Train)?;
            Ok(residual_loss(c.output().data(), &target, 0.5).0)
        };
        let analytic = |ps: &mut ParamSet| -> Result<()> {
            let h = ps.value(h_id).clone();
            let (al, ac) = a.forward(ps, &h, &p, &buckets)?;
            let c = net.forward(ps, &al, Mode::Train)?;
            let (_, g) = residual_loss(c.output().data(), &target, 0.5);
            let dal = net.backward(ps, &c, &Matrix::column(&g));
            let dh = a.backward(ps, &ac, &dal);
            ps.grad_mut(h_id).add_assign(&dh);
            Ok(())
        };
        let rep = grad_check(&mut ps, analytic, loss, GradCheckOptions::default()).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }
}
