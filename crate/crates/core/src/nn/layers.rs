//! Layer primitives with hand-written backward passes.
//!
//! Layers own only [`ParamId`] handles; values live in a [`ParamSet`]. Every
//! `backward` *accumulates* into the gradient buffers, so a parameter shared by
//! two paths receives the sum of both contributions.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use crate::error::{LtvError, Result};

/// Outputs of sigmoid and tanh are kept this far away from their bounds so
/// that they stay strictly inside the open interval in `f64`.
pub const SATURATION_MARGIN: f64 = 1e-15;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let raw = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    raw.clamp(SATURATION_MARGIN, 1.0 - SATURATION_MARGIN)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh().clamp(-1.0 + SATURATION_MARGIN, 1.0 - SATURATION_MARGIN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative at input `x` with output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn forward(self, x: &Matrix) -> Matrix {
        x.map(|v| self.apply(v))
    }

    pub fn backward(self, x: &Matrix, y: &Matrix, dy: &Matrix) -> Matrix {
        let mut dx = dy.clone();
        for ((d, &xi), &yi) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *d *= self.derivative(xi, yi);
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Zeros,
}

/// Affine layer `y = x·W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut w = Matrix::zeros(in_dim, out_dim);
        if init == Init::Xavier && in_dim + out_dim > 0 {
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for v in w.data_mut() {
                *v = dist.sample(rng);
            }
        }
        let weight = ps.add(&format!("{name}.weight"), w);
        let bias = ps.add(&format!("{name}.bias"), Matrix::zeros(1, out_dim));
        Dense {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(LtvError::config(format!(
                "dense layer {} expects {} inputs, got {}",
                ps.name(self.weight),
                self.in_dim,
                x.cols()
            )));
        }
        let mut y = x.matmul(ps.value(self.weight))?;
        let b = ps.value(self.bias).data().to_vec();
        for r in 0..y.rows() {
            for (o, bv) in y.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(y)
    }

    /// Accumulates `dW`, `db`; returns `dx` when requested.
    pub fn backward(&self, ps: &mut ParamSet, x: &Matrix, dy: &Matrix, need_dx: bool) -> Option<Matrix> {
        let dx = need_dx.then(|| {
            dy.matmul(&ps.value(self.weight).transpose())
                .expect("shapes checked in forward")
        });
        x.t_matmul_acc(dy, ps.grad_mut(self.weight));
        let db = dy.col_sums();
        ps.grad_mut(self.bias).add_assign(&db);
        dx
    }
}

/// Batch normalization over the batch dimension, per column.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        BatchNorm {
            scale: ps.add(&format!("{name}.scale"), Matrix::filled(1, dim, 1.0)),
            shift: ps.add(&format!("{name}.shift"), Matrix::zeros(1, dim)),
            running_mean: ps.add_buffer(&format!("{name}.running_mean"), Matrix::zeros(1, dim)),
            running_var: ps.add_buffer(&format!("{name}.running_var"), Matrix::filled(1, dim, 1.0)),
            dim,
        }
    }

    /// Normalizes with batch statistics (population variance).
    pub fn forward_train(&self, ps: &ParamSet, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        let n = x.rows();
        if n < 2 {
            return Err(LtvError::input(
                "batch norm in train mode needs at least 2 samples",
            ));
        }
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let scale = ps.value(self.scale).data();
        let shift = ps.value(self.shift).data();
        let mut xhat = Matrix::zeros(n, d);
        let mut y = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                let h = (x.get(r, c) - mean[c]) * inv_std[c];
                xhat.set(r, c, h);
                y.set(r, c, scale[c] * h + shift[c]);
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        ))
    }

    pub fn forward_infer(&self, ps: &ParamSet, x: &Matrix) -> Matrix {
        let scale = ps.value(self.scale).data();
        let shift = ps.value(self.shift).data();
        let rm = ps.value(self.running_mean).data();
        let rv = ps.value(self.running_var).data();
        let mut y = x.clone();
        for r in 0..y.rows() {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = scale[c] * (*v - rm[c]) / (rv[c] + BN_EPS).sqrt() + shift[c];
            }
        }
        y
    }

    /// Folds the batch statistics of `cache` into the running estimates.
    pub fn update_running(&self, ps: &mut ParamSet, cache: &BatchNormCache) {
        for (r, m) in ps.value_mut(self.running_mean).data_mut().iter_mut().zip(&cache.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in ps.value_mut(self.running_var).data_mut().iter_mut().zip(&cache.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }

    pub fn backward(&self, ps: &mut ParamSet, cache: &BatchNormCache, dy: &Matrix) -> Matrix {
        let (n, d) = dy.shape();
        let nf = n as f64;
        let scale = ps.value(self.scale).data().to_vec();
        let mut dscale = vec![0.0; d];
        let mut dshift = vec![0.0; d];
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let g = dy.get(r, c);
                let h = cache.xhat.get(r, c);
                dscale[c] += g * h;
                dshift[c] += g;
                let dh = g * scale[c];
                sum_dxhat[c] += dh;
                sum_dxhat_xhat[c] += dh * h;
            }
        }
        let mut dx = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                let dh = dy.get(r, c) * scale[c];
                let h = cache.xhat.get(r, c);
                dx.set(
                    r,
                    c,
                    cache.inv_std[c] / nf * (nf * dh - sum_dxhat[c] - h * sum_dxhat_xhat[c]),
                );
            }
        }
        for (g, v) in ps.grad_mut(self.scale).data_mut().iter_mut().zip(&dscale) {
            *g += v;
        }
        for (g, v) in ps.grad_mut(self.shift).data_mut().iter_mut().zip(&dshift) {
            *g += v;
        }
        dx
    }
}

/// Lookup table whose rows are selected by integer index.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    /// Entries drawn from Normal(0, std).
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        rows: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut t = Matrix::zeros(rows, dim);
        for v in t.data_mut() {
            *v = normal.sample(rng);
        }
        Embedding {
            table: ps.add(name, t),
            rows,
            dim,
        }
    }

    pub fn lookup(&self, ps: &ParamSet, idx: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.rows) {
            return Err(LtvError::input(format!(
                "embedding index {bad} out of range for table {} with {} rows",
                ps.name(self.table),
                self.rows
            )));
        }
        Ok(ps.value(self.table).select_rows(idx))
    }

    /// Scatter-adds `dy` rows into the selected table rows.
    pub fn backward(&self, ps: &mut ParamSet, idx: &[usize], dy: &Matrix) {
        let g = ps.grad_mut(self.table);
        for (r, &i) in idx.iter().enumerate() {
            for (t, v) in g.row_mut(i).iter_mut().zip(dy.row(r)) {
                *t += v;
            }
        }
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 - rate;
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_with(ps: &mut ParamSet, w: Matrix, b: Matrix) -> Dense {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(ps, "d", w.rows(), w.cols(), Init::Zeros, &mut rng);
        ps.load_value("d.weight", w).unwrap();
        ps.load_value("d.bias", b).unwrap();
        d
    }

    #[test]
    fn dense_identity_weights() {
        let mut ps = ParamSet::new();
        let d = dense_with(
            &mut ps,
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Matrix::zeros(1, 2),
        );
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(d.forward(&ps, &x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_sum_with_bias() {
        let mut ps = ParamSet::new();
        let d = dense_with(
            &mut ps,
            Matrix::from_rows(&[vec![2.0], vec![3.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
        );
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(d.forward(&ps, &x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn dense_weight_gradient_by_hand() {
        let mut ps = ParamSet::new();
        let d = dense_with(
            &mut ps,
            Matrix::from_rows(&[vec![0.3], vec![-0.7]]).unwrap(),
            Matrix::zeros(1, 1),
        );
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let dx = d.backward(&mut ps, &x, &Matrix::filled(1, 1, 1.0), true).unwrap();
        assert_eq!(ps.grad(d.weight).data(), &[1.0, 2.0]);
        assert_eq!(ps.grad(d.bias).data(), &[1.0]);
        assert_eq!(dx.data(), &[0.3, -0.7]);
    }

    #[test]
    fn dense_shape_mismatch_is_config_error() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut ps, "d", 3, 2, Init::Xavier, &mut rng);
        let err = d.forward(&ps, &Matrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, LtvError::Config(_)));
    }

    #[test]
    fn activation_spot_values() {
        let x = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(Activation::Relu.forward(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.derivative(0.0, tanh(0.0)), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturating_activations_stay_open() {
        for &x in &[-1e300, -800.0, -40.0, 40.0, 800.0, 1e300] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
            let t = tanh(x);
            assert!(t > -1.0 && t < 1.0, "tanh({x}) = {t}");
        }
        assert!(softplus(800.0).is_finite());
        assert_eq!(softplus(-800.0), 0.0);
    }

    #[test]
    fn batch_norm_two_points() {
        let mut ps = ParamSet::new();
        let bn = BatchNorm::new(&mut ps, "bn", 1);
        let x = Matrix::column(&[1.0, 3.0]);
        let (y, _) = bn.forward_train(&ps, &x).unwrap();
        // population std 1, eps shifts the result by ~5e-6
        assert!((y.get(0, 0) + 1.0).abs() < 1e-5);
        assert!((y.get(1, 0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn batch_norm_infer_with_unit_stats_is_identity() {
        let mut ps = ParamSet::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2);
        let x = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let y = bn.forward_infer(&ps, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs());
        }
    }

    #[test]
    fn batch_norm_constant_column_and_single_row() {
        let mut ps = ParamSet::new();
        let bn = BatchNorm::new(&mut ps, "bn", 1);
        let (y, _) = bn.forward_train(&ps, &Matrix::column(&[4.0, 4.0, 4.0])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(bn.forward_train(&ps, &Matrix::column(&[1.0])).is_err());
    }

    #[test]
    fn batch_norm_running_stats_momentum() {
        let mut ps = ParamSet::new();
        let bn = BatchNorm::new(&mut ps, "bn", 1);
        let (_, cache) = bn.forward_train(&ps, &Matrix::column(&[1.0, 3.0])).unwrap();
        bn.update_running(&mut ps, &cache);
        assert!((ps.value(bn.running_mean).get(0, 0) - 0.2).abs() < 1e-15);
        assert!((ps.value(bn.running_var).get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_gather_and_scatter() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Embedding::new(&mut ps, "e", 2, 2, 0.01, &mut rng);
        ps.load_value("e", Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap())
            .unwrap();
        assert_eq!(e.lookup(&ps, &[1]).unwrap().data(), &[2.0, 2.0]);
        let dy = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        e.backward(&mut ps, &[0, 0], &dy);
        assert_eq!(ps.grad(e.table).row(0), &[1.0, 1.0]);
        assert_eq!(ps.grad(e.table).row(1), &[0.0, 0.0]);
        assert!(matches!(e.lookup(&ps, &[2]), Err(LtvError::Input(_))));
    }

    #[test]
    fn embedding_empty_index() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Embedding::new(&mut ps, "e", 3, 4, 0.01, &mut rng);
        let out = e.lookup(&ps, &[]).unwrap();
        assert_eq!(out.shape(), (0, 4));
        e.backward(&mut ps, &[], &out);
        assert!(ps.grad(e.table).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = dropout_mask(50, 20, 0.2, &mut rng);
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let kept = m.data().iter().filter(|&&v| v > 0.0).count() as f64 / 1000.0;
        assert!((kept - 0.8).abs() < 0.05);
    }
}
