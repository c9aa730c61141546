//! Top-bucket specialist: attention-gated feature noise during training and a
//! dual regression/confidence head trained with a focal-style loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LtvError, Result};
use crate::nn::{Activation, Dense, Init, Matrix, Mlp, MlpCache, ParamSet};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighValueConfig {
    pub attention_hidden: usize,
    /// Hidden sizes of the shared trunk under the two heads.
    pub trunk: Vec<usize>,
    pub noise_std: f64,
    pub focal_beta: f64,
    pub reg_lambda: f64,
    /// Floor on the denominator of the relative error.
    pub denom_floor: f64,
}

impl Default for HighValueConfig {
    fn default() -> Self {
        HighValueConfig {
            attention_hidden: 32,
            trunk: vec![48, 32],
            noise_std: 0.1,
            focal_beta: 2.0,
            reg_lambda: 0.5,
            denom_floor: 1.0,
        }
    }
}

impl HighValueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attention_hidden == 0 || self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(LtvError::config("high-value widths must be positive"));
        }
        if !(self.noise_std >= 0.0) || !(self.focal_beta >= 0.0) || !(self.reg_lambda >= 0.0) {
            return Err(LtvError::config("noise_std, focal_beta and reg_lambda must be >= 0"));
        }
        if !(self.denom_floor > 0.0) {
            return Err(LtvError::config("denom_floor must be positive"));
        }
        Ok(())
    }
}

/// Per-row `[mean, std, max, min]` across the feature dimension (population std).
pub fn feature_stats(h: &Matrix) -> Matrix {
    let (b, d) = h.shape();
    let mut out = Matrix::zeros(b, 4);
    for i in 0..b {
        let row = h.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        out.row_mut(i).copy_from_slice(&[mean, var.sqrt(), max, min]);
    }
    out
}

/// Gradient of `feature_stats` pulled back to `h`. Max and min route to their
/// first arg-extremum; the std gradient is taken as zero for constant rows.
pub fn feature_stats_backward(h: &Matrix, stats: &Matrix, dstats: &Matrix) -> Matrix {
    let (b, d) = h.shape();
    let mut dh = Matrix::zeros(b, d);
    let n = d as f64;
    for i in 0..b {
        let row = h.row(i);
        let s = stats.row(i);
        let ds = dstats.row(i);
        let (mean, std) = (s[0], s[1]);
        let argmax = row.iter().position(|&v| v == s[2]).unwrap_or(0);
        let argmin = row.iter().position(|&v| v == s[3]).unwrap_or(0);
        let out = dh.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = ds[0] / n;
            if std > 0.0 {
                *o += ds[1] * (row[j] - mean) / (n * std);
            }
        }
        out[argmax] += ds[2];
        out[argmin] += ds[3];
    }
    dh
}

/// `h + ε ⊙ w` with `ε ~ N(0, σ²)`; row `i` draws from `(seed, step, index_i)`.
pub fn augment(h: &Matrix, w: &Matrix, noise: &Matrix) -> Matrix {
    let mut out = h.clone();
    for ((o, &wi), &e) in out.data_mut().iter_mut().zip(w.data()).zip(noise.data()) {
        *o += e * wi;
    }
    out
}

/// Gaussian noise matrix for the rows `index`.
pub fn augmentation_noise(seed: u64, step: u64, index: &[usize], dim: usize, sigma: f64) -> Matrix {
    let mut eps = Matrix::zeros(index.len(), dim);
    if sigma == 0.0 {
        return eps;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for (r, &i) in index.iter().enumerate() {
        let mut rng = stream(seed, &[tag::AUG_NOISE, step, i as u64]);
        for v in eps.row_mut(r) {
            *v = normal.sample(&mut rng);
        }
    }
    eps
}

/// Focal confidence term `−(1−p)^β ln p`.
pub fn focal_term(p: f64, beta: f64) -> f64 {
    -(1.0 - p).powf(beta) * p.ln()
}

fn focal_derivative(p: f64, beta: f64) -> f64 {
    let q = 1.0 - p;
    let lead = if beta == 0.0 { 0.0 } else { beta * q.powf(beta - 1.0) * p.ln() };
    lead - q.powf(beta) / p
}

/// `|v̂ − y| / max(y, floor)`.
pub fn relative_term(v_hat: f64, y: f64, floor: f64) -> f64 {
    (v_hat - y).abs() / y.max(floor)
}

/// Mean over the given samples of `focal + λ·relative`, with gradients in
/// `v̂` and `p_conf`. An empty set contributes zero.
pub fn high_value_loss(
    v_hat: &[f64],
    p_conf: &[f64],
    y: &[f64],
    cfg: &HighValueConfig,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = y.len();
    if n == 0 {
        return (0.0, Vec::new(), Vec::new());
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut dv = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let denom = y[i].max(cfg.denom_floor);
        loss += focal_term(p_conf[i], cfg.focal_beta)
            + cfg.reg_lambda * relative_term(v_hat[i], y[i], cfg.denom_floor);
        let diff = v_hat[i] - y[i];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        dv.push(cfg.reg_lambda * sign / denom / nf);
        dp.push(focal_derivative(p_conf[i], cfg.focal_beta) / nf);
    }
    (loss / nf, dv, dp)
}

#[derive(Debug, Clone)]
pub struct HighValueNet {
    pub attention: Mlp,
    pub trunk: Mlp,
    pub reg_head: Dense,
    pub conf_head: Dense,
    h_dim: usize,
}

#[derive(Debug, Clone)]
pub struct HighValueCache {
    attn: MlpCache,
    noise: Option<Matrix>,
    trunk: MlpCache,
    reg_pre: Matrix,
    conf_pre: Matrix,
    pub v_hat: Matrix,
    pub p_conf: Matrix,
}

impl HighValueNet {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        h_dim: usize,
        embed_dim: usize,
        cfg: &HighValueConfig,
        rng: &mut R,
    ) -> Self {
        let attention = Mlp::new(
            ps,
            &format!("{name}.attention"),
            &[h_dim + 4 + embed_dim, cfg.attention_hidden, h_dim],
            Activation::Relu,
            Activation::Sigmoid,
            0.0,
            rng,
        );
        let mut dims = vec![h_dim];
        dims.extend(&cfg.trunk);
        let trunk = Mlp::new(
            ps,
            &format!("{name}.trunk"),
            &dims,
            Activation::Relu,
            Activation::Relu,
            0.0,
            rng,
        );
        let last = *cfg.trunk.last().expect("validated non-empty");
        HighValueNet {
            attention,
            trunk,
            reg_head: Dense::new(ps, &format!("{name}.reg"), last, 1, Init::Xavier, rng),
            conf_head: Dense::new(ps, &format!("{name}.conf"), last, 1, Init::Xavier, rng),
            h_dim,
        }
    }

    /// Sets the regression bias so an all-zero trunk output maps to `value`.
    /// The head works in raw value scale, which a zero bias would leave far
    /// below the top bucket.
    pub fn init_output(&self, ps: &mut ParamSet, value: f64) {
        ps.value_mut(self.reg_head.bias).fill(softplus_inverse(value.max(1e-6)));
    }

    /// Attention weights in `(0, 1)` for each feature dimension.
    pub fn attention_weights(&self, ps: &ParamSet, h: &Matrix, b_embed: &Matrix) -> Result<Matrix> {
        let input = Matrix::hconcat(&[h, &feature_stats(h), b_embed])?;
        Ok(self.attention.forward(ps, &input, None)?.output().clone())
    }

    /// `h` and `b_embed` are constants here. `noise` is `None` at inference,
    /// where the augmentation is the identity.
    pub fn forward(
        &self,
        ps: &ParamSet,
        h: &Matrix,
        b_embed: &Matrix,
        noise: Option<&Matrix>,
    ) -> Result<HighValueCache> {
        if h.cols() != self.h_dim {
            return Err(LtvError::config("high-value input width mismatch"));
        }
        let input = Matrix::hconcat(&[h, &feature_stats(h), b_embed])?;
        let attn = self.attention.forward(ps, &input, None)?;
        let h_aug = match noise {
            Some(eps) => augment(h, attn.output(), eps),
            None => h.clone(),
        };
        let trunk = self.trunk.forward(ps, &h_aug, None)?;
        let reg_pre = self.reg_head.forward(ps, trunk.output())?;
        let conf_pre = self.conf_head.forward(ps, trunk.output())?;
        let v_hat = Activation::Softplus.forward(&reg_pre);
        let p_conf = Activation::Sigmoid.forward(&conf_pre);
        Ok(HighValueCache {
            attn,
            noise: noise.cloned(),
            trunk,
            reg_pre,
            conf_pre,
            v_hat,
            p_conf,
        })
    }

    pub fn backward(&self, ps: &mut ParamSet, c: &HighValueCache, dv: &[f64], dp: &[f64]) {
        let dreg = Activation::Softplus.backward(&c.reg_pre, &c.v_hat, &Matrix::column(dv));
        let dconf = Activation::Sigmoid.backward(&c.conf_pre, &c.p_conf, &Matrix::column(dp));
        let mut dt = self
            .reg_head
            .backward(ps, c.trunk.output(), &dreg, true)
            .expect("dx");
        dt.add_assign(
            &self
                .conf_head
                .backward(ps, c.trunk.output(), &dconf, true)
                .expect("dx"),
        );
        let need_aug_grad = c.noise.is_some();
        let dh_aug = self.trunk.backward(ps, &c.trunk, &dt, need_aug_grad);
        if let (Some(eps), Some(dh_aug)) = (&c.noise, dh_aug) {
            let dw = dh_aug.zip_map(eps, |g, e| g * e);
            self.attention.backward(ps, &c.attn, &dw, false);
        }
    }
}

/// `x` with `softplus(x) = y`, for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
