//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        AdamW {
            weight_decay,
            ..Self::default()
        }
    }

    /// One update of every trainable tensor, then clears all gradients.
    ///
    /// ```text
    /// θ ← θ − lr·wd·θ
    /// m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
    /// θ ← θ − lr · m̂ / (sqrt(v̂) + ε)
    /// ```
    pub fn step(&self, params: &mut ParamSet, lr: f64) {
        let t = params.bump_step() as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let theta = p.value.data_mut();
            let g = p.grad.data();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..theta.len() {
                theta[i] -= lr * self.weight_decay * theta[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
    }
}

/// Position inside a cosine-annealed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub step: u64,
    pub total_steps: u64,
    pub lr0: f64,
    pub lr_min: f64,
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`; `step` is clamped to `total`.
pub fn cosine_lr(state: &ScheduleState) -> f64 {
    let total = state.total_steps.max(1) as f64;
    let frac = (state.step as f64 / total).min(1.0);
    state.lr_min + 0.5 * (state.lr0 - state.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;

    fn scalar(theta: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Matrix::filled(1, 1, theta));
        ps.grad_mut(id).set(0, 0, g);
        ps
    }

    fn theta(ps: &ParamSet) -> f64 {
        ps.value(ps.id("theta").unwrap()).get(0, 0)
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut ps = scalar(0.37, 0.0);
        AdamW::with_weight_decay(0.0).step(&mut ps, 0.1);
        assert_eq!(theta(&ps), 0.37);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut ps = scalar(0.0, 1.0);
        AdamW::with_weight_decay(0.0).step(&mut ps, 0.1);
        assert!((theta(&ps) + 0.1).abs() < 1e-8);
        assert_eq!(ps.grad(ps.id("theta").unwrap()).get(0, 0), 0.0);
        assert_eq!(ps.step(), 1);
    }

    #[test]
    fn pure_decay_term() {
        let mut ps = scalar(1.0, 0.0);
        AdamW::with_weight_decay(0.1).step(&mut ps, 0.1);
        assert!((theta(&ps) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut ps = ParamSet::new();
        let b = ps.add_buffer("buf", Matrix::filled(1, 1, 2.0));
        ps.grad_mut(b).set(0, 0, 5.0);
        AdamW::default().step(&mut ps, 0.1);
        assert_eq!(ps.value(b).get(0, 0), 2.0);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let mut s = ScheduleState {
            step: 0,
            total_steps: 100,
            lr0: 5e-4,
            lr_min: 1e-5,
        };
        assert_eq!(cosine_lr(&s), 5e-4);
        s.step = 100;
        assert!((cosine_lr(&s) - 1e-5).abs() < 1e-18);
        s.step = 50;
        s.lr_min = 0.0;
        assert!((cosine_lr(&s) - 2.5e-4).abs() < 1e-15);
    }
}
