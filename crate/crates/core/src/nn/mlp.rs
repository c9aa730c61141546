use rand::{Rng, RngCore};

use super::layers::{dropout_mask, Activation, Dense, Init};
use super::matrix::Matrix;
use super::params::ParamSet;
use crate::error::Result;

/// Stack of dense layers: hidden layers share one activation (followed by
/// optional inverted dropout), the last layer has its own.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_act: Activation,
    pub out_act: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    act: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
    output: Matrix,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl Mlp {
    /// `dims` = `[input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        dims: &[usize],
        hidden_act: Activation,
        out_act: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(ps, &format!("{name}.{i}"), w[0], w[1], Init::Xavier, rng))
            .collect();
        Mlp {
            layers,
            hidden_act,
            out_act,
            dropout,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Dropout is applied only when `dropout_rng` is given and the rate is positive.
    pub fn forward(
        &self,
        ps: &ParamSet,
        x: &Matrix,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<MlpCache> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut act = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(ps, &cur)?;
            let last = i + 1 == n;
            let a = if last {
                self.out_act.forward(&z)
            } else {
                self.hidden_act.forward(&z)
            };
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if !last && self.dropout > 0.0 => {
                    Some(dropout_mask(a.rows(), a.cols(), self.dropout, rng))
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => a.zip_map(m, |v, k| v * k),
                None => a.clone(),
            };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
            act.push(a);
            masks.push(mask);
        }
        Ok(MlpCache {
            inputs,
            pre,
            act,
            masks,
            output: cur,
        })
    }

    pub fn backward(
        &self,
        ps: &mut ParamSet,
        cache: &MlpCache,
        dy: &Matrix,
        need_dx: bool,
    ) -> Option<Matrix> {
        let n = self.layers.len();
        let mut grad = dy.clone();
        for i in (0..n).rev() {
            if let Some(m) = &cache.masks[i] {
                grad = grad.zip_map(m, |g, k| g * k);
            }
            let act = if i + 1 == n { self.out_act } else { self.hidden_act };
            let dz = act.backward(&cache.pre[i], &cache.act[i], &grad);
            let want_dx = need_dx || i > 0;
            grad = self.layers[i].backward(ps, &cache.inputs[i], &dz, want_dx)?;
        }
        Some(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradients_with_frozen_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(
            &mut ps,
            "m",
            &[3, 5, 4, 2],
            Activation::Tanh,
            Activation::Sigmoid,
            0.3,
            &mut rng,
        );
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let loss = |ps: &ParamSet| -> Result<f64> {
            let mut drop = ChaCha8Rng::seed_from_u64(77);
            let c = mlp.forward(ps, &x, Some(&mut drop))?;
            Ok(c.output().data().iter().enumerate().map(|(i, v)| v * (i as f64 - 3.0)).sum())
        };
        let analytic = |ps: &mut ParamSet| -> Result<()> {
            let mut drop = ChaCha8Rng::seed_from_u64(77);
            let c = mlp.forward(ps, &x, Some(&mut drop))?;
            let dy = Matrix::from_vec(4, 2, (0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
            mlp.backward(ps, &c, &dy, false);
            Ok(())
        };
        let rep = grad_check(&mut ps, analytic, loss, GradCheckOptions::default()).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }
}
