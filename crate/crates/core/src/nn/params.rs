use std::collections::HashMap;

use super::matrix::Matrix;
use crate::error::{LtvError, Result};

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// One named tensor with its gradient buffer and AdamW moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub m: Matrix,
    pub v: Matrix,
    /// Buffers such as batch-norm running statistics are stored here too but
    /// never touched by the optimizer.
    pub trainable: bool,
}

/// All parameters of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Matrix, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Matrix) -> ParamId {
        self.insert(name, value, false)
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.data().len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Optimizer step counter; monotone.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Restores the counter from a checkpoint.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Overwrites the value of a named tensor, checking its shape.
    pub fn load_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| LtvError::Artifact(format!("unknown tensor {name}")))?;
        let slot = &mut self.params[id.0].value;
        if slot.shape() != value.shape() {
            return Err(LtvError::Artifact(format!(
                "tensor {name}: expected shape {:?}, found {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_buffers_match_shapes() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Matrix::filled(2, 3, 1.0));
        let b = ps.add_buffer("b", Matrix::zeros(1, 3));
        assert_eq!(ps.grad(a).shape(), (2, 3));
        assert_eq!(ps.num_trainable(), 6);
        assert!(!ps.is_trainable(b));
        assert_eq!(ps.id("b"), Some(b));
        assert!(ps.load_value("a", Matrix::zeros(3, 2)).is_err());
    }
}
