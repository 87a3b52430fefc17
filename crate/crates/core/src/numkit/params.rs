use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Tensor};
use crate::{Error, Result};

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Feature extractor weights.
    Encoder,
    /// Temperature and weight generators.
    Head,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Option<Tensor>,
    pub group: ParamGroup,
}

/// Named trainable tensors with matching gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) {
        let grad = Tensor::zeros(value.shape());
        self.params.insert(
            name.into(),
            Param {
                value,
                grad,
                velocity: None,
                group,
            },
        );
    }

    /// Adds a `fan_in × fan_out` weight drawn from `N(0, gain / fan_in)`.
    pub fn insert_weight(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) {
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("valid std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::from_parts(vec![fan_in, fan_out], data), group);
    }

    pub fn insert_bias(&mut self, name: &str, len: usize, value: f64, group: ParamGroup) {
        self.insert(name, Tensor::full(&[1, len], value), group);
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter leaf on `tape` into the
    /// matching gradient buffers.
    pub fn absorb(&mut self, tape: &Tape, grads: &Gradients) {
        for (name, g) in tape.param_grads(grads) {
            if let Some(p) = self.params.get_mut(name) {
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Copies values (not optimizer state) from `other` for every shared name.
    pub fn copy_values_from(&mut self, other: &ParamSet) {
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                p.value = src.value.clone();
            }
        }
    }

    /// Flat view of all values in name order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.values().flat_map(|p| p.value.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorb_sums_repeated_bindings() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(&[1.0, 2.0]), ParamGroup::Head);
        let mut tape = Tape::new();
        let a = tape.param(&ps, "w");
        let b = tape.param(&ps, "w");
        let s = tape.add(a, b);
        let out = tape.sum(s);
        let g = tape.backward(out).unwrap();
        ps.zero_grad();
        ps.absorb(&tape, &g);
        assert_eq!(ps.grad("w").unwrap().data(), &[2.0, 2.0]);
        ps.zero_grad();
        assert_eq!(ps.grad("w").unwrap().data(), &[0.0, 0.0]);
    }
}
