//! Named parameter storage shared by every trainable model.

use std::collections::BTreeMap;
use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    /// Handles in store order, for callers that register leaves themselves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor with entries drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data).expect("finite init"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Registers every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.watch(t)).collect())
    }

    /// Copies gradients for a bound store into each tensor's grad slot.
    pub fn store_grads(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.0) {
            grads.write_into(v, t)?;
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Scalar counts grouped by the first dotted segment of each name.
    pub fn count_by_part(&self) -> BTreeMap<String, usize> {
        let mut parts = BTreeMap::new();
        for (name, t) in self.iter() {
            let part = name.split('.').next().unwrap_or(name).to_string();
            *parts.entry(part).or_insert(0) += t.numel();
        }
        parts
    }

    /// Replaces values by name; every stored name must be present with the
    /// same shape.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
            let slot = &mut self.tensors[id.0];
            if slot.shape() != t.shape() {
                return Err(Error::dim(
                    "load_from",
                    format!("{name} {:?}", slot.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            slot.assign(t.data())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_group_by_prefix() {
        let mut s = ParamStore::new();
        s.add("revin.gamma", Tensor::zeros(&[3]));
        s.add("revin.beta", Tensor::zeros(&[3]));
        s.add("linear_e.weight", Tensor::zeros(&[4, 6]));
        let parts = s.count_by_part();
        assert_eq!(parts["revin"], 6);
        assert_eq!(parts["linear_e"], 24);
        assert_eq!(s.num_scalars(), 30);
        assert!(s.get(s.id("revin.beta").unwrap()).requires_grad());
    }
}
