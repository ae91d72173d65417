//! Named, ordered learnable tensors with alias support for shared weights.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Weight of the last layer of a residual branch; zeroed by [`ParamStore::zero_branch_outputs`].
    BranchOut,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
    /// Inputs feeding one output unit; sets the init bound.
    pub fan_in: usize,
}

#[derive(Clone, Debug)]
pub struct ParamStore {
    dtype: DType,
    entries: Vec<ParamEntry>,
    names: HashMap<String, usize>,
    aliases: Vec<(String, usize)>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            dtype,
            entries: Vec::new(),
            names: HashMap::new(),
            aliases: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Register a zero-filled parameter.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        kind: ParamKind,
        fan_in: usize,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.clone(),
            tensor: Tensor::zeros(shape, self.dtype)?,
            kind,
            fan_in,
        });
        self.names.insert(name, id);
        Ok(ParamId(id))
    }

    /// Make `alias` resolve to the same tensor as `target`.
    pub fn alias(&mut self, alias: impl Into<String>, target: ParamId) -> Result<()> {
        let alias = alias.into();
        if self.names.contains_key(&alias) {
            return Err(Error::Invalid(format!("duplicate parameter name {alias}")));
        }
        self.names.insert(alias.clone(), target.0);
        self.aliases.push((alias, target.0));
        Ok(())
    }

    /// Number of unique tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over unique tensors; aliases are not double counted.
    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn aliases(&self) -> &[(String, usize)] {
        &self.aliases
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.entries[id.0].tensor)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    /// Replace a parameter value; shape and dtype must match.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.entries[id.0].tensor;
        if cur.shape() != value.shape() {
            return shape_err(
                "param set",
                format!("{} expects {:?}, got {:?}", self.entries[id.0].name, cur.shape(), value.shape()),
            );
        }
        cur.same_dtype(&value, "param set")?;
        self.entries[id.0].tensor = value;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        self.set(id, value)
    }

    /// Zero every learnable tensor.
    pub fn zero_all(&mut self) {
        for e in &mut self.entries {
            e.tensor = Tensor::zeros(e.tensor.shape(), self.dtype).expect("valid shape");
        }
    }

    /// He-style uniform init: weights in `[-b, b]` with `b = sqrt(6 / fan_in)`, biases zero.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &mut self.entries {
            let shape = e.tensor.shape().to_vec();
            e.tensor = match e.kind {
                ParamKind::Bias => Tensor::zeros(shape, self.dtype).expect("valid shape"),
                ParamKind::Weight | ParamKind::BranchOut => {
                    let bound = (6.0 / e.fan_in.max(1) as f64).sqrt();
                    let vals: Vec<f64> = (0..e.tensor.numel())
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Tensor::from_f64(shape, &vals, self.dtype).expect("valid shape")
                }
            };
        }
    }

    pub fn mark_branch_output(&mut self, id: ParamId) {
        self.entries[id.0].kind = ParamKind::BranchOut;
    }

    /// Zero the closing weights of every residual branch, so each branch starts as a no-op.
    pub fn zero_branch_outputs(&mut self) {
        for e in &mut self.entries {
            if e.kind == ParamKind::BranchOut {
                e.tensor = Tensor::zeros(e.tensor.shape(), self.dtype).expect("valid shape");
            }
        }
    }

    /// Put every unique tensor on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape, tracked: bool) -> Bound<'t> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.tensor.clone(), tracked))
                .collect(),
        }
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradient for every unique parameter, in store order. Parameters the loss does not depend
    /// on get a zero tensor.
    pub fn collect_grads(&self, store: &ParamStore, grads: &Gradients) -> Result<Vec<Tensor>> {
        self.vars
            .iter()
            .zip(store.entries())
            .map(|(v, e)| match grads.get(*v) {
                Some(g) => Ok(g.clone()),
                None => Tensor::zeros(e.tensor.shape(), store.dtype()),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_resolve_to_one_tensor() {
        let mut s = ParamStore::new(DType::F32);
        let id = s.register("a.weight", &[2, 2], ParamKind::Weight, 2).unwrap();
        s.alias("b.weight", id).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.num_params(), 4);
        s.set_by_name("b.weight", Tensor::full([2, 2], 3.0, DType::F32).unwrap())
            .unwrap();
        assert_eq!(s.get("a.weight").unwrap().at(&[1, 1]), 3.0);
        assert!(s.alias("a.weight", id).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut a = ParamStore::new(DType::F64);
        a.register("w", &[64, 8, 3, 3], ParamKind::Weight, 72).unwrap();
        a.register("b", &[64], ParamKind::Bias, 72).unwrap();
        let mut b = a.clone();
        a.init_uniform(7);
        b.init_uniform(7);
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert!(x.tensor.bitwise_eq(&y.tensor));
        }
        let bound = (6.0f64 / 72.0).sqrt();
        assert!(a.get("w").unwrap().to_f64_vec().iter().all(|v| v.abs() <= bound));
        assert!(a.get("b").unwrap().to_f64_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::new(DType::F32);
        let id = s.register("w", &[3], ParamKind::Weight, 1).unwrap();
        assert!(s.set(id, Tensor::zeros([4], DType::F32).unwrap()).is_err());
        assert!(s.set(id, Tensor::zeros([3], DType::F64).unwrap()).is_err());
    }
}
