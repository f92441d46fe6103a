use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter tensor is for. Only [`ParamRole::Transform`] weights
/// enter the quaternion-versus-real weight ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Weight matrix of a hidden linear transform (quaternion or real).
    Transform,
    Bias,
    /// Layer-normalization gain and bias.
    Norm,
    Embedding,
    /// The real output projection.
    Head,
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamRole::Transform => "transform",
            ParamRole::Bias => "bias",
            ParamRole::Norm => "norm",
            ParamRole::Embedding => "embedding",
            ParamRole::Head => "head",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
}

/// Owner of every trainable tensor of a model, in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique within the store.
    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, role, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Copies of all values in store order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "{}: {:?} vs {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Puts every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        }
    }

    /// Parameter gradients in store order (zeros where the loss does not depend on it).
    pub fn collect_grads(&self, binding: &Binding, grads: &Gradients) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(&binding.vars)
            .map(|(p, &v)| grads.get_or_zeros(v, &p.value))
            .collect()
    }

    pub fn count(&self) -> ParamCount {
        let mut by_role = BTreeMap::new();
        for p in &self.params {
            *by_role.entry(p.role).or_insert(0) += p.value.len();
        }
        ParamCount { by_role }
    }
}

/// Tape handles for a store's parameters.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Adopts vars that were registered on a tape in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Exact trainable-scalar counts, split by role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub by_role: BTreeMap<ParamRole, usize>,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.by_role.values().sum()
    }

    pub fn role(&self, role: ParamRole) -> usize {
        self.by_role.get(&role).copied().unwrap_or(0)
    }

    /// Hidden-transform weight matrices only.
    pub fn weights(&self) -> usize {
        self.role(ParamRole::Transform)
    }
}

/// Exact ratio `num / den` kept as integers so that "exactly one quarter"
/// can be asserted without floating-point tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Ratio { num, den }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `num/den == p/q` by cross-multiplication.
    pub fn equals(&self, p: usize, q: usize) -> bool {
        self.num as u128 * q as u128 == p as u128 * self.den as u128
    }

    pub fn is_quarter(&self) -> bool {
        self.den > 0 && self.equals(1, 4)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} = {:.4}", self.num, self.den, self.value())
    }
}
