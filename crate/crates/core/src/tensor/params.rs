use alloc::string::String;
use alloc::vec::Vec;

use super::array::{Shape, Tensor};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// An ordered list of named tensors: the parameters of a network, or any
/// quantity shaped like them (gradients, moments, step sizes).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    entries: Vec<(String, Tensor)>,
}

impl ParamVector {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        ParamVector { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count `q`.
    pub fn numel(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.tensors().map(Tensor::shape).collect()
    }

    pub fn full_like(&self, v: f64) -> ParamVector {
        ParamVector {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::full(t.shape(), v)))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> ParamVector {
        self.full_like(0.0)
    }

    /// Same names and shapes, new values.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<ParamVector> {
        if tensors.len() != self.entries.len() {
            return Err(Error::contract("parameter count mismatch"));
        }
        let mut entries = Vec::with_capacity(tensors.len());
        for ((name, old), t) in self.entries.iter().zip(tensors) {
            if old.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "param-replace",
                    lhs: old.shape(),
                    rhs: t.shape(),
                });
            }
            entries.push((name.clone(), t));
        }
        Ok(ParamVector { entries })
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape())
    }

    /// All scalars in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamVector::flatten`] using this vector's layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamVector> {
        if flat.len() != self.numel() {
            return Err(Error::contract(alloc::format!(
                "expected {} scalars, got {}",
                self.numel(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.entries.len());
        for t in self.tensors() {
            let n = t.numel();
            tensors.push(Tensor::new(t.shape(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        self.with_tensors(tensors)
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.same_layout(other)
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Places every entry on `tape` as a differentiable leaf.
    pub fn to_params<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().map(|t| tape.param(t.clone())).collect()
    }

    /// Places every entry on `tape` as a constant.
    pub fn to_constants<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors().map(|t| tape.constant(t.clone())).collect()
    }

    /// Reads the current values of `vars` back into this layout.
    pub fn from_vars(&self, vars: &[Var<'_>]) -> Result<ParamVector> {
        self.with_tensors(vars.iter().map(Var::value).collect())
    }
}
