//! Named, ordered parameter collections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Learner parameters in a stable order. Gradients use the same type, so a
/// gradient map always lines up with the collection it was computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

pub type GradMap<T = f64> = ParamSet<T>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (n, t) in entries {
            if names.contains(&n) {
                return Err(Error::invalid(format!("duplicate parameter {n:?}")));
            }
            names.push(n);
            tensors.push(t);
        }
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.iter()
            .map(|(n, t)| ParamSpec {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    /// Same names and shapes, new values.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::invalid("parameter count changed"));
        }
        for (a, b) in self.tensors.iter().zip(&tensors) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "with_tensors",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }

    pub fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid("parameter collections have different keys"));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "align",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// `self - rate * grads`, element by element.
    pub fn descend(&self, grads: &GradMap<T>, rate: T) -> Result<Self> {
        self.check_aligned(grads)?;
        let tensors = self
            .tensors
            .iter()
            .zip(&grads.tensors)
            .map(|(p, g)| {
                let mut out = p.clone();
                for (o, &gv) in out.data_mut().iter_mut().zip(g.data()) {
                    *o = *o - rate * gv;
                }
                if out.all_finite() {
                    Ok(out)
                } else {
                    Err(Error::NonFinite { op: "descend" })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }

    /// Register every tensor as a differentiable leaf of `g`.
    pub fn as_leaves(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
