//! Named trainable tensors and their binding onto a tape.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Ordered collection of model parameters. Order is insertion order and is
/// the order used by checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Uses `vars[i]` as the handle of the `i`-th parameter.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value,
            grad: None,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.trainable = trainable;
        }
    }

    /// Records every parameter on `tape`: trainable ones as differentiable
    /// leaves, frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|p| {
                    if p.trainable {
                        tape.param(p.value.clone())
                    } else {
                        tape.constant(p.value.clone())
                    }
                })
                .collect(),
        )
    }

    /// Records every parameter as a constant (no gradients are tracked).
    pub fn bind_constants(&self, tape: &mut Tape) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        )
    }

    /// Adds `scale * dLoss/dParam` into the gradient buffer of every trainable
    /// parameter reached by the backward pass.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bindings: &Bindings, scale: f64) {
        for (p, &var) in self.params.iter_mut().zip(&bindings.0) {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(var) else { continue };
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, v)| *a += scale * v),
                None => p.grad = Some(g.map(|v| scale * v)),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Replaces parameter values from `(name, tensor)` records, checking that
    /// names, order and shapes agree exactly.
    pub fn load_values<'a>(
        &mut self,
        records: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        let mut count = 0;
        for (i, (name, value)) in records.into_iter().enumerate() {
            let p = self
                .params
                .get_mut(i)
                .ok_or_else(|| Error::Config(alloc::format!("unexpected parameter `{name}`")))?;
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Config(alloc::format!(
                    "parameter {i}: expected `{}` {:?}, found `{name}` {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
            count += 1;
        }
        if count != self.params.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameters, found {count}",
                self.params.len()
            )));
        }
        Ok(())
    }
}
