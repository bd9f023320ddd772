//! Central-difference verification of backward rules.

use alloc::vec::Vec;

use crate::autodiff::{OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares tape gradients of a scalar function against central differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    fault: Option<OpKind>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self::new(DEFAULT_EPS)
    }
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        Self { eps, fault: None }
    }

    /// Breaks the backward rule of `kind` during the analytic pass.
    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    /// Maximum over all entries of all `inputs` of
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<f64>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let first = evaluate(&f, inputs)?;
        let second = evaluate(&f, inputs)?;
        if first.to_bits() != second.to_bits() {
            return Err(Error::NonDeterministic { first, second });
        }

        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.inject_fault(kind);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;

        let mut worst = 0.0f64;
        let mut probe: Vec<Tensor> = inputs.to_vec();
        for (slot, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var);
            for k in 0..inputs[slot].len() {
                let orig = inputs[slot].data()[k];
                probe[slot].data_mut()[k] = orig + self.eps;
                let plus = evaluate(&f, &probe)?;
                probe[slot].data_mut()[k] = orig - self.eps;
                let minus = evaluate(&f, &probe)?;
                probe[slot].data_mut()[k] = orig;

                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = analytic.map_or(0.0, |g| g.data()[k]);
                let denom = 1.0f64.max(libm::fabs(a)).max(libm::fabs(numeric));
                worst = worst.max(libm::fabs(a - numeric) / denom);
            }
        }
        Ok(worst)
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Single-input form of [`GradCheck::run`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    GradCheck::new(eps).run(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x))
}
