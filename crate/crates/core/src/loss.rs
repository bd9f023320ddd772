//! Segmentation cross-entropy and the combined training objective.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::decoder::DecoderOutput;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Trade-off weights: `alpha` on intermediate predictions, `beta` on the
/// final prediction, `gamma` on the memory reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for v in [self.alpha, self.beta, self.gamma] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!(
                    "loss weights must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Class index per pixel of a binary mask.
pub fn target_indices(target: &Tensor) -> Result<Vec<usize>> {
    target
        .data()
        .iter()
        .map(|&v| match v {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            v => Err(Error::NonBinary(v)),
        })
        .collect()
}

/// Mean over pixels of `-log softmax(logits)[target]`, `logits: [2, H, W]`, `target: [H, W]`.
pub fn seg_cross_entropy(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var> {
    let s = tape.shape(logits);
    if s.len() != 3 || s[1..] != *target.shape() {
        return Err(Error::ShapeMismatch {
            op: "seg_cross_entropy",
            lhs: s.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let idx = target_indices(target)?;
    let log_p = tape.log_softmax(logits, 0)?;
    let picked = tape.take_along_axis(log_p, 0, &idx)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// `(alpha / L)·Σ CE(intermediate) + beta·CE(final)`.
pub fn segmentation_loss(
    tape: &mut Tape,
    out: &DecoderOutput,
    target: &Tensor,
    w: &LossWeights,
) -> Result<Var> {
    if out.intermediate_logits.is_empty() {
        return Err(Error::Empty("intermediate logits"));
    }
    let l = out.intermediate_logits.len() as f64;
    let mut inter = Vec::with_capacity(out.intermediate_logits.len());
    for &logits in &out.intermediate_logits {
        inter.push(seg_cross_entropy(tape, logits, target)?);
    }
    let mut acc = inter[0];
    for &v in &inter[1..] {
        acc = tape.add(acc, v)?;
    }
    let inter = tape.scale(acc, w.alpha / l);
    let fin = seg_cross_entropy(tape, out.final_logits, target)?;
    let fin = tape.scale(fin, w.beta);
    tape.add(inter, fin)
}

/// Segmentation loss plus `gamma·recon`.
pub fn total_loss(
    tape: &mut Tape,
    out: &DecoderOutput,
    target: &Tensor,
    recon: Var,
    w: &LossWeights,
) -> Result<Var> {
    let seg = segmentation_loss(tape, out, target, w)?;
    combine(tape, seg, recon, w)
}

/// `seg + gamma·recon` for an already computed segmentation term.
pub fn combine(tape: &mut Tape, seg: Var, recon: Var, w: &LossWeights) -> Result<Var> {
    let r = tape.scale(recon, w.gamma);
    tape.add(seg, r)
}
