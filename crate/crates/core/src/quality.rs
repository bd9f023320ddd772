//! Per-shot quality maps and quality-weighted k-shot fusion.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::confidence::mean_of;
use crate::error::{Error, Result};

/// `P_raw[k, y, x] = Σ_s sigmoid(E_k[q, s])` with `q = y·W + x`, from the
/// masked `[HW, HW]` similarity matrices. Returns `[K, H, W]`.
pub fn quality_maps(tape: &mut Tape, masked: &[Var], height: usize, width: usize) -> Result<Var> {
    if masked.is_empty() {
        return Err(Error::Empty("quality_maps"));
    }
    let hw = height * width;
    let mut rows = Vec::with_capacity(masked.len());
    for &e in masked {
        let s = tape.shape(e);
        if s.len() != 2 || s[0] != hw {
            return Err(Error::ShapeMismatch {
                op: "quality_maps",
                lhs: s.to_vec(),
                rhs: vec![hw],
            });
        }
        let p = tape.sigmoid(e);
        let p = tape.sum_axis(p, 1)?;
        rows.push(tape.reshape(p, &[1, height, width])?);
    }
    tape.concat(&rows, 0)
}

/// Softmax of `p_raw: [K, H, W]` over shots, then `Σ_k P[k]·acts[k]`.
pub fn fuse_weighted(tape: &mut Tape, acts: &[Var], p_raw: Var) -> Result<Var> {
    let first = *acts.first().ok_or(Error::Empty("fuse_weighted"))?;
    let shape = tape.shape(first).to_vec();
    let k = acts.len();
    let ps = tape.shape(p_raw).to_vec();
    if shape.len() != 3 || ps != [k, shape[1], shape[2]] {
        return Err(Error::ShapeMismatch {
            op: "fuse_weighted",
            lhs: shape,
            rhs: ps,
        });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut stacked = Vec::with_capacity(k);
    for &a in acts {
        if tape.shape(a) != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "fuse_weighted",
                lhs: shape,
                rhs: tape.shape(a).to_vec(),
            });
        }
        stacked.push(tape.reshape(a, &[1, c, h, w])?);
    }
    let stacked = tape.concat(&stacked, 0)?;
    let weights = tape.softmax(p_raw, 0)?;
    let weights = tape.reshape(weights, &[k, 1, h, w])?;
    let weighted = tape.mul(stacked, weights)?;
    let fused = tape.sum_axis(weighted, 0)?;
    tape.reshape(fused, &[c, h, w])
}

/// Unweighted mean of the fused maps.
pub fn fuse_average(tape: &mut Tape, acts: &[Var]) -> Result<Var> {
    mean_of(tape, acts, "fuse_average")
}
