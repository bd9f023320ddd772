//! Masked cosine-attention propagation of support activations into the query.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Similarity assigned to background support nodes before the row softmax.
pub const BACKGROUND_FILL: f64 = -1e9;
/// Added to node norms in cosine denominators.
pub const NORM_GUARD: f64 = 1e-12;

/// Binary support mask at feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportMaskGrid {
    mask: Tensor,
}

impl SupportMaskGrid {
    /// Wraps a `[H, W]` tensor whose entries are all 0 or 1.
    pub fn new(mask: Tensor) -> Result<Self> {
        if mask.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "SupportMaskGrid",
                lhs: mask.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        if let Some(&v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinary(v));
        }
        Ok(Self { mask })
    }

    pub fn height(&self) -> usize {
        self.mask.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.mask.shape()[1]
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.mask
    }

    fn require_foreground(&self) -> Result<()> {
        if self.foreground_count() == 0 {
            return Err(Error::EmptyForeground);
        }
        Ok(())
    }
}

/// Nearest-neighbour subsampling of a binary `[H_img, W_img]` mask, sampling
/// each output cell at its centre.
pub fn downsample_mask(mask: &Tensor, height: usize, width: usize) -> Result<SupportMaskGrid> {
    if mask.rank() != 2 || height == 0 || width == 0 {
        return Err(Error::ShapeMismatch {
            op: "downsample_mask",
            lhs: mask.shape().to_vec(),
            rhs: vec![height, width],
        });
    }
    let (hi, wi) = (mask.shape()[0], mask.shape()[1]);
    if height > hi || width > wi {
        return Err(Error::Upsample {
            from: [hi, wi],
            to: [height, width],
        });
    }
    let out = Tensor::from_fn(&[height, width], |k| {
        let (y, x) = (k / width, k % width);
        let sy = (2 * y + 1) * hi / (2 * height);
        let sx = (2 * x + 1) * wi / (2 * width);
        mask.at2(sy, sx)
    });
    SupportMaskGrid::new(out)
}

fn node_dims(tape: &Tape, v: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    let s = tape.shape(v);
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: Vec::new(),
        });
    }
    Ok((s[0], s[1], s[2]))
}

fn unit_columns(tape: &mut Tape, x: Var) -> Result<Var> {
    let norm = tape.l2_norm(x, 0)?;
    let norm = tape.add_scalar(norm, NORM_GUARD);
    tape.div(x, norm)
}

/// Cosine similarity between the `C`-dim columns of `q: [C, HWq]` and `s: [C, HWs]`.
pub fn cosine_columns(tape: &mut Tape, q: Var, s: Var) -> Result<Var> {
    let qn = unit_columns(tape, q)?;
    let sn = unit_columns(tape, s)?;
    let qt = tape.transpose(qn)?;
    tape.matmul(qt, sn)
}

/// `E[i, j] = cos(q[:, i], s[:, j])` over flattened nodes of two `[C, H, W]` grids.
pub fn pairwise_cosine(tape: &mut Tape, q: Var, s: Var) -> Result<Var> {
    let (cq, hq, wq) = node_dims(tape, q, "pairwise_cosine")?;
    let (cs, hs, ws) = node_dims(tape, s, "pairwise_cosine")?;
    if cq != cs {
        return Err(Error::ShapeMismatch {
            op: "pairwise_cosine",
            lhs: tape.shape(q).to_vec(),
            rhs: tape.shape(s).to_vec(),
        });
    }
    let qf = tape.reshape(q, &[cq, hq * wq])?;
    let sf = tape.reshape(s, &[cs, hs * ws])?;
    cosine_columns(tape, qf, sf)
}

/// `E ⊙ m + (m − 1)·1e9` with `m` broadcast along rows.
pub fn mask_similarities(tape: &mut Tape, e: Var, mask: &SupportMaskGrid) -> Result<Var> {
    let hw = mask.height() * mask.width();
    let cols = tape.shape(e).get(1).copied();
    if tape.shape(e).len() != 2 || cols != Some(hw) {
        return Err(Error::ShapeMismatch {
            op: "mask_similarities",
            lhs: tape.shape(e).to_vec(),
            rhs: vec![hw],
        });
    }
    let m = mask.tensor().clone().reshape(&[1, hw])?;
    let fill = m.map(|v| (1.0 - v) * BACKGROUND_FILL);
    let m = tape.constant(m);
    let fill = tape.constant(fill);
    let kept = tape.mul(e, m)?;
    tape.add(kept, fill)
}

/// Row softmax of the masked similarities.
pub fn masked_softmax_weights(tape: &mut Tape, e: Var, mask: &SupportMaskGrid) -> Result<Var> {
    mask.require_foreground()?;
    let masked = mask_similarities(tape, e, mask)?;
    tape.softmax(masked, 1)
}

/// Fused query grid and the masked similarity matrix it was built from.
#[derive(Clone, Copy, Debug)]
pub struct Propagated {
    pub fused: Var,
    pub masked_similarity: Var,
}

/// `h'_q = h_q ⊙ Σ_s W[q, s]·h_s` for query and support grids of equal shape.
pub fn propagate(tape: &mut Tape, q: Var, s: Var, mask: &SupportMaskGrid) -> Result<Propagated> {
    mask.require_foreground()?;
    let (c, h, w) = node_dims(tape, q, "propagate")?;
    if tape.shape(s) != [c, mask.height(), mask.width()] {
        return Err(Error::ShapeMismatch {
            op: "propagate",
            lhs: tape.shape(s).to_vec(),
            rhs: vec![c, mask.height(), mask.width()],
        });
    }
    let e = pairwise_cosine(tape, q, s)?;
    let masked = mask_similarities(tape, e, mask)?;
    let weights = tape.softmax(masked, 1)?;
    let sf = tape.reshape(s, &[c, mask.height() * mask.width()])?;
    let st = tape.transpose(sf)?;
    let v = tape.matmul(weights, st)?;
    let vt = tape.transpose(v)?;
    let v = tape.reshape(vt, &[c, h, w])?;
    let fused = tape.mul(q, v)?;
    Ok(Propagated {
        fused,
        masked_similarity: masked,
    })
}

/// `h'_q = h_q ⊙ g` where `g` is the mean of the foreground support nodes.
pub fn propagate_global(tape: &mut Tape, q: Var, s: Var, mask: &SupportMaskGrid) -> Result<Var> {
    mask.require_foreground()?;
    let (c, _, _) = node_dims(tape, q, "propagate_global")?;
    let m = mask
        .tensor()
        .clone()
        .reshape(&[1, mask.height(), mask.width()])?;
    let count = mask.foreground_count() as f64;
    let m = tape.constant(m);
    let fg = tape.mul(s, m)?;
    let fg = tape.reshape(fg, &[c, mask.height() * mask.width()])?;
    let g = tape.sum_axis(fg, 1)?;
    let g = tape.scale(g, 1.0 / count);
    let g = tape.reshape(g, &[c, 1, 1])?;
    tape.mul(q, g)
}
