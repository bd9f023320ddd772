//! Foreground confidence prior from high-level features.

use alloc::vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::propagation::{pairwise_cosine, SupportMaskGrid};

/// Added to `max - min` in the normalisation denominator.
pub const CONFIDENCE_EPS: f64 = 1e-7;

/// Minimum and maximum of a raw confidence map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

/// Max cosine similarity of each query node to the masked support nodes,
/// min-max normalised to `[0, 1]`. Inputs are `[C, H, W]`; the result is `[H, W]`.
///
/// The min and max used for normalisation are treated as constants.
pub fn confidence_map(tape: &mut Tape, fq4: Var, fs4: Var, mask: &SupportMaskGrid) -> Result<Var> {
    Ok(confidence_map_with_stats(tape, fq4, fs4, mask, None)?.0)
}

/// [`confidence_map`] normalised with `stats` when given, otherwise with the
/// statistics of the raw map. Returns the statistics used.
pub fn confidence_map_with_stats(
    tape: &mut Tape,
    fq4: Var,
    fs4: Var,
    mask: &SupportMaskGrid,
    stats: Option<MinMax>,
) -> Result<(Var, MinMax)> {
    if mask.foreground_count() == 0 {
        return Err(Error::EmptyForeground);
    }
    let s = tape.shape(fs4).to_vec();
    if s.len() != 3 || s[1..] != [mask.height(), mask.width()] {
        return Err(Error::ShapeMismatch {
            op: "confidence_map",
            lhs: s,
            rhs: vec![mask.height(), mask.width()],
        });
    }
    let q = tape.shape(fq4).to_vec();
    let m = mask
        .tensor()
        .clone()
        .reshape(&[1, mask.height(), mask.width()])?;
    let m = tape.constant(m);
    let masked = tape.mul(fs4, m)?;
    let e = pairwise_cosine(tape, fq4, masked)?;
    let best = tape.max_axis(e, 1)?;
    let best = tape.reshape(best, &[q[1], q[2]])?;
    let stats = stats.unwrap_or_else(|| min_max(tape.value(best).data()));
    Ok((normalize_with(tape, best, stats), stats))
}

fn min_max(data: &[f64]) -> MinMax {
    MinMax {
        min: data.iter().copied().fold(f64::INFINITY, f64::min),
        max: data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn normalize_with(tape: &mut Tape, c: Var, s: MinMax) -> Var {
    let shifted = tape.add_scalar(c, -s.min);
    tape.scale(shifted, 1.0 / (s.max - s.min + CONFIDENCE_EPS))
}

/// `(c - min) / (max - min + eps)` with detached statistics.
pub fn normalize_min_max(tape: &mut Tape, c: Var) -> Result<Var> {
    let v = tape.value(c);
    if v.is_empty() {
        return Err(Error::Empty("normalize_min_max"));
    }
    let stats = min_max(v.data());
    Ok(normalize_with(tape, c, stats))
}

/// Element-wise mean of per-shot confidence maps.
pub fn fuse_confidence_k(tape: &mut Tape, maps: &[Var]) -> Result<Var> {
    mean_of(tape, maps, "fuse_confidence_k")
}

pub(crate) fn mean_of(tape: &mut Tape, maps: &[Var], op: &'static str) -> Result<Var> {
    let (&first, rest) = maps.split_first().ok_or(Error::Empty(op))?;
    if rest.is_empty() {
        return Ok(first);
    }
    let mut acc = first;
    for &m in rest {
        acc = tape.add(acc, m)?;
    }
    Ok(tape.scale(acc, 1.0 / maps.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_map_normalises_to_zero() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::full(&[2, 3], 0.4));
        let n = normalize_min_max(&mut t, c).unwrap();
        assert!(t.value(n).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_of_opposite_maps() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let m = fuse_confidence_k(&mut t, &[a, b]).unwrap();
        assert_eq!(t.value(m).data(), &[0.5, 0.5]);
        assert!(fuse_confidence_k(&mut t, &[]).is_err());
    }
}
