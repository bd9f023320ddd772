//! Learnable meta-class embeddings, their activation maps and the
//! feature reconstruction loss.

use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Parameter name of the embedding matrix.
pub const MEMORY_PARAM: &str = "memory.embeddings";

/// Embedding init range in units of `1/sqrt(D)`.
pub const INIT_SCALE: f64 = 4.0;

/// Handle to the `[N, D]` embedding matrix in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub struct MetaClassMemory {
    pub id: ParamId,
    pub n: usize,
    pub d: usize,
}

impl MetaClassMemory {
    /// Registers `M` with entries drawn from `U[-s/sqrt(D), s/sqrt(D)]`, `s = INIT_SCALE`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidShape {
                shape: alloc::vec![n, d],
                len: 0,
            });
        }
        let bound = INIT_SCALE / libm::sqrt(d as f64);
        let id = store.add(MEMORY_PARAM, Tensor::uniform(&[n, d], -bound, bound, rng));
        Ok(Self { id, n, d })
    }

    pub fn var(&self, params: &Bindings) -> Var {
        params.var(self.id)
    }
}

fn feature_dims(tape: &Tape, f: Var, d: usize, op: &'static str) -> Result<(usize, usize)> {
    let s = tape.shape(f);
    if s.len() != 3 || s[0] != d {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: alloc::vec![d],
        });
    }
    Ok((s[1], s[2]))
}

fn memory_dims(tape: &Tape, m: Var, op: &'static str) -> Result<(usize, usize)> {
    let s = tape.shape(m);
    if s.len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: Vec::new(),
        });
    }
    Ok((s[0], s[1]))
}

/// `act[n, y, x] = sigmoid(<F[:, y, x], M[n, :]>)` for `f: [D, H, W]`, `m: [N, D]`.
pub fn compute_activation(tape: &mut Tape, f: Var, m: Var) -> Result<Var> {
    let (n, d) = memory_dims(tape, m, "compute_activation")?;
    let (h, w) = feature_dims(tape, f, d, "compute_activation")?;
    let flat = tape.reshape(f, &[d, h * w])?;
    let logits = tape.matmul(m, flat)?;
    let act = tape.sigmoid(logits);
    tape.reshape(act, &[n, h, w])
}

/// Reconstruction loss of `f` from the memory.
///
/// Channel-softmax of `act` gives mixing weights, `F̂ = Mᵀ·Âct` rebuilds each
/// node, and the loss is the mean negative log row-softmax of `F̂ᵀF` taken on
/// the diagonal.
pub fn memory_recon_loss(tape: &mut Tape, f: Var, act: Var, m: Var) -> Result<Var> {
    let (n, d) = memory_dims(tape, m, "memory_recon_loss")?;
    let (h, w) = feature_dims(tape, f, d, "memory_recon_loss")?;
    let s = tape.shape(act);
    if s != [n, h, w] {
        return Err(Error::ShapeMismatch {
            op: "memory_recon_loss",
            lhs: s.to_vec(),
            rhs: alloc::vec![n, h, w],
        });
    }
    let hw = h * w;
    let weights = tape.softmax(act, 0)?;
    let weights = tape.reshape(weights, &[n, hw])?;
    let mt = tape.transpose(m)?;
    let recon = tape.matmul(mt, weights)?;
    let recon_t = tape.transpose(recon)?;
    let flat = tape.reshape(f, &[d, hw])?;
    let corr = tape.matmul(recon_t, flat)?;
    let log_p = tape.log_softmax(corr, 1)?;
    let diag: Vec<usize> = (0..hw).collect();
    let picked = tape.take_along_axis(log_p, 1, &diag)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// Passes features straight through in place of activation maps.
pub fn bypass_features(f: Var) -> Var {
    f
}
