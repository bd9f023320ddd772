//! Parameterised layers shared by the backbone and the decoder.

use alloc::format;
use rand::Rng;

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::Result;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Square-kernel convolution with a per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero bias. Registers
    /// `{name}.weight` and `{name}.bias`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = libm::sqrt(6.0 / fan_in);
        let w = Tensor::uniform(
            &[out_channels, in_channels, kernel, kernel],
            -bound,
            bound,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels, 1, 1]));
        Self {
            weight,
            bias,
            spec,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, params.var(self.weight), self.spec)?;
        tape.add(y, params.var(self.bias))
    }

    pub fn forward_relu(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        Ok(tape.relu(y))
    }
}

/// Added to the per-channel standard deviation in [`instance_norm`].
pub const NORM_EPS: f64 = 1e-5;

/// Normalises each channel of `x: [C, H, W]` to zero spatial mean and unit
/// spatial standard deviation.
pub fn instance_norm(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(crate::error::Error::ShapeMismatch {
            op: "instance_norm",
            lhs: s,
            rhs: alloc::vec![0, 0, 0],
        });
    }
    let hw = s[1] * s[2];
    let flat = tape.reshape(x, &[s[0], hw])?;
    let total = tape.sum_axis(flat, 1)?;
    let mean = tape.scale(total, 1.0 / hw as f64);
    let centred = tape.sub(flat, mean)?;
    let norm = tape.l2_norm(centred, 1)?;
    let std = tape.scale(norm, 1.0 / libm::sqrt(hw as f64));
    let std = tape.add_scalar(std, NORM_EPS);
    let y = tape.div(centred, std)?;
    tape.reshape(y, &s)
}

impl Conv {
    /// Convolution, [`instance_norm`], then ReLU.
    pub fn forward_norm_relu(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let y = self.forward(tape, params, x)?;
        let y = instance_norm(tape, y)?;
        Ok(tape.relu(y))
    }
}
