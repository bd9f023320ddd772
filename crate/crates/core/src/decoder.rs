//! Two-scale segmentation head with intermediate predictions.
//!
//! The input is `concat(fused, confidence)`. A full-resolution branch and a
//! half-resolution branch each run two 3×3 conv layers and a 1×1 classifier;
//! their features are merged by a 1×1 conv and a final 3×3 conv produces the
//! two-class logits. Every hidden conv is followed by per-channel instance
//! normalisation and ReLU. All logits are resized to the target
//! resolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Bindings, ParamStore};

/// Number of output classes (background, foreground).
pub const CLASSES: usize = 2;

#[derive(Clone, Debug)]
struct Branch {
    conv1: Conv,
    conv2: Conv,
    classifier: Conv,
}

impl Branch {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let same = Conv2dSpec::same(3);
        let point = Conv2dSpec::same(1);
        Self {
            conv1: Conv::new(store, &format!("{name}.conv1"), c_in, width, 3, same, rng),
            conv2: Conv::new(store, &format!("{name}.conv2"), width, width, 3, same, rng),
            classifier: Conv::new(
                store,
                &format!("{name}.classifier"),
                width,
                CLASSES,
                1,
                point,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<(Var, Var)> {
        let h = self.conv1.forward_norm_relu(tape, params, x)?;
        let h = self.conv2.forward_norm_relu(tape, params, h)?;
        let logits = self.classifier.forward(tape, params, h)?;
        Ok((h, logits))
    }
}

/// Final logits plus one intermediate prediction per scale, all `[2, H, W]`.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub final_logits: Var,
    pub intermediate_logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub in_channels: usize,
    pub width: usize,
    full: Branch,
    half: Branch,
    merge: Conv,
    head: Conv,
}

impl Decoder {
    /// `channels` is the node dimension of the fused map (the confidence map
    /// adds one more input channel).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        channels: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || width == 0 {
            return Err(Error::Config(
                "decoder channel counts must be positive".into(),
            ));
        }
        let c_in = channels + 1;
        let full = Branch::new(store, "decoder.full", c_in, width, rng);
        let half = Branch::new(store, "decoder.half", c_in, width, rng);
        let merge = Conv::new(
            store,
            "decoder.merge",
            2 * width,
            width,
            1,
            Conv2dSpec::same(1),
            rng,
        );
        let head = Conv::new(
            store,
            "decoder.head",
            width,
            CLASSES,
            3,
            Conv2dSpec::same(3),
            rng,
        );
        Ok(Self {
            in_channels: c_in,
            width,
            full,
            half,
            merge,
            head,
        })
    }

    /// Decodes `fused: [C, H, W]` and `confidence: [H, W]` into logits at
    /// `out_h × out_w`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        fused: Var,
        confidence: Var,
        out_h: usize,
        out_w: usize,
    ) -> Result<DecoderOutput> {
        let fs = tape.shape(fused).to_vec();
        let cs = tape.shape(confidence).to_vec();
        if fs.len() != 3 || fs[0] + 1 != self.in_channels || cs != fs[1..] {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: fs,
                rhs: cs,
            });
        }
        let (h, w) = (fs[1], fs[2]);
        let conf = tape.reshape(confidence, &[1, h, w])?;
        let x = tape.concat(&[fused, conf], 0)?;

        let (feat_full, logits_full) = self.full.forward(tape, params, x)?;
        let (hh, hw) = ((h / 2).max(1), (w / 2).max(1));
        let x_half = tape.resize_bilinear(x, hh, hw)?;
        let (feat_half, logits_half) = self.half.forward(tape, params, x_half)?;
        let feat_half = tape.resize_bilinear(feat_half, h, w)?;

        let merged = tape.concat(&[feat_full, feat_half], 0)?;
        let merged = self.merge.forward_norm_relu(tape, params, merged)?;
        let final_logits = self.head.forward(tape, params, merged)?;

        let mut intermediate_logits = vec![];
        for l in [logits_full, logits_half] {
            intermediate_logits.push(tape.resize_bilinear(l, out_h, out_w)?);
        }
        Ok(DecoderOutput {
            final_logits: tape.resize_bilinear(final_logits, out_h, out_w)?,
            intermediate_logits,
        })
    }

    /// Name of the first-layer kernel of the given scale branch (`"full"` or `"half"`).
    pub fn first_kernel_name(branch: &str) -> alloc::string::String {
        format!("decoder.{branch}.conv1.weight")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::tensor::Tensor;

    #[test]
    fn output_matches_requested_extent() {
        let mut store = ParamStore::new();
        let mut rng = stream(3, Purpose::Test, 0);
        let dec = Decoder::new(&mut store, 5, 8, &mut rng).unwrap();
        let mut t = Tape::new();
        let p = store.bind(&mut t);
        let fused = t.constant(Tensor::uniform(&[5, 4, 4], 0.0, 1.0, &mut rng));
        let conf = t.constant(Tensor::uniform(&[4, 4], 0.0, 1.0, &mut rng));
        let out = dec.decode(&mut t, &p, fused, conf, 16, 12).unwrap();
        assert_eq!(t.shape(out.final_logits), &[2, 16, 12]);
        assert_eq!(out.intermediate_logits.len(), 2);
        for &l in &out.intermediate_logits {
            assert_eq!(t.shape(l), &[2, 16, 12]);
        }
    }
}
