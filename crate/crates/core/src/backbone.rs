//! Small trainable convolutional feature extractor.
//!
//! Layout: stem conv (stride 2) → level-1 block (stride 2) → level-2 →
//! level-3 → level-4, where levels 2–4 keep their input resolution so all
//! three share `H / stride × W / stride`. The mid-level map `F` is the
//! channel concatenation of levels 2 and 3 followed by one 3×3 convolution,
//! instance normalisation and a ReLU.

use alloc::format;
use rand::Rng;

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Bindings, ParamStore};

/// Name prefix of every backbone parameter (the fusion conv is not part of it).
pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Total spatial downsampling: 1, 2 or 4.
    pub stride: usize,
    pub stem_channels: usize,
    pub level1_channels: usize,
    pub level2_channels: usize,
    pub level3_channels: usize,
    pub level4_channels: usize,
    /// Channel count `D` of the fused mid-level map.
    pub fused_dim: usize,
    /// Excludes backbone parameters from training.
    pub frozen: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            stem_channels: 16,
            level1_channels: 32,
            level2_channels: 32,
            level3_channels: 64,
            level4_channels: 64,
            fused_dim: 64,
            frozen: false,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.stride) {
            return Err(Error::Config(format!(
                "backbone stride must be 1, 2 or 4, got {}",
                self.stride
            )));
        }
        let widths = [
            self.stem_channels,
            self.level1_channels,
            self.level2_channels,
            self.level3_channels,
            self.level4_channels,
            self.fused_dim,
        ];
        if widths.contains(&0) {
            return Err(Error::Config(
                "backbone channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Level 2, 3 and 4 feature maps of one image, all at feature resolution.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub level2: Var,
    pub level3: Var,
    pub level4: Var,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: Conv,
    level1: Conv,
    level2: Conv,
    level3: Conv,
    level4: Conv,
    fuse: Conv,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        config: BackboneConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let down = |s: usize| Conv2dSpec {
            stride: s,
            padding: 1,
        };
        let stem_stride = c.stride.min(2);
        let level1_stride = c.stride / stem_stride;
        let same = Conv2dSpec::same(3);
        let stem = Conv::new(
            store,
            "backbone.stem",
            3,
            c.stem_channels,
            3,
            down(stem_stride),
            rng,
        );
        let level1 = Conv::new(
            store,
            "backbone.level1",
            c.stem_channels,
            c.level1_channels,
            3,
            down(level1_stride),
            rng,
        );
        let level2 = Conv::new(
            store,
            "backbone.level2",
            c.level1_channels,
            c.level2_channels,
            3,
            same,
            rng,
        );
        let level3 = Conv::new(
            store,
            "backbone.level3",
            c.level2_channels,
            c.level3_channels,
            3,
            same,
            rng,
        );
        let level4 = Conv::new(
            store,
            "backbone.level4",
            c.level3_channels,
            c.level4_channels,
            3,
            same,
            rng,
        );
        let fuse = Conv::new(
            store,
            "fuse",
            c.level2_channels + c.level3_channels,
            c.fused_dim,
            3,
            same,
            rng,
        );
        if config.frozen {
            store.set_trainable(BACKBONE_PREFIX, false);
        }
        Ok(Self {
            config,
            stem,
            level1,
            level2,
            level3,
            level4,
            fuse,
        })
    }

    /// Runs the stand-in backbone on `image: [3, H, W]`.
    pub fn extract_features(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        image: Var,
    ) -> Result<FeaturePyramid> {
        let shape = tape.shape(image);
        let stride = self.config.stride;
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::ShapeMismatch {
                op: "extract_features",
                lhs: shape.to_vec(),
                rhs: alloc::vec![3],
            });
        }
        if shape[1] % stride != 0 || shape[2] % stride != 0 {
            return Err(Error::Config(format!(
                "image extent {}x{} not divisible by stride {stride}",
                shape[1], shape[2]
            )));
        }
        let x = self.stem.forward_relu(tape, params, image)?;
        let x = self.level1.forward_relu(tape, params, x)?;
        let level2 = self.level2.forward_relu(tape, params, x)?;
        let level3 = self.level3.forward_relu(tape, params, level2)?;
        let level4 = self.level4.forward_relu(tape, params, level3)?;
        Ok(FeaturePyramid {
            level2,
            level3,
            level4,
        })
    }

    /// `F = relu(conv3x3(concat(level2, level3)))`, shape `[D, H_f, W_f]`.
    pub fn fuse_mid_levels(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        pyramid: &FeaturePyramid,
    ) -> Result<Var> {
        let (s2, s3) = (tape.shape(pyramid.level2), tape.shape(pyramid.level3));
        if s2.len() != 3 || s3.len() != 3 || s2[1..] != s3[1..] {
            return Err(Error::ShapeMismatch {
                op: "fuse_mid_levels",
                lhs: s2.to_vec(),
                rhs: s3.to_vec(),
            });
        }
        let cat = tape.concat(&[pyramid.level2, pyramid.level3], 0)?;
        self.fuse.forward_norm_relu(tape, params, cat)
    }

    /// Input channel count of the fusion convolution.
    pub fn fuse_in_channels(&self) -> usize {
        self.fuse.in_channels
    }
}
