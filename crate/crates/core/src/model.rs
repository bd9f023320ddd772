//! Full episode pipeline: backbone → memory activations → propagation →
//! k-shot fusion, confidence prior → decoder, plus the training losses.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::backbone::{Backbone, BackboneConfig, FeaturePyramid};
use crate::confidence::{confidence_map_with_stats, fuse_confidence_k, MinMax};
use crate::data::Episode;
use crate::decoder::{Decoder, DecoderOutput};
use crate::error::{Error, Result};
use crate::loss::{combine, segmentation_loss, LossWeights};
use crate::memory::{bypass_features, compute_activation, memory_recon_loss, MetaClassMemory};
use crate::params::{Bindings, ParamStore};
use crate::propagation::{
    downsample_mask, mask_similarities, pairwise_cosine, propagate, propagate_global,
    SupportMaskGrid,
};
use crate::quality::{fuse_average, fuse_weighted, quality_maps};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagationVariant {
    /// Masked cosine attention.
    Apm,
    /// Foreground-averaged support vector.
    Global,
}

/// Which images the reconstruction loss is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconTarget {
    Support,
    Query,
    /// Mean over all support images and the query.
    Both,
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Number of meta-class embeddings `N`.
    pub memory_n: usize,
    /// Feeds raw features to propagation instead of memory activations.
    pub bypass_memory: bool,
    pub propagation: PropagationVariant,
    /// Quality-weighted k-shot fusion; plain averaging when off.
    pub quality_fusion: bool,
    pub recon: ReconTarget,
    pub decoder_width: usize,
    pub loss: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            memory_n: 50,
            bypass_memory: false,
            propagation: PropagationVariant::Apm,
            quality_fusion: true,
            recon: ReconTarget::Support,
            decoder_width: 64,
            loss: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.loss.validate()?;
        if self.memory_n == 0 || self.decoder_width == 0 {
            return Err(Error::Config(
                "memory size and decoder width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Node dimension seen by propagation and the decoder.
    pub fn node_dim(&self) -> usize {
        if self.bypass_memory {
            self.backbone.fused_dim
        } else {
            self.memory_n
        }
    }

    /// Whether a reconstruction term enters the objective.
    pub fn recon_active(&self) -> bool {
        !self.bypass_memory && self.recon != ReconTarget::Off && self.loss.gamma > 0.0
    }
}

/// Per-image intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ImageFeatures {
    pub pyramid: FeaturePyramid,
    /// Fused mid-level map `F: [D, H_f, W_f]`.
    pub features: Var,
    /// Memory activations `[N, H_f, W_f]`, or `features` when bypassed.
    pub nodes: Var,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutputs {
    pub decoder: DecoderOutput,
    pub support: Vec<ImageFeatures>,
    pub query: ImageFeatures,
    pub confidence: Var,
    pub fused: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub seg: Var,
    pub recon: Option<Var>,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct MmNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    backbone: Backbone,
    memory: Option<MetaClassMemory>,
    decoder: Decoder,
}

impl MmNet {
    /// Builds the network with parameters initialised from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(config.backbone.clone(), &mut params, &mut rng)?;
        let memory = if config.bypass_memory {
            None
        } else {
            Some(MetaClassMemory::new(
                &mut params,
                config.memory_n,
                config.backbone.fused_dim,
                &mut rng,
            )?)
        };
        let decoder = Decoder::new(
            &mut params,
            config.node_dim(),
            config.decoder_width,
            &mut rng,
        )?;
        Ok(Self {
            config,
            params,
            backbone,
            memory,
            decoder,
        })
    }

    pub fn memory(&self) -> Option<MetaClassMemory> {
        self.memory
    }

    /// Feature-map extent for an image of the given extent.
    pub fn feature_extent(&self, height: usize, width: usize) -> (usize, usize) {
        let s = self.config.backbone.stride;
        (height / s, width / s)
    }

    pub fn image_features(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        image: &Tensor,
    ) -> Result<ImageFeatures> {
        let img = tape.constant(image.clone());
        let pyramid = self.backbone.extract_features(tape, params, img)?;
        let features = self.backbone.fuse_mid_levels(tape, params, &pyramid)?;
        let nodes = match self.memory {
            Some(m) => compute_activation(tape, features, m.var(params))?,
            None => bypass_features(features),
        };
        Ok(ImageFeatures {
            pyramid,
            features,
            nodes,
        })
    }

    /// Runs the whole pipeline on one episode; logits come out at query-image resolution.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        episode: &Episode,
    ) -> Result<EpisodeOutputs> {
        Ok(self.forward_with_stats(tape, params, episode, None)?.0)
    }

    /// [`MmNet::forward`] with the per-shot confidence normalisation statistics
    /// optionally fixed; returns the statistics used.
    pub fn forward_with_stats(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        episode: &Episode,
        pinned: Option<&[MinMax]>,
    ) -> Result<(EpisodeOutputs, Vec<MinMax>)> {
        if episode.support.is_empty() {
            return Err(Error::Empty("support set"));
        }
        let qshape = episode.query.image.shape();
        if qshape.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: qshape.to_vec(),
                rhs: Vec::new(),
            });
        }
        let (h, w) = (qshape[1], qshape[2]);
        let (hf, wf) = self.feature_extent(h, w);

        let query = self.image_features(tape, params, &episode.query.image)?;
        let mut support = Vec::with_capacity(episode.shots());
        let mut grids = Vec::with_capacity(episode.shots());
        for s in &episode.support {
            if s.image.shape() != qshape {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    lhs: s.image.shape().to_vec(),
                    rhs: qshape.to_vec(),
                });
            }
            support.push(self.image_features(tape, params, &s.image)?);
            grids.push(downsample_mask(&s.mask, hf, wf)?);
        }

        let fused = self.fuse_supports(tape, &query, &support, &grids)?;
        if pinned.is_some_and(|p| p.len() != support.len()) {
            return Err(Error::Config(
                "one pinned statistic per shot is required".into(),
            ));
        }
        let mut conf = Vec::with_capacity(support.len());
        let mut stats = Vec::with_capacity(support.len());
        for (k, (s, g)) in support.iter().zip(&grids).enumerate() {
            let pin = pinned.map(|p| p[k]);
            let (c, st) =
                confidence_map_with_stats(tape, query.pyramid.level4, s.pyramid.level4, g, pin)?;
            conf.push(c);
            stats.push(st);
        }
        let confidence = fuse_confidence_k(tape, &conf)?;
        let decoder = self.decoder.decode(tape, params, fused, confidence, h, w)?;
        let outputs = EpisodeOutputs {
            decoder,
            support,
            query,
            confidence,
            fused,
        };
        Ok((outputs, stats))
    }

    fn fuse_supports(
        &self,
        tape: &mut Tape,
        query: &ImageFeatures,
        support: &[ImageFeatures],
        grids: &[SupportMaskGrid],
    ) -> Result<Var> {
        let mut fused = Vec::with_capacity(support.len());
        let mut masked = Vec::with_capacity(support.len());
        let weighted = support.len() > 1 && self.config.quality_fusion;
        for (s, g) in support.iter().zip(grids) {
            match self.config.propagation {
                PropagationVariant::Apm => {
                    let p = propagate(tape, query.nodes, s.nodes, g)?;
                    fused.push(p.fused);
                    masked.push(p.masked_similarity);
                }
                PropagationVariant::Global => {
                    fused.push(propagate_global(tape, query.nodes, s.nodes, g)?);
                    if weighted {
                        let e = pairwise_cosine(tape, query.nodes, s.nodes)?;
                        masked.push(mask_similarities(tape, e, g)?);
                    }
                }
            }
        }
        if fused.len() == 1 {
            return Ok(fused[0]);
        }
        if weighted {
            let (h, w) = (grids[0].height(), grids[0].width());
            let p_raw = quality_maps(tape, &masked, h, w)?;
            fuse_weighted(tape, &fused, p_raw)
        } else {
            fuse_average(tape, &fused)
        }
    }

    /// Reconstruction loss of the images selected by `target`, averaged.
    pub fn recon_loss(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        outputs: &EpisodeOutputs,
        target: ReconTarget,
    ) -> Result<Option<Var>> {
        let Some(memory) = self.memory else {
            return Ok(None);
        };
        let images: Vec<&ImageFeatures> = match target {
            ReconTarget::Off => return Ok(None),
            ReconTarget::Support => outputs.support.iter().collect(),
            ReconTarget::Query => alloc::vec![&outputs.query],
            ReconTarget::Both => outputs.support.iter().chain([&outputs.query]).collect(),
        };
        let m = memory.var(params);
        let mut acc: Option<Var> = None;
        for img in &images {
            let l = memory_recon_loss(tape, img.features, img.nodes, m)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, l)?,
                None => l,
            });
        }
        let sum = acc.ok_or(Error::Empty("reconstruction images"))?;
        Ok(Some(tape.scale(sum, 1.0 / images.len() as f64)))
    }

    /// Segmentation loss against the query mask plus the configured reconstruction term.
    pub fn losses(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        outputs: &EpisodeOutputs,
        target: &Tensor,
    ) -> Result<LossTerms> {
        let w = &self.config.loss;
        let seg = segmentation_loss(tape, &outputs.decoder, target, w)?;
        let recon = if self.config.recon_active() {
            self.recon_loss(tape, params, outputs, self.config.recon)?
        } else {
            None
        };
        let total = match recon {
            Some(r) => combine(tape, seg, r, w)?,
            None => seg,
        };
        Ok(LossTerms { seg, recon, total })
    }

    /// Binary foreground prediction for the query at image resolution.
    pub fn predict(&self, episode: &Episode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.params.bind_constants(&mut tape);
        let out = self.forward(&mut tape, &params, episode)?;
        Ok(logits_to_mask(tape.value(out.decoder.final_logits)))
    }

    /// Memory activations `[N, H_f, W_f]` of one image.
    pub fn activations(&self, image: &Tensor) -> Result<Tensor> {
        if self.memory.is_none() {
            return Err(Error::Config("model has no meta-class memory".into()));
        }
        let mut tape = Tape::new();
        let params = self.params.bind_constants(&mut tape);
        let f = self.image_features(&mut tape, &params, image)?;
        Ok(tape.value(f.nodes).clone())
    }
}

/// Foreground wherever the foreground logit exceeds the background logit.
pub fn logits_to_mask(logits: &Tensor) -> Tensor {
    let s = logits.shape();
    let plane = s[1] * s[2];
    let d = logits.data();
    let mut mask = Tensor::zeros(&s[1..]);
    for (i, m) in mask.data_mut().iter_mut().enumerate() {
        *m = f64::from(u8::from(d[plane + i] > d[i]));
    }
    mask
}
