//! Central-difference checks of every differentiable pipeline stage at toy
//! extents (4×4 feature maps, N = 6, D = 8, K = 3).

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use rand::Rng;

use crate::autodiff::{OpKind, Tape, Var};
use crate::backbone::BackboneConfig;
use crate::confidence::MinMax;
use crate::data::{Episode, Sample};
use crate::decoder::{Decoder, DecoderOutput};
use crate::error::Result;
use crate::gradcheck::{GradCheck, DEFAULT_EPS};
use crate::loss::{seg_cross_entropy, total_loss, LossWeights};
use crate::memory::{compute_activation, memory_recon_loss};
use crate::model::{MmNet, ModelConfig, ReconTarget};
use crate::params::{Bindings, ParamStore};
use crate::propagation::{
    mask_similarities, pairwise_cosine, propagate, propagate_global, SupportMaskGrid,
};
use crate::quality::{fuse_weighted, quality_maps};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Largest accepted relative error.
pub const SUITE_TOLERANCE: f64 = 1e-4;

const H: usize = 4;
const W: usize = 4;
const N: usize = 6;
const D: usize = 8;
const K: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    pub name: &'static str,
    pub max_error: f64,
}

impl StageResult {
    pub fn passed(&self) -> bool {
        self.max_error < SUITE_TOLERANCE
    }
}

/// Runs every stage, optionally with the backward rule of `fault` disabled.
pub fn run_gradcheck_suite(fault: Option<OpKind>) -> Result<Vec<StageResult>> {
    let check = match fault {
        Some(kind) => GradCheck::new(DEFAULT_EPS).with_fault(kind),
        None => GradCheck::new(DEFAULT_EPS),
    };
    let stages: [(&'static str, fn(&GradCheck, u64) -> Result<f64>); 8] = [
        ("meta-class activation", activation_stage),
        ("memory reconstruction", recon_stage),
        ("activation propagation", propagation_stage),
        ("global propagation", global_stage),
        ("quality fusion", quality_stage),
        ("decoder", decoder_stage),
        ("segmentation loss", loss_stage),
        ("full objective", objective_stage),
    ];
    stages
        .iter()
        .enumerate()
        .map(|(i, (name, stage))| {
            Ok(StageResult {
                name,
                max_error: stage(&check, i as u64)?,
            })
        })
        .collect()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

fn random_mask(rng: &mut impl Rng) -> SupportMaskGrid {
    let mut m = Tensor::from_fn(&[H, W], |_| f64::from(u8::from(rng.gen_bool(0.4))));
    m.data_mut()[rng.gen_range(0..H * W)] = 1.0;
    SupportMaskGrid::new(m).expect("binary by construction")
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output entry matters.
fn probe(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    Ok(tape.sum(p))
}

fn probe_decoder(tape: &mut Tape, out: &DecoderOutput, rs: &[Tensor]) -> Result<Var> {
    let mut acc = probe(tape, out.final_logits, &rs[0])?;
    for (&l, r) in out.intermediate_logits.iter().zip(&rs[1..]) {
        let p = probe(tape, l, r)?;
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

fn activation_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let r = uniform(&[N, H, W], -1.0, 1.0, &mut rng);
    let inputs = [
        uniform(&[D, H, W], -1.0, 1.0, &mut rng),
        uniform(&[N, D], -1.0, 1.0, &mut rng),
    ];
    check.run(
        |t, v| {
            let act = compute_activation(t, v[0], v[1])?;
            probe(t, act, &r)
        },
        &inputs,
    )
}

fn recon_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let inputs = [
        uniform(&[D, H, W], -1.0, 1.0, &mut rng),
        uniform(&[N, D], -1.0, 1.0, &mut rng),
    ];
    check.run(
        |t, v| {
            let act = compute_activation(t, v[0], v[1])?;
            memory_recon_loss(t, v[0], act, v[1])
        },
        &inputs,
    )
}

fn propagation_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let mask = random_mask(&mut rng);
    let r = uniform(&[N, H, W], -1.0, 1.0, &mut rng);
    let inputs = [
        uniform(&[N, H, W], 0.05, 1.0, &mut rng),
        uniform(&[N, H, W], 0.05, 1.0, &mut rng),
    ];
    check.run(
        |t, v| {
            let p = propagate(t, v[0], v[1], &mask)?;
            probe(t, p.fused, &r)
        },
        &inputs,
    )
}

fn global_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let mask = random_mask(&mut rng);
    let r = uniform(&[N, H, W], -1.0, 1.0, &mut rng);
    let inputs = [
        uniform(&[N, H, W], 0.05, 1.0, &mut rng),
        uniform(&[N, H, W], 0.05, 1.0, &mut rng),
    ];
    check.run(
        |t, v| {
            let g = propagate_global(t, v[0], v[1], &mask)?;
            probe(t, g, &r)
        },
        &inputs,
    )
}

/// Inputs: the query grid, `K` support grids and `K` fused maps.
fn quality_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let masks: Vec<SupportMaskGrid> = (0..K).map(|_| random_mask(&mut rng)).collect();
    let r = uniform(&[N, H, W], -1.0, 1.0, &mut rng);
    let inputs: Vec<Tensor> = (0..2 * K + 1)
        .map(|_| uniform(&[N, H, W], 0.05, 1.0, &mut rng))
        .collect();
    check.run(
        |t, v| {
            let mut masked = Vec::with_capacity(K);
            for (k, m) in masks.iter().enumerate() {
                let e = pairwise_cosine(t, v[0], v[1 + k])?;
                masked.push(mask_similarities(t, e, m)?);
            }
            let p = quality_maps(t, &masked, H, W)?;
            let fused = fuse_weighted(t, &v[1 + K..], p)?;
            probe(t, fused, &r)
        },
        &inputs,
    )
}

/// Inputs: fused map, confidence map, then every decoder parameter.
fn decoder_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let mut store = ParamStore::new();
    let decoder = Decoder::new(&mut store, N, 4, &mut rng)?;
    let (oh, ow) = (2 * H, 2 * W);
    let rs: Vec<Tensor> = (0..3)
        .map(|_| uniform(&[2, oh, ow], -1.0, 1.0, &mut rng))
        .collect();
    let mut inputs = vec![
        uniform(&[N, H, W], 0.0, 1.0, &mut rng),
        uniform(&[H, W], 0.0, 1.0, &mut rng),
    ];
    for p in store.iter() {
        let mut v = p.value.clone();
        if v.shape()[1..] == [1, 1] && v.rank() == 3 {
            v = uniform(v.shape(), -0.1, 0.1, &mut rng);
        }
        inputs.push(v);
    }
    check.run(
        |t, v| {
            let params = Bindings::from_vars(v[2..].to_vec());
            let out = decoder.decode(t, &params, v[0], v[1], oh, ow)?;
            probe_decoder(t, &out, &rs)
        },
        &inputs,
    )
}

/// Inputs: final logits, two intermediate logits and the reconstruction term.
fn loss_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let mut rng = stream(id, Purpose::Test, 0);
    let target = Tensor::from_fn(&[H, W], |_| f64::from(u8::from(rng.gen_bool(0.5))));
    let mut inputs: Vec<Tensor> = (0..3)
        .map(|_| uniform(&[2, H, W], -2.0, 2.0, &mut rng))
        .collect();
    inputs.push(Tensor::scalar(rng.gen_range(0.5..2.0)));
    let w = LossWeights::default();
    check.run(
        |t, v| {
            let out = DecoderOutput {
                final_logits: v[0],
                intermediate_logits: vec![v[1], v[2]],
            };
            let total = total_loss(t, &out, &target, v[3], &w)?;
            let extra = seg_cross_entropy(t, v[0], &target)?;
            t.add(total, extra)
        },
        &inputs,
    )
}

/// Toy model configuration whose feature maps are 4×4.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            stride: 4,
            stem_channels: 4,
            level1_channels: 4,
            level2_channels: 4,
            level3_channels: 4,
            level4_channels: 4,
            fused_dim: D,
            frozen: false,
        },
        memory_n: N,
        recon: ReconTarget::Both,
        decoder_width: 4,
        ..ModelConfig::default()
    }
}

/// A `K`-shot episode of random 16×16 images with block masks.
pub fn toy_episode(seed: u64) -> Episode {
    let mut rng = stream(seed, Purpose::Test, 1);
    let e = 4 * H;
    let sample = |rng: &mut crate::rng::Stream| {
        let (y0, x0) = (rng.gen_range(0..e / 2), rng.gen_range(0..e / 2));
        let mask = Tensor::from_fn(&[e, e], |k| {
            let (y, x) = (k / e, k % e);
            f64::from(u8::from(
                (y0..y0 + e / 2).contains(&y) && (x0..x0 + e / 2).contains(&x),
            ))
        });
        Sample {
            image: uniform(&[3, e, e], 0.0, 1.0, rng),
            mask,
        }
    };
    let support = (0..K).map(|_| sample(&mut rng)).collect();
    let query = sample(&mut rng);
    Episode {
        support,
        query,
        class_id: 1,
    }
}

/// Total training loss of the toy model with respect to every parameter.
fn objective_stage(check: &GradCheck, id: u64) -> Result<f64> {
    let model = MmNet::new(toy_model_config(), id)?;
    let episode = toy_episode(id);
    let mut rng = stream(id, Purpose::Test, 2);
    let inputs: Vec<Tensor> = model
        .params
        .iter()
        .map(|p| {
            if p.value.rank() == 3 && p.value.shape()[1..] == [1, 1] {
                uniform(p.value.shape(), -0.1, 0.1, &mut rng)
            } else {
                p.value.clone()
            }
        })
        .collect();
    let pinned: RefCell<Option<Vec<MinMax>>> = RefCell::new(None);
    check.run(
        |t, v| {
            let params = Bindings::from_vars(v.to_vec());
            let pin = pinned.borrow().clone();
            let (out, stats) = model.forward_with_stats(t, &params, &episode, pin.as_deref())?;
            if pin.is_none() {
                *pinned.borrow_mut() = Some(stats);
            }
            Ok(model.losses(t, &params, &out, &episode.query.mask)?.total)
        },
        &inputs,
    )
}
