//! Batched SGD training step and episodic evaluation.

use crate::autodiff::Tape;
use crate::data::{Episode, EpisodeSampler, SampleSource};
use crate::error::{Error, Result};
use crate::metrics::{IouAccumulator, IouMode, IouReport};
use crate::model::{MmNet, ReconTarget};
use crate::optim::{SgdConfig, SgdState};

/// Batch-averaged loss terms of one optimizer step. `recon` is 0 when no
/// reconstruction term is active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub iteration: u32,
    pub seg: f64,
    pub recon: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MmNet,
    pub optimizer: SgdState,
    /// Number of completed steps.
    pub iteration: u32,
}

impl Trainer {
    pub fn new(model: MmNet, sgd: SgdConfig) -> Result<Self> {
        let optimizer = SgdState::new(sgd, &model.params)?;
        Ok(Self {
            model,
            optimizer,
            iteration: 0,
        })
    }

    /// One SGD step on the mean loss of `episodes`.
    pub fn step(&mut self, episodes: &[Episode]) -> Result<StepMetrics> {
        if episodes.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let iteration = self.iteration + 1;
        let scale = 1.0 / episodes.len() as f64;
        let (mut seg, mut recon, mut total) = (0.0, 0.0, 0.0);
        self.model.params.zero_grads();
        for ep in episodes {
            let mut tape = Tape::new();
            let params = self.model.params.bind(&mut tape);
            let out = self.model.forward(&mut tape, &params, ep)?;
            let terms = self
                .model
                .losses(&mut tape, &params, &out, &ep.query.mask)?;
            let t = tape.value(terms.total).item();
            if !t.is_finite() {
                self.model.params.zero_grads();
                return Err(Error::NonFiniteLoss { iteration });
            }
            seg += scale * tape.value(terms.seg).item();
            recon += scale * terms.recon.map_or(0.0, |r| tape.value(r).item());
            total += scale * t;
            let grads = tape.backward(terms.total)?;
            self.model.params.accumulate_grads(&grads, &params, scale);
        }
        self.optimizer.step(&mut self.model.params)?;
        self.iteration = iteration;
        Ok(StepMetrics {
            iteration,
            seg,
            recon,
            total,
        })
    }
}

/// Foreground IoU over `count` episodes drawn from `sampler` (indices `0..count`).
pub fn evaluate<S: SampleSource + ?Sized>(
    model: &MmNet,
    sampler: &EpisodeSampler<'_, S>,
    count: u64,
    mode: IouMode,
) -> Result<IouReport> {
    let mut acc = IouAccumulator::new();
    for i in 0..count {
        let ep = sampler.episode(i)?;
        let pred = model.predict(&ep)?;
        acc.add(ep.class_id, &pred, &ep.query.mask)?;
    }
    acc.report(&sampler.classes, mode)
}

/// Mean reconstruction loss on the support images of `count` episodes,
/// regardless of the model's configured loss weights.
pub fn mean_support_recon_loss<S: SampleSource + ?Sized>(
    model: &MmNet,
    sampler: &EpisodeSampler<'_, S>,
    count: u64,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::Empty("episode count"));
    }
    let mut sum = 0.0;
    for i in 0..count {
        let ep = sampler.episode(i)?;
        let mut tape = Tape::new();
        let params = model.params.bind_constants(&mut tape);
        let out = model.forward(&mut tape, &params, &ep)?;
        let r = model
            .recon_loss(&mut tape, &params, &out, ReconTarget::Support)?
            .ok_or_else(|| Error::Config("model has no meta-class memory".into()))?;
        sum += tape.value(r).item();
    }
    Ok(sum / count as f64)
}
