//! Few-shot episodes and their deterministic sampling.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::propagation::downsample_mask;
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// One image (`[3, H, W]`, values in `[0, 1]`) and its binary mask (`[H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<Sample>,
    pub query: Sample,
    pub class_id: usize,
}

impl Episode {
    pub fn shots(&self) -> usize {
        self.support.len()
    }
}

/// Indexed access to labelled samples grouped by 1-based class id.
pub trait SampleSource {
    fn class_count(&self) -> usize;
    fn samples_in_class(&self, class_id: usize) -> usize;
    fn sample(&self, class_id: usize, index: usize) -> Result<Sample>;
}

/// Attempts per episode slot before giving up.
pub const MAX_SLOT_TRIES: usize = 64;

fn usable(sample: &Sample, feature_stride: usize) -> Result<bool> {
    let s = sample.mask.shape();
    if s.len() != 2 || s[0] % feature_stride != 0 || s[1] % feature_stride != 0 {
        return Err(Error::Sampling(format!(
            "mask shape {s:?} is not divisible by the feature stride {feature_stride}"
        )));
    }
    let grid = downsample_mask(&sample.mask, s[0] / feature_stride, s[1] / feature_stride)?;
    Ok(grid.foreground_count() > 0)
}

/// Draws a class uniformly from `classes`, then `shots + 1` distinct samples
/// of it whose masks keep foreground at `1 / feature_stride` resolution.
/// The last draw is the query.
pub fn sample_episode<S, R>(
    source: &S,
    classes: &[usize],
    shots: usize,
    feature_stride: usize,
    rng: &mut R,
) -> Result<Episode>
where
    S: SampleSource + ?Sized,
    R: Rng + ?Sized,
{
    if shots == 0 {
        return Err(Error::Sampling("shot count must be at least 1".into()));
    }
    if classes.is_empty() {
        return Err(Error::Sampling("empty class set".into()));
    }
    if feature_stride == 0 {
        return Err(Error::Sampling("feature stride must be positive".into()));
    }
    let class_id = classes[rng.gen_range(0..classes.len())];
    let available = source.samples_in_class(class_id);
    if available < shots + 1 {
        return Err(Error::Sampling(format!(
            "class {class_id} has {available} samples, episode needs {}",
            shots + 1
        )));
    }
    let mut taken: Vec<usize> = Vec::with_capacity(shots + 1);
    let mut picked = Vec::with_capacity(shots + 1);
    while picked.len() < shots + 1 {
        let mut slot = None;
        for _ in 0..MAX_SLOT_TRIES {
            let idx = rng.gen_range(0..available);
            if taken.contains(&idx) {
                continue;
            }
            taken.push(idx);
            let sample = source.sample(class_id, idx)?;
            if usable(&sample, feature_stride)? {
                slot = Some(sample);
                break;
            }
        }
        picked.push(slot.ok_or_else(|| {
            Error::Sampling(format!(
                "class {class_id}: no usable sample after {MAX_SLOT_TRIES} draws"
            ))
        })?);
    }
    let query = picked.pop().expect("shots + 1 samples were drawn");
    Ok(Episode {
        support: picked,
        query,
        class_id,
    })
}

/// Episode `i` is drawn from its own random stream derived from `(seed, purpose, i)`.
pub struct EpisodeSampler<'a, S: ?Sized> {
    pub source: &'a S,
    pub classes: Vec<usize>,
    pub shots: usize,
    pub feature_stride: usize,
    pub seed: u64,
    pub purpose: Purpose,
}

impl<'a, S: SampleSource + ?Sized> EpisodeSampler<'a, S> {
    pub fn episode(&self, index: u64) -> Result<Episode> {
        let mut rng = stream(self.seed, self.purpose, index);
        sample_episode(
            self.source,
            &self.classes,
            self.shots,
            self.feature_stride,
            &mut rng,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{SyntheticSource, SyntheticSpec};

    #[test]
    fn one_shot_has_single_support() {
        let src = SyntheticSource::new(SyntheticSpec::default()).unwrap();
        let mut rng = stream(1, Purpose::Test, 0);
        let ep = sample_episode(&src, &[4, 5, 6], 1, 4, &mut rng).unwrap();
        assert_eq!(ep.shots(), 1);
        assert!([4, 5, 6].contains(&ep.class_id));
    }

    #[test]
    fn rejects_zero_shots() {
        let src = SyntheticSource::new(SyntheticSpec::default()).unwrap();
        let mut rng = stream(1, Purpose::Test, 0);
        assert!(sample_episode(&src, &[1], 0, 4, &mut rng).is_err());
    }
}
