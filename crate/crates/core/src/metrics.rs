//! Foreground intersection-over-union accumulated per class.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct ClassTotals {
    intersection: f64,
    union: f64,
    episodes: usize,
    episode_iou_sum: f64,
    episode_iou_count: usize,
}

/// How per-class IoU is formed from episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IouMode {
    /// Sum intersections and unions over episodes, then divide.
    #[default]
    Accumulated,
    /// Average of per-episode IoU (episodes with empty union are skipped).
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `(class_id, iou)` for every evaluated class, ascending by id.
    pub per_class: Vec<(usize, f64)>,
    pub mean_iou: f64,
    /// Classes left out of the mean because their union was zero.
    pub excluded: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct IouAccumulator {
    totals: BTreeMap<usize, ClassTotals>,
}

impl IouAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one episode's binary prediction and target.
    pub fn add(&mut self, class_id: usize, prediction: &Tensor, target: &Tensor) -> Result<()> {
        if prediction.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "iou",
                lhs: prediction.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (mut inter, mut union) = (0.0, 0.0);
        for (&p, &t) in prediction.data().iter().zip(target.data()) {
            for v in [p, t] {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinary(v));
                }
            }
            let (p, t) = (p == 1.0, t == 1.0);
            inter += f64::from(u8::from(p && t));
            union += f64::from(u8::from(p || t));
        }
        let e = self.totals.entry(class_id).or_default();
        e.intersection += inter;
        e.union += union;
        e.episodes += 1;
        if union > 0.0 {
            e.episode_iou_sum += inter / union;
            e.episode_iou_count += 1;
        }
        Ok(())
    }

    /// Per-class IoU and their mean over `class_set`.
    pub fn report(&self, class_set: &[usize], mode: IouMode) -> Result<IouReport> {
        let mut ids: Vec<usize> = class_set.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Empty("class set"));
        }
        let mut per_class = Vec::new();
        let mut excluded = Vec::new();
        for id in ids {
            let t = self.totals.get(&id).copied().unwrap_or_default();
            if t.episodes == 0 {
                return Err(Error::NoEpisodes(id));
            }
            let iou = match mode {
                IouMode::Accumulated if t.union > 0.0 => Some(t.intersection / t.union),
                IouMode::PerEpisode if t.episode_iou_count > 0 => {
                    Some(t.episode_iou_sum / t.episode_iou_count as f64)
                }
                _ => None,
            };
            match iou {
                Some(v) => per_class.push((id, v)),
                None => excluded.push(id),
            }
        }
        if per_class.is_empty() {
            return Err(Error::Empty("classes with nonzero union"));
        }
        let mean_iou = per_class.iter().map(|(_, v)| v).sum::<f64>() / per_class.len() as f64;
        Ok(IouReport {
            per_class,
            mean_iou,
            excluded,
        })
    }
}

/// Accumulated-mode mIoU of aligned `(class_id, prediction, target)` triples.
pub fn miou(
    predictions: &[Tensor],
    targets: &[Tensor],
    class_ids: &[usize],
    class_set: &[usize],
) -> Result<IouReport> {
    if predictions.len() != targets.len() || predictions.len() != class_ids.len() {
        return Err(Error::ShapeMismatch {
            op: "miou",
            lhs: alloc::vec![predictions.len(), targets.len()],
            rhs: alloc::vec![class_ids.len()],
        });
    }
    let mut acc = IouAccumulator::new();
    for ((p, t), &c) in predictions.iter().zip(targets).zip(class_ids) {
        acc.add(c, p, t)?;
    }
    acc.report(class_set, IouMode::Accumulated)
}
