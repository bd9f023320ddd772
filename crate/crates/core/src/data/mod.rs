//! Synthetic shape dataset, fold splits and episode sampling.

pub mod episode;
pub mod folds;
pub mod synthetic;

pub use episode::{sample_episode, Episode, EpisodeSampler, Sample, SampleSource};
pub use folds::{split_folds, FoldRule, FoldSpec};
pub use synthetic::{
    generate_synthetic, ShapeGeometry, ShapeKind, SyntheticSample, SyntheticSource, SyntheticSpec,
};
