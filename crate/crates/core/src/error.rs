use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the tensor engine, the model modules and the episode harness.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("log of non-positive value {0}")]
    LogDomain(f64),

    #[error("conv2d: kernel {kernel}x{kernel} larger than padded input {height}x{width}")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("no gradient for tracked parameter `{0}`")]
    MissingGrad(String),

    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(&'static str),

    #[error("support mask has no foreground node")]
    EmptyForeground,

    #[error("mask downsampling from {from:?} to {to:?} would upsample")]
    Upsample { from: [usize; 2], to: [usize; 2] },

    #[error("target is not binary (found {0})")]
    NonBinary(f64),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fold index {0} out of range 0..4")]
    FoldIndex(usize),

    #[error("class count {0} is not divisible by 4")]
    ClassCount(usize),

    #[error("class {0} out of range")]
    ClassOutOfRange(usize),

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("class {0} has no evaluated episodes")]
    NoEpisodes(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
