//! Few-shot semantic segmentation with a learnable meta-class memory.
//!
//! This crate is `no_std` (it needs `alloc`). It contains a small tensor
//! engine with reverse-mode autodiff, the model modules (backbone stand-in,
//! meta-class memory, activation propagation, foreground confidence, k-shot
//! quality fusion, two-scale decoder, losses), a synthetic shape dataset,
//! fold splitting, episode sampling, mIoU and the training step. File formats,
//! configuration text and the CLI live in the `mmnet` crate.
//!
//! The `std` feature (on by default) only enables runtime CPU feature
//! detection in the matrix-multiply backend.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod backbone;
pub mod confidence;
pub mod data;
pub mod decoder;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod propagation;
pub mod quality;
pub mod rng;
pub mod suite;
pub mod tensor;
pub mod train;

pub use autodiff::{Binary, Conv2dSpec, Elementwise, Gradients, OpKind, Tape, Var};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheck};
pub use optim::{SgdConfig, SgdState};
pub use params::{Bindings, Param, ParamId, ParamStore};
pub use tensor::Tensor;
