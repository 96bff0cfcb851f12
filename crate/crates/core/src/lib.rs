//! Core of a one-stage, anchor-free temporal action detector that fuses audio and
//! visual feature pyramids with cross-attention and ranks proposals with a
//! centricity score.
//!
//! Everything in this crate is pure computation over in-memory values and builds
//! without `std` (only `alloc` is required). File formats, the command line and
//! experiment orchestration live in the `avtad` companion crate.
//!
//! Module map:
//!
//! - [`numerics`]: f64 tensors, a recorded tape for reverse-mode gradients, and a
//!   central-difference gradient checker.
//! - [`encoder`]: input projection and N-level self-attention feature pyramids.
//! - [`fusion`]: cross-attention and the other audio-visual fusion strategies.
//! - [`heads`]: classification, regression, centricity and boundary-confidence heads.
//! - [`labels`] and [`losses`]: target assignment and the loss terms of the total loss.
//! - [`postprocess`]: proposal decoding, confidence scoring and Soft-NMS.
//! - [`eval`]: tIoU, average precision, mAP tables and the centre-distance diagnostics.
//! - [`synth`]: the synthetic dense-action video generator.
//! - [`model`], [`config`], [`train`] and [`pipeline`]: the assembled detector, its run
//!   configuration, the training loop and the end-to-end steps.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod config;
pub mod encoder;
mod error;
pub mod eval;
pub mod fusion;
pub mod heads;
pub mod labels;
pub mod losses;
pub(crate) mod math;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod postprocess;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, Tensor, Var};
