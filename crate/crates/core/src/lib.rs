//! Meta-learned frame scoring for video summarization.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`graph`]: dense tensors and a reverse-mode autodiff tape
//!   that can differentiate through its own gradients.
//! - [`learner`]: the bidirectional-LSTM frame scorer and a linear probe.
//! - [`meta`]: two-stage meta-training over pairs of per-video tasks.
//! - [`segmentation`], [`summary`], [`eval`]: kernel temporal segmentation,
//!   budgeted keyshot selection and keyshot-overlap metrics.
//! - [`data`]: the MLVS container, transfer splits, subsampling and a
//!   synthetic task generator.

pub mod data;
pub mod error;
pub mod checkpoint;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod learner;
pub mod meta;
pub mod params;
pub mod pipeline;
pub mod segmentation;
pub mod summary;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
