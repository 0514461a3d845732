//! CoAtNeXt: a hybrid convolution/transformer image classifier.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] — row-major arrays, forward kernels and a reverse-mode tape
//!   with a finite-difference gradient checker.
//! * [`attention`] — CBAM, squeeze-and-excitation and efficient channel
//!   attention.
//! * [`blocks`] — GRN, ConvNeXtV2 / improved ConvNeXtV2, MBConv and
//!   relative-position transformer blocks.
//! * [`model`] — stage plans, network assembly, parameter accounting and
//!   checkpoints.
//! * [`data`] — dataset scanning, synthetic textures, stratified folds and
//!   batch loading.
//! * [`train`] / [`metrics`] — SGD training, cross-validation, grid search and
//!   classification metrics.
//! * [`report`] — run configuration, artifacts and ablation tables.

pub mod attention;
pub mod blocks;
pub mod checks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
#[cfg(test)]
mod oracle;
pub mod param;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tape, Tensor, Var};

/// Version string embedded in checkpoints and reports.
pub const TOOL_VERSION: &str = concat!("coatnext ", env!("CARGO_PKG_VERSION"));
