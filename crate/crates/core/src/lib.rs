#![allow(clippy::result_large_err)]

//! Detection-architecture workbench: build YOLOv5-family layer graphs from a
//! restricted text model definition, run CPU forward passes, count parameters
//! and MACs analytically, and evaluate the IoU/CIoU/WIoU box-regression loss
//! family plus standard detection metrics.
//!
//! The crate is organized around the data that flows through it:
//!
//! * [`tensor`] is a dense NCHW array with the handful of kernels the block
//!   zoo needs (grouped convolution, pooling, upsample, concat/slice, add)
//!   and a bit-exact binary file format.
//! * [`blocks`] defines every supported block as a deterministic expansion
//!   into primitive steps; the expansion is the single source of truth for
//!   execution, parameter counts, and MAC counts.
//! * [`graph`] parses model-definition text, applies depth/width scaling,
//!   resolves layer references into a DAG, and executes whole-model forwards.
//! * [`cost`] aggregates per-layer parameter/MAC counts into reports and
//!   diffs two reports against tolerance bands.
//! * [`loss`] implements IoU, CIoU, and WIoU v1/v2/v3 with closed-form
//!   gradients, a finite-difference gradient checker, and a toy box trainer.
//! * [`metrics`] decodes raw detection maps, runs class-aware NMS, and
//!   computes precision/recall/mAP over a plain-text dataset format.

pub mod blocks;
pub mod cost;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;

/// Default scalar for tensor execution and file I/O.
pub type Elem = f32;
/// Default scalar for loss evaluation and gradient checking.
pub type LossElem = f64;

/// Feature-map tensor as produced by forward passes.
pub type Tensor = tensor::Tensor<Elem>;
/// Box type used by the loss and metrics layers.
pub type BBox = loss::BBox<LossElem>;
