//! Multi-scale object detection with deformable parts models, instrumented
//! for cost analysis.
//!
//! The pipeline mirrors a streaming hardware detector: a 12-level feature
//! pyramid of 13-D gradient-histogram cells feeds one or more sliding-window
//! SVM classifiers (a root template plus 8 displaceable part templates per
//! model). Three cost reductions are modeled and measured:
//!
//! - **Candidate pruning** — part classification runs only where the root
//!   score clears a programmable threshold or quantile.
//! - **Vector quantization** — stored features are reduced to 8-bit codebook
//!   indices; part engines score against de-quantized centers.
//! - **Basis projection** — classifier weights are rotated into a basis where
//!   most coefficients are zero, so per-cell dot products skip to the few
//!   surviving terms under a 13-bit flag mask.
//!
//! Every multiplication, stored byte, and written byte is charged to a
//! [`metrics::CostLedger`], and [`oracle`] provides an independently coded
//! dense scoring path so each optimization can be checked for exactness as
//! well as for its claimed savings.
//!
//! Pyramids, codebooks, and compiled models are immutable once built and
//! freely shareable across threads; ledgers are plain accumulators that
//! merge associatively, so per-worker tallies combine deterministically.
//!
//! See the `examples/` directory for runnable walk-throughs of each
//! capability, and the `dpm` binary for the command-line pipeline.

pub mod cli;
pub mod engine;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod vq;

mod bytes;
mod math;

pub use engine::{detect, DetectOutput, Detection, DetectorConfig};
pub use frontend::{pyramid_features, FeaturePyramid, Image, PyramidConfig};
pub use metrics::{CostLedger, CostReport};
pub use model::{CompiledModel, DpmModel};
pub use vq::Codebook;
