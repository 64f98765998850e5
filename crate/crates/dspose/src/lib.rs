//! Dual-source human pose estimation.
//!
//! The pipeline estimates 2D human poses by classifying and regressing body
//! joints on pairs of image patches: a small *part patch* carrying local
//! appearance and a *body patch* carrying the holistic view plus a binary
//! mask of the part's location. A two-tower convolutional network produces
//! joint-detection likelihoods and joint-localization offsets per patch
//! pair; at test time the per-patch results are accumulated into per-joint
//! heatmaps and fused into a final pose.
//!
//! Modules:
//! - [`geometry`]: patch boxes, joint normalization, visibility, cropping.
//! - [`imageio`]: pixel buffers, bilinear resampling, PNG/PGM encoding.
//! - [`sampling`]: patch proposals, area filters, multi-scale sliding windows.
//! - [`labeling`]: per-patch class labels and regression targets.
//! - [`net`]: the dual-tower network (forward, analytic backward, init, IO).
//! - [`training`]: multi-task loss and the SGD loop.
//! - [`inference`]: heatmap accumulation, patch selection, pose fusion.
//! - [`eval`]: PCP, PDJ curves, joint-detection AP.
//! - [`synth`]: deterministic articulated stick-figure generator.
//! - [`dataset`]: manifest schema and dataset IO.
//! - [`pipeline`]: end-to-end orchestration used by the CLI and tests.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod imageio;
pub mod inference;
pub mod labeling;
pub mod net;
pub mod pipeline;
pub mod plot;
pub mod sampling;
pub mod synth;
pub mod training;
