//! Compact Gaussian-splatting SLAM: a CPU reference implementation of
//! differentiable splatting with learnable primitive masks, residual vector
//! quantization of geometry, and a tracking + global bundle adjustment
//! pipeline.
//!
//! Start with the runnable examples: `render_scene`, `mask_lifecycle`,
//! `rvq_geometry`, `kl_similarity`, `track_synthetic`, `slam_synthetic`,
//! `compress_checkpoint`, and `tum_sequence`.

pub mod ba;
pub mod checkpoint;
pub mod cli;
pub mod codebook;
pub mod dataset;
pub mod error;
pub mod features;
pub mod image;
pub mod masking;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scene;
pub mod ssim;
pub mod synthetic;
pub mod tracking;

pub use error::{Error, Result};
