//! Sparse-LiDAR-depth-guided image outpainting.
//!
//! A sparse depth map (≈7 % valid pixels) and an RGB image whose centre
//! square is known are encoded by two branches: partial convolutions for the
//! depth, gated convolutions for the image. Depth features then generate
//! per-pixel dynamic kernels that filter the RGB features at every decoder
//! scale. Training combines a conditional hinge adversarial loss, a masked
//! L1 pixel loss, a Canny/Berhu edge loss and a cross-modal attention loss.
//!
//! Everything is written against [`Real`], so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

pub mod datamodel;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod harness;
pub mod ingestion;
pub mod losses;
pub mod model;
pub mod nn;
pub mod real;

pub use datamodel::{downsample_mask, validate_pair, FeatureMap, LossWeights, Mask, MaskedRGB, SparseDepthMap};
pub use error::{Error, Result};
pub use exec::Exec;
pub use real::Real;
