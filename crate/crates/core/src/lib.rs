//! Physics-prior CNN denoisers built on a small deterministic autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: rank-4 tensors and a reverse-mode tape with the handful of ops
//!   the models need (conv, activations, broadcast multiply, pooling, concat, mse).
//! - [`layers`]: squeeze-and-excitation gates, residual resampling blocks and the
//!   constant sigma channel.
//! - [`models`]: the model zoo (DnCNN/UNet/FFDNet baselines, Simple-PU-CNN,
//!   PU-Net-G, PU-Net++ and the WIPUNet ablation family).
//! - [`data`]: CIFAR-10 binary loading, image folders, AWGN corruption, patches
//!   and the portable RNG.
//! - [`metrics`]: PSNR, SSIM and dataset evaluation.
//! - [`training`]: losses, AdamW, gradient clipping, checkpoints and the train loop.
//! - [`tiling`]: overlapping-tile inference with Hann blending.
//!
//! Data-parallel loops (per-image convolution, per-image metrics, tiles) go
//! through [`par`], which uses rayon behind the `parallel` feature and always
//! reduces in index order so results are bitwise independent of thread count.

pub mod data;
pub mod engine;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod par;
pub mod tiling;
pub mod training;

pub use error::{Error, Result};
