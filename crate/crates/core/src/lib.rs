//! Zero-shot blind image denoising with a sinusoidal coordinate network.
//!
//! A SIREN is fitted to the pixels of a single noisy image. Clean structure is
//! learned before the noise, so training halts the first time the
//! reconstruction error falls to an estimate of the noise power; weight decay
//! on the two layers closest to the output slows noise fitting further.

pub mod checkpoint;
pub mod denoise;
pub mod error;
pub mod estimate;
pub mod grad;
pub mod image;
mod kernel;
pub mod noise;
pub mod optim;
pub mod siren;
pub mod synthetic;

pub use crate::error::{Error, Result};
pub use crate::estimate::{criterion_threshold, estimate_sigma, NoiseEstimate};
pub use crate::grad::{finite_diff_grad, loss_and_grad, Batch, GradientSet};
pub use crate::image::{load_png, make_grid, mse, psnr, save_png, CoordGrid, Image};
pub use crate::noise::{add_gaussian, add_poisson_gaussian, Level, NoiseKind, NoiseSpec};
pub use crate::optim::AdamState;
pub use crate::siren::{width_for, FeatureMap, Layer, SirenConfig, SirenNetwork};
