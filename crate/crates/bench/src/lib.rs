//! Inputs shared by the benchmarks under `benches/`.

use inr_denoise::denoise::{RunConfig, Width};
use inr_denoise::noise::{contaminate, Level, NoiseSpec};
use inr_denoise::synthetic::textured;
use inr_denoise::Image;

/// The textured test image with σ = 25 (0-255 scale) Gaussian noise.
pub fn noisy_texture(size: usize) -> Image {
    contaminate(&textured(size, size), &NoiseSpec::gaussian(Level::Fixed(25.0), 0))
        .expect("valid spec")
        .clamped()
}

/// Short fixed-length training run that never meets its criterion.
pub fn short_run(width: usize, iters: usize) -> RunConfig {
    RunConfig {
        width: Width::Fixed(width),
        max_iters: iters,
        sigma_override: Some(0.0),
        ..RunConfig::default()
    }
}
