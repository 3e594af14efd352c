//! Deterministic test images.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Smooth diagonal ramp plus an oblique sinusoid, gray.
pub fn textured(height: usize, width: usize) -> Image {
    Image::from_fn(height, width, 1, |r, c, _| {
        let y = r as f64 / height as f64;
        let x = c as f64 / width as f64;
        0.2 + 0.35 * (x + y) / 2.0 + 0.15 * (2.0 * PI * (5.0 * x + 3.0 * y)).sin()
    })
    .expect("positive dimensions")
}

/// I.i.d. uniform `[0, 1]` pixels.
pub fn white_noise(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(height, width, channels, |_, _, _| rng.random::<f64>())
        .expect("positive dimensions")
}
