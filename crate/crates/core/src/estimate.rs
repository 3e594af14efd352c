//! Blind noise-level estimation from the eigenvalue spectrum of image patches.
//!
//! Natural images are locally redundant: their 7×7 patches occupy a low
//! dimensional subspace, so most eigenvalues of the patch covariance carry
//! only noise. The noise variance is the mean of that noise-only tail. The
//! tail is found by iterating `τ ← mean{λ ≤ τ·(1 + √(p/n))²}` from the mean of
//! the whole spectrum; `(1 + √(p/n))²` is the upper edge of the spectrum of a
//! pure-noise sample covariance with `p` dimensions and `n` samples.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel;

pub const PATCH_SIZE: usize = 7;
const MAX_PATCHES: usize = 50_000;
const SPARSE_STRIDE: usize = 3;
const MAX_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// Noise standard deviation in `[0, 1]` intensity units.
    pub sigma: f64,
    pub patch_size: usize,
    pub iterations_used: usize,
}

impl NoiseEstimate {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            sigma,
            patch_size: PATCH_SIZE,
            iterations_used: 0,
        }
    }

    pub fn sigma255(&self) -> f64 {
        self.sigma * 255.0
    }
}

/// Estimates the noise standard deviation of `img`; channels are estimated
/// separately and combined by root mean square.
pub fn estimate_sigma(img: &Image) -> Result<NoiseEstimate> {
    if img.height() < PATCH_SIZE || img.width() < PATCH_SIZE {
        return Err(Error::ImageTooSmall {
            height: img.height(),
            width: img.width(),
            min: PATCH_SIZE,
        });
    }
    let mut variance_sum = 0.0;
    let mut iterations_used = 0;
    for ch in 0..img.channels() {
        let (variance, iterations) = channel_variance(&img.channel(ch));
        variance_sum += variance;
        iterations_used = iterations_used.max(iterations);
    }
    let sigma = (variance_sum / img.channels() as f64).sqrt();
    if !sigma.is_finite() {
        return Err(Error::NonFiniteOutput(format!("noise estimate is {sigma}")));
    }
    Ok(NoiseEstimate {
        sigma,
        patch_size: PATCH_SIZE,
        iterations_used,
    })
}

/// The mean-squared-error level at which training stops: `σ̂²`.
pub fn criterion_threshold(est: &NoiseEstimate) -> f64 {
    est.sigma * est.sigma
}

fn channel_variance(gray: &Image) -> (f64, usize) {
    let eigenvalues = patch_spectrum(gray);
    let p = (PATCH_SIZE * PATCH_SIZE) as f64;
    let n = patch_count(gray.height(), gray.width()).0 as f64;
    let edge = (1.0 + (p / n).sqrt()).powi(2);
    tail_mean(&eigenvalues, edge)
}

/// Iterates to the self-consistent noise tail. Returns the variance and the
/// number of iterations taken.
fn tail_mean(eigenvalues: &[f64], edge: f64) -> (f64, usize) {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut tau = mean(eigenvalues);
    let mut retained: Vec<f64> = eigenvalues.to_vec();
    for iteration in 1..=MAX_ITERATIONS {
        let next: Vec<f64> = eigenvalues
            .iter()
            .copied()
            .filter(|&l| l <= tau * edge)
            .collect();
        if next.is_empty() {
            // only possible through rounding at τ = 0; keep the smallest eigenvalue
            let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            return (min, iteration);
        }
        let stable = next.len() == retained.len();
        retained = next;
        tau = mean(&retained);
        if stable {
            return (tau, iteration);
        }
    }
    (tau, MAX_ITERATIONS)
}

/// `(patch count, stride)` for an image of the given size.
fn patch_count(height: usize, width: usize) -> (usize, usize) {
    let dense = (height - PATCH_SIZE + 1) * (width - PATCH_SIZE + 1);
    if dense <= MAX_PATCHES {
        (dense, 1)
    } else {
        let per_axis = |len: usize| (len - PATCH_SIZE) / SPARSE_STRIDE + 1;
        (per_axis(height) * per_axis(width), SPARSE_STRIDE)
    }
}

/// Eigenvalues (ascending, non-negative) of the covariance of all patches.
fn patch_spectrum(gray: &Image) -> Vec<f64> {
    let (h, w) = (gray.height(), gray.width());
    let (n, stride) = patch_count(h, w);
    let p = PATCH_SIZE * PATCH_SIZE;
    let mut patches = Vec::with_capacity(n * p);
    for top in (0..=h - PATCH_SIZE).step_by(stride) {
        for left in (0..=w - PATCH_SIZE).step_by(stride) {
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    patches.push(gray.get(top + r, left + c, 0));
                }
            }
        }
    }
    debug_assert_eq!(patches.len(), n * p);

    let mut mean = vec![0.0; p];
    for patch in patches.chunks_exact(p) {
        for (m, v) in mean.iter_mut().zip(patch) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for patch in patches.chunks_exact_mut(p) {
        for (v, m) in patch.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut scatter = vec![0.0; p * p];
    kernel::accumulate_weight_grad(&patches, &patches, n, p, &mut scatter);
    let denom = (n.max(2) - 1) as f64;
    let cov = DMatrix::from_fn(p, p, |i, j| 0.5 * (scatter[i * p + j] + scatter[j * p + i]) / denom);
    let mut eigenvalues: Vec<f64> = cov
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    eigenvalues.sort_by(f64::total_cmp);
    eigenvalues
}
