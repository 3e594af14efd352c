//! Synthetic contamination: additive Gaussian and Poisson-Gaussian noise.
//!
//! Noise parameters are expressed on the 0–255 scale. Each image draws its
//! parameters once from its `NoiseSpec` (fixed value or uniform range), then samples
//! pixels in row-major, channel-interleaved order from a seeded ChaCha stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    PoissonGaussian,
}

/// A noise parameter: either fixed or drawn uniformly from `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fixed(f64),
    Range(f64, f64),
}

impl Level {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Level::Fixed(v) => v >= 0.0 && v.is_finite(),
            Level::Range(lo, hi) => lo >= 0.0 && lo <= hi && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid {name} level {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Level::Fixed(v) => v,
            Level::Range(lo, hi) if lo == hi => lo,
            Level::Range(lo, hi) => rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian standard deviation on the 0–255 scale.
    pub sigma255: Level,
    /// Poisson scale on the 0–255 scale; required for Poisson-Gaussian noise.
    pub alpha: Option<Level>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma255: Level, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma255,
            alpha: None,
            seed,
        }
    }

    pub fn poisson_gaussian(sigma255: Level, alpha: Level, seed: u64) -> Self {
        Self {
            kind: NoiseKind::PoissonGaussian,
            sigma255,
            alpha: Some(alpha),
            seed,
        }
    }
}

/// Noisy samples before clamping, with the parameters actually drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Contaminated {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Intensities on the `[0, 1]` scale, not clamped.
    pub raw: Vec<f64>,
    pub sigma255: f64,
    pub alpha: Option<f64>,
}

impl Contaminated {
    pub fn clamped(&self) -> Image {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.raw.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("shape copied from a valid image")
    }
}

/// Adds the noise described by `spec` without clamping.
pub fn contaminate(img: &Image, spec: &NoiseSpec) -> Result<Contaminated> {
    spec.sigma255.validate("sigma")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma255 = spec.sigma255.draw(&mut rng);
    let (raw, alpha) = match spec.kind {
        NoiseKind::Gaussian => {
            let sigma = sigma255 / 255.0;
            let raw = img
                .data()
                .iter()
                .map(|&s| {
                    let z: f64 = rng.sample(StandardNormal);
                    s + sigma * z
                })
                .collect();
            (raw, None)
        }
        NoiseKind::PoissonGaussian => {
            let level = spec.alpha.ok_or_else(|| {
                Error::InvalidArgument("poisson-gaussian noise requires alpha".into())
            })?;
            level.validate("alpha")?;
            let alpha = level.draw(&mut rng);
            if !(alpha > 0.0) {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
            }
            if let Some(v) = img.data().iter().find(|&&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "poisson noise needs non-negative intensities, found {v}"
                )));
            }
            let raw = img
                .data()
                .iter()
                .map(|&s| {
                    let s255 = s * 255.0;
                    let shot = if s255 > 0.0 {
                        alpha * poisson(&mut rng, s255 / alpha) as f64
                    } else {
                        0.0
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    (shot + sigma255 * z) / 255.0
                })
                .collect();
            (raw, Some(alpha))
        }
    };
    Ok(Contaminated {
        height: img.height(),
        width: img.width(),
        channels: img.channels(),
        raw,
        sigma255,
        alpha,
    })
}

/// Gaussian contamination, clamped to `[0, 1]`. Returns the drawn σ (0–255 scale).
pub fn add_gaussian(img: &Image, spec: &NoiseSpec) -> Result<(Image, f64)> {
    if spec.kind != NoiseKind::Gaussian {
        return Err(Error::InvalidArgument("expected a gaussian noise spec".into()));
    }
    let c = contaminate(img, spec)?;
    Ok((c.clamped(), c.sigma255))
}

/// Poisson-Gaussian contamination, clamped to `[0, 1]`. Returns the drawn σ and α.
pub fn add_poisson_gaussian(img: &Image, spec: &NoiseSpec) -> Result<(Image, f64, f64)> {
    if spec.kind != NoiseKind::PoissonGaussian {
        return Err(Error::InvalidArgument("expected a poisson-gaussian noise spec".into()));
    }
    let c = contaminate(img, spec)?;
    let alpha = c.alpha.expect("poisson-gaussian draw records alpha");
    Ok((c.clamped(), c.sigma255, alpha))
}

/// Draws a Poisson variate: sequential inversion below rate 30, Hörmann's
/// transformed rejection (PTRS) above.
pub fn poisson(rng: &mut impl Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < 30.0 {
        poisson_inversion(rng, rate)
    } else {
        poisson_ptrs(rng, rate)
    }
}

fn poisson_inversion(rng: &mut impl Rng, rate: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    // the tail beyond 1000 has probability far below f64 resolution for rate < 30
    while u > cdf && k < 1000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

fn poisson_ptrs(rng: &mut impl Rng, rate: f64) -> u64 {
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// `ln(k!)`: exact table for small `k`, Stirling series beyond.
fn ln_factorial(k: u64) -> f64 {
    if k < 16 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}
