//! Image values, PNG I/O, quality metrics and the pixel coordinate grid.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// An H×W×C intensity grid stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Returns a copy with every intensity clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Multiplies every intensity by `k`.
    pub fn scaled(&self, k: f64) -> Image {
        Image {
            data: self.data.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// Swaps rows and columns.
    pub fn transposed(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.width {
            for r in 0..self.height {
                for ch in 0..self.channels {
                    data.push(self.get(r, c, ch));
                }
            }
        }
        Image {
            height: self.width,
            width: self.height,
            channels: self.channels,
            data,
        }
    }

    /// Extracts one channel as a gray image.
    pub fn channel(&self, channel: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self
                .data
                .iter()
                .skip(channel)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Cuts a centered `height`×`width` window.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || height > self.height || width > self.width {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {height}x{width} from {}x{}",
                self.height, self.width
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        Image::from_fn(height, width, self.channels, |r, c, ch| {
            self.get(top + r, left + c, ch)
        })
    }
}

/// Reads a gray or RGB PNG (8 or 16 bit) into `[0, 1]` intensities.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = ImageReader::with_format(BufReader::new(file), ImageFormat::Png)
        .decode()
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Format(format!("{}: {other}", path.display())),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect()),
        DynamicImage::ImageLuma16(buf) => (1, buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        DynamicImage::ImageRgb16(buf) => (3, buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgba16(_) => {
            return Err(Error::Format(format!(
                "{}: alpha channels are not supported",
                path.display()
            )))
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, channels, data)
}

/// Quantizes an intensity to a byte: clamp to `[0, 1]`, then `round(v * 255)`.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit gray or RGB PNG.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format(other.to_string()),
    })
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )))
    }
}

/// Mean squared error over all H·W·C samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(mse_slices(&a.data, &b.data))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Converts an MSE to PSNR in decibels with peak 1. Zero error yields `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR of `test` against `reference` with peak value 1.
pub fn psnr(test: &Image, reference: &Image) -> Result<f64> {
    mse(test, reference).map(psnr_from_mse)
}

/// Normalized pixel-center coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `(x, y)` pairs; pixel `(r, c)` sits at index `r * width + c`.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

fn axis(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    }
}

/// Builds the `[0, 1]²` pixel grid for an image of the given size.
///
/// # Panics
/// If either dimension is zero.
pub fn make_grid(height: usize, width: usize) -> CoordGrid {
    assert!(height >= 1 && width >= 1, "grid dimensions must be positive");
    let xs = axis(width);
    let ys = axis(height);
    let coords = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect();
    CoordGrid {
        height,
        width,
        coords,
    }
}
