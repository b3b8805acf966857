//! In-memory RGB image representation and PNG/JPEG file I/O.

use std::path::Path;

use image::{ImageError, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// An RGB image with `f32` samples in `[0, 1]`, stored row-major with
/// interleaved channels (`y`, `x`, `c`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl ImageTensor {
    /// Wraps raw interleaved samples, validating dimensions and range.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Param(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary samples, clamping each into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::from_clamped(height, width, vec![value; height * width * CHANNELS])
    }

    /// Evaluates `f(y, x, c)` for every sample; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (clamp_unit(v) * 255.0).round() as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Applies `f` to every sample, clamping the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }

    /// Bilinear resampling with half-pixel centres; output is clamped.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "cannot resize to {height}x{width}"
            )));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let ys = axis_taps(self.height, height);
        let xs = axis_taps(self.width, width);
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..CHANNELS {
                    let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
                    let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
                    data.push(clamp_unit(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
        Self::new(height, width, data)
    }

    /// Largest per-sample absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        ensure_same_dims(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_image(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_image(self, path)
    }
}

pub(crate) fn ensure_same_dims(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Source taps for half-pixel-centred linear interpolation along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Maps a possibly out-of-range index onto `[0, len)` by mirroring about
/// the outer pixel edges (`-1 -> 0`, `-2 -> 1`, `len -> len - 1`).
#[inline]
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Decodes a PNG or JPEG file. Grayscale inputs are replicated to three
/// channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, rgb.as_raw())
}

/// Encodes `img` as an 8-bit PNG. Only `.png` destinations are accepted.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("png"))
        .unwrap_or(false);
    if !is_png {
        return Err(Error::Param(format!(
            "images are written as PNG only: {}",
            path.display()
        )));
    }
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            ImageError::IoError(io) => Error::Io {
                path: path.to_path_buf(),
                source: io,
            },
            other => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(other.to_string()),
            },
        })
}
