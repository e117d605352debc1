//! Pixel-space and perturbation-space primitives.
//!
//! Images are stored row-major as `H x W x 3` reals on the `[0, 1]` scale.
//! Networks consume channel-major (`3 x H x W`) buffers; [`ImageTensor::to_chw`]
//! and [`ImageTensor::from_chw`] convert between the two layouts.

use std::path::Path;

use image::{imageops, ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds an image, rejecting values outside `[0, 1]` (or non-finite).
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary reals by clamping every element into `[0, 1]`.
    /// NaN maps to 0.
    pub fn clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        check_shape(height, width, data.len())?;
        clamp_pixels(&mut data);
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Uniform mid-gray, the default target image for the targeted encoder attack.
    pub fn gray(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.5; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}x3", self.height, self.width),
                actual: format!("{}x{}x3", other.height, other.width),
            })
        }
    }

    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (i, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = px[c];
            }
        }
        out
    }

    /// Inverse of [`to_chw`](Self::to_chw); values are clamped into `[0, 1]`.
    pub fn from_chw(height: usize, width: usize, chw: &[f64]) -> Result<Self> {
        check_shape(height, width, chw.len())?;
        Self::clamped(height, width, chw_to_hwc(height, width, chw))
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, other: &ImageTensor) -> f64 {
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sum / self.data.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    /// Quantizes to 8 bits with round-half-to-even.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// RGBA bytes with opaque alpha, for canvas display.
    pub fn to_rgba8_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 4);
        for px in self.data.chunks_exact(CHANNELS) {
            out.extend(px.iter().map(|&v| to_u8(v)));
            out.push(255);
        }
        out
    }

    pub fn from_rgba8_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 4 {
            return Err(invalid(format!(
                "expected {} RGBA bytes, got {}",
                height * width * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&v| f64::from(v) / 255.0))
            .collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// 8-bit round trip, i.e. what a PNG write followed by a read produces.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(&self.to_rgb8())
    }

    /// Bilinear resize to `height x width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("buffer length matches dimensions");
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        let data = out
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v).clamp(0.0, 1.0))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn check_shape(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(invalid("image dimensions must be positive"));
    }
    if len != height * width * CHANNELS {
        return Err(Error::ShapeMismatch {
            expected: format!("{height}x{width}x3 = {}", height * width * CHANNELS),
            actual: len.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn chw_to_hwc(height: usize, width: usize, chw: &[f64]) -> Vec<f64> {
    let plane = height * width;
    let mut out = vec![0.0; plane * CHANNELS];
    for c in 0..CHANNELS {
        for i in 0..plane {
            out[i * CHANNELS + c] = chw[c * plane + i];
        }
    }
    out
}

/// Additive perturbation with its L∞ budget and the attack that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub height: usize,
    pub width: usize,
    pub delta: Vec<f64>,
    pub epsilon: f64,
    pub method_tag: String,
}

impl Perturbation {
    pub fn zeros(height: usize, width: usize, epsilon: f64, method_tag: impl Into<String>) -> Self {
        Self {
            height,
            width,
            delta: vec![0.0; height * width * CHANNELS],
            epsilon,
            method_tag: method_tag.into(),
        }
    }

    pub fn linf(&self) -> f64 {
        linf_norm(&self.delta)
    }

    pub fn l2(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    }
}

pub fn linf_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Projects `delta` onto the L∞ ball of radius `epsilon`.
pub fn clip_linf(delta: &Perturbation, epsilon: f64) -> Result<Perturbation> {
    check_epsilon(epsilon)?;
    let mut out = delta.clone();
    clip_linf_in_place(&mut out.delta, epsilon);
    out.epsilon = epsilon;
    Ok(out)
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(())
}

pub fn clip_linf_in_place(values: &mut [f64], epsilon: f64) {
    for v in values {
        *v = v.clamp(-epsilon, epsilon);
    }
}

/// Clamps every value into `[0, 1]`; NaN becomes 0. Idempotent.
pub fn clamp_pixels(values: &mut [f64]) {
    for v in values {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped into `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Applies the per-step constraint sequence: clip `delta` to the ε-ball, form
/// `x + delta`, clamp to valid pixels, then redefine `delta` as the realised
/// difference. Returns the protected pixels.
pub fn project(source: &ImageTensor, delta: &mut [f64], epsilon: f64) -> Vec<f64> {
    clip_linf_in_place(delta, epsilon);
    let mut protected: Vec<f64> = source.data.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
    clamp_pixels(&mut protected);
    for ((d, p), x) in delta.iter_mut().zip(protected.iter_mut()).zip(&source.data) {
        *d = *p - x;
        // `x + δ − x` can round past ε; step the pixel back towards `x`.
        while d.abs() > epsilon {
            *p = if *d > 0.0 { p.next_down() } else { p.next_up() };
            *d = *p - x;
        }
    }
    protected
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let img = image::open(path.as_ref())?.to_rgb8();
    Ok(ImageTensor::from_rgb8(&img))
}

pub fn write_png(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    img.to_rgb8()
        .save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
