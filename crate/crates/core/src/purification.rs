//! Transformations an adversary may apply to strip a protective perturbation
//! before editing.

use std::fmt;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::external::run_png_command;
use crate::image::{clamp_pixels, ImageTensor};
use crate::rng::RngState;
use crate::warp::{apply_to_image, blur_map, rotation_map};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PurifySpec {
    None,
    /// Depthwise Gaussian blur, reflect padding.
    Blur { kernel: usize, sigma: f64 },
    /// Rotation by an angle drawn uniformly from `±max_degrees`; bilinear,
    /// reflect fill, same-size canvas.
    Rotate { max_degrees: f64 },
    Jpeg { quality: u8 },
    /// Brightness, contrast and saturation factors drawn uniformly from
    /// `1 ± range`, applied in that order.
    ColorJitter {
        brightness: f64,
        contrast: f64,
        saturation: f64,
    },
    /// PNG-in/PNG-out command; see [`run_png_command`]. Without a command, or
    /// when it fails, the input passes through unchanged with a warning.
    External { command: Option<String> },
}

impl PurifySpec {
    pub const BLUR: PurifySpec = PurifySpec::Blur { kernel: 5, sigma: 1.5 };
    pub const ROTATE: PurifySpec = PurifySpec::Rotate { max_degrees: 10.0 };
    pub const COLOR_JITTER: PurifySpec = PurifySpec::ColorJitter {
        brightness: 0.2,
        contrast: 0.2,
        saturation: 0.2,
    };

    /// The purification table: none, blur, rotate and JPEG at 60/75/90.
    pub fn standard_set() -> Vec<PurifySpec> {
        vec![
            PurifySpec::None,
            PurifySpec::BLUR,
            PurifySpec::ROTATE,
            PurifySpec::Jpeg { quality: 60 },
            PurifySpec::Jpeg { quality: 75 },
            PurifySpec::Jpeg { quality: 90 },
        ]
    }

    /// Short name used in records and reports (`none`, `blur`, `jpeg75`, ...).
    pub fn name(&self) -> String {
        match self {
            PurifySpec::None => "none".into(),
            PurifySpec::Blur { .. } => "blur".into(),
            PurifySpec::Rotate { .. } => "rotate".into(),
            PurifySpec::Jpeg { quality } => format!("jpeg{quality}"),
            PurifySpec::ColorJitter { .. } => "color_jitter".into(),
            PurifySpec::External { .. } => "external".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PurifySpec::Blur { kernel, sigma } => {
                if kernel % 2 == 0 || sigma.is_nan() || *sigma <= 0.0 {
                    return Err(invalid(format!("blur needs an odd kernel and sigma > 0, got k={kernel} sigma={sigma}")));
                }
            }
            PurifySpec::Rotate { max_degrees } => {
                if !(max_degrees.is_finite() && *max_degrees >= 0.0) {
                    return Err(invalid(format!("rotation range must be >= 0, got {max_degrees}")));
                }
            }
            PurifySpec::Jpeg { quality } => {
                if !(1..=100).contains(quality) {
                    return Err(invalid(format!("jpeg quality must be in 1..=100, got {quality}")));
                }
            }
            PurifySpec::ColorJitter {
                brightness,
                contrast,
                saturation,
            } => {
                for v in [brightness, contrast, saturation] {
                    if !(0.0..1.0).contains(v) {
                        return Err(invalid(format!("jitter range must be in [0, 1), got {v}")));
                    }
                }
            }
            PurifySpec::None | PurifySpec::External { .. } => {}
        }
        Ok(())
    }
}

impl fmt::Display for PurifySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for PurifySpec {
    type Err = Error;

    /// Accepts the short names: `none`, `blur`, `rotate`, `jpeg` (Q75),
    /// `jpegNN`, `color_jitter`, `external`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s {
            "none" => PurifySpec::None,
            "blur" => PurifySpec::BLUR,
            "rotate" => PurifySpec::ROTATE,
            "jpeg" => PurifySpec::Jpeg { quality: 75 },
            "color_jitter" => PurifySpec::COLOR_JITTER,
            "external" => PurifySpec::External { command: None },
            other => match other.strip_prefix("jpeg").and_then(|q| q.parse().ok()) {
                Some(quality) => PurifySpec::Jpeg { quality },
                None => return Err(invalid(format!("unknown purification `{s}`"))),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn jpeg_round_trip(x: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality).encode_image(&x.to_rgb8())?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(ImageTensor::from_rgb8(&decoded))
}

fn luma(px: &[f64]) -> f64 {
    px.iter().zip(LUMA).map(|(v, w)| v * w).sum()
}

fn color_jitter(x: &ImageTensor, ranges: [f64; 3], rng: &RngState) -> ImageTensor {
    let mut r = rng.rng();
    let [b, c, s] = ranges.map(|range| if range > 0.0 { r.random_range(1.0 - range..=1.0 + range) } else { 1.0 });
    let mut data: Vec<f64> = x.data().iter().map(|v| v * b).collect();
    clamp_pixels(&mut data);
    let mean_luma = data.chunks(3).map(luma).sum::<f64>() / (data.len() / 3) as f64;
    for v in data.iter_mut() {
        *v = (*v - mean_luma) * c + mean_luma;
    }
    clamp_pixels(&mut data);
    for px in data.chunks_mut(3) {
        let g = luma(px);
        for v in px.iter_mut() {
            *v = g + (*v - g) * s;
        }
    }
    ImageTensor::clamped(x.height(), x.width(), data).expect("shape preserved")
}

/// Applies `spec` to `x`. Random parameters (rotation angle, jitter factors)
/// come from `rng`.
pub fn purify(x: &ImageTensor, spec: &PurifySpec, rng: &RngState) -> Result<ImageTensor> {
    spec.validate()?;
    let (h, w) = (x.height(), x.width());
    Ok(match spec {
        PurifySpec::None => x.clone(),
        PurifySpec::Blur { kernel, sigma } => apply_to_image(&blur_map(h, w, *kernel, *sigma), x),
        PurifySpec::Rotate { max_degrees } => {
            let angle = if *max_degrees > 0.0 {
                rng.rng().random_range(-max_degrees..=*max_degrees)
            } else {
                0.0
            };
            apply_to_image(&rotation_map(h, w, angle), x)
        }
        PurifySpec::Jpeg { quality } => jpeg_round_trip(x, *quality)?,
        PurifySpec::ColorJitter {
            brightness,
            contrast,
            saturation,
        } => color_jitter(x, [*brightness, *contrast, *saturation], rng),
        PurifySpec::External { command: None } => {
            log::warn!("external purifier not configured; passing the image through");
            x.clone()
        }
        PurifySpec::External { command: Some(cmd) } => match run_png_command(cmd, x, &[]) {
            Ok(out) => out,
            Err(e) => {
                log::warn!("external purifier failed ({e}); passing the image through");
                x.clone()
            }
        },
    })
}
