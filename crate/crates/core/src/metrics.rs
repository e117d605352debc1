//! Evaluation metrics.
//!
//! Prompt fidelity (did the edit follow the prompt?): PSNR, SSIM, LPIPS,
//! CLIP-S, CLIP-SD. Image integrity (is the person still recognisable?):
//! CLIP-I, FR. For every metric except LPIPS a *lower* value on a defended
//! edit means a stronger defense.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::BackendBundle;
use crate::error::{invalid, Error, Result};
use crate::image::{cosine_sim, ImageTensor, CHANNELS};
use crate::warp::gaussian_kernel;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricGroup {
    PromptFidelity,
    ImageIntegrity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    LowerBetterForDefense,
    HigherBetterForDefense,
}

impl MetricDirection {
    pub fn arrow(self) -> &'static str {
        match self {
            MetricDirection::LowerBetterForDefense => "↓",
            MetricDirection::HigherBetterForDefense => "↑",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ClipS,
    Psnr,
    Ssim,
    Lpips,
    ClipSd,
    ClipI,
    Fr,
}

impl Metric {
    /// Report column order.
    pub const ALL: [Metric; 7] = [
        Metric::ClipS,
        Metric::Psnr,
        Metric::Ssim,
        Metric::Lpips,
        Metric::ClipSd,
        Metric::ClipI,
        Metric::Fr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ClipS => "clip_s",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Lpips => "lpips",
            Metric::ClipSd => "clip_sd",
            Metric::ClipI => "clip_i",
            Metric::Fr => "fr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::ClipS => "CLIP-S",
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
            Metric::Lpips => "LPIPS",
            Metric::ClipSd => "CLIP-SD",
            Metric::ClipI => "CLIP-I",
            Metric::Fr => "FR",
        }
    }

    pub fn group(self) -> MetricGroup {
        match self {
            Metric::ClipI | Metric::Fr => MetricGroup::ImageIntegrity,
            _ => MetricGroup::PromptFidelity,
        }
    }

    pub fn direction(self) -> MetricDirection {
        match self {
            Metric::Lpips => MetricDirection::HigherBetterForDefense,
            _ => MetricDirection::LowerBetterForDefense,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub group: MetricGroup,
    pub direction: MetricDirection,
}

impl MetricValue {
    pub fn new(metric: Metric, value: f64) -> Self {
        Self {
            name: metric.name().to_string(),
            value,
            group: metric.group(),
            direction: metric.direction(),
        }
    }
}

/// A score with a flag marking a degenerate-input fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: f64,
    pub fallback: bool,
}

/// `10·log10(1 / MSE)` on the `[0, 1]` scale, capped at [`PSNR_CAP`]
/// (`fallback` marks the cap).
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<Flagged> {
    a.ensure_same_shape(b)?;
    let mse = a.mse(b);
    if mse == 0.0 {
        return Ok(Flagged {
            value: PSNR_CAP,
            fallback: true,
        });
    }
    Ok(Flagged {
        value: (10.0 * (1.0 / mse).log10()).min(PSNR_CAP),
        fallback: false,
    })
}

/// Separable filter over the valid region of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with an 11-tap Gaussian window (σ = 1.5), computed over
/// the positions where the window fits and averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (ca, cb) = (a.to_chw(), b.to_chw());
    let plane = h * w;
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let pa = &ca[c * plane..(c + 1) * plane];
        let pb = &cb[c * plane..(c + 1) * plane];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(x, y)| f(*x, *y)).collect() };
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
        let bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
        let ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / CHANNELS as f64)
}

/// Learned perceptual distance on `bundle.feat`: per layer, unit-normalise
/// each spatial feature vector, take the squared difference summed over
/// channels, average spatially, and weight by the layer weight.
pub fn lpips(bundle: &BackendBundle, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let fa = bundle.feature_maps(a);
    let fb = bundle.feature_maps(b);
    let mut total = 0.0;
    for (wl, ((va, shape), (vb, _))) in bundle.feat.layer_weights().iter().zip(fa.iter().zip(&fb)) {
        let plane = shape.h * shape.w;
        let norm = |v: &[f64], i: usize| {
            (0..shape.c).map(|c| v[c * plane + i].powi(2)).sum::<f64>().sqrt() + 1e-10
        };
        let mut layer = 0.0;
        for i in 0..plane {
            let (na, nb) = (norm(va, i), norm(vb, i));
            layer += (0..shape.c)
                .map(|c| (va[c * plane + i] / na - vb[c * plane + i] / nb).powi(2))
                .sum::<f64>();
        }
        total += wl * layer / plane as f64;
    }
    Ok(total)
}

/// Directional CLIP similarity `cos(E(edited) − E(src), E(prompt))`. A zero
/// image shift scores 0 with `fallback` set.
pub fn clip_s(bundle: &BackendBundle, src: &ImageTensor, edited: &ImageTensor, prompt: &str) -> Result<Flagged> {
    if prompt.trim().is_empty() {
        return Err(invalid("prompt must be non-empty"));
    }
    src.ensure_same_shape(edited)?;
    let shift: Vec<f64> = bundle
        .clip_image(edited)
        .iter()
        .zip(bundle.clip_image(src))
        .map(|(e, s)| e - s)
        .collect();
    match cosine_sim(&shift, &bundle.clip_text(prompt)) {
        Ok(value) => Ok(Flagged { value, fallback: false }),
        Err(Error::ZeroNorm) => Ok(Flagged {
            value: 0.0,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

/// `cos(E(edited), E(description))` against a description of the intended
/// edit result.
pub fn clip_sd(bundle: &BackendBundle, edited: &ImageTensor, description: &str) -> Result<f64> {
    clip_sd_embedding(bundle, edited, &bundle.clip_text(description))
}

pub fn clip_sd_embedding(bundle: &BackendBundle, edited: &ImageTensor, description: &[f64]) -> Result<f64> {
    cosine_sim(&bundle.clip_image(edited), description)
}

/// `cos(E(edited), E(src))`.
pub fn clip_i(bundle: &BackendBundle, src: &ImageTensor, edited: &ImageTensor) -> Result<f64> {
    src.ensure_same_shape(edited)?;
    cosine_sim(&bundle.clip_image(edited), &bundle.clip_image(src))
}

/// Face-recognition similarity between the edited and source images.
pub fn fr_score(bundle: &BackendBundle, src: &ImageTensor, edited: &ImageTensor) -> Result<f64> {
    src.ensure_same_shape(edited)?;
    Ok(bundle.face_similarity(edited, src))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Aggregate {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::make_toy_bundle;
    use crate::synthetic::{noise, portrait};

    #[test]
    fn psnr_closed_forms() {
        let zeros = ImageTensor::constant(4, 4, 0.0).unwrap();
        let ones = ImageTensor::constant(4, 4, 1.0).unwrap();
        assert_eq!(psnr(&zeros, &ones).unwrap().value, 0.0);
        let cap = psnr(&zeros, &zeros).unwrap();
        assert_eq!(cap.value, PSNR_CAP);
        assert!(cap.fallback);
        let tenth = ImageTensor::constant(4, 4, 0.1).unwrap();
        assert!((psnr(&zeros, &tenth).unwrap().value - 20.0).abs() < 1e-9);
    }

    #[test]
    fn direction_and_group_table() {
        use MetricDirection::*;
        use MetricGroup::*;
        let table = [
            (Metric::ClipS, PromptFidelity, LowerBetterForDefense),
            (Metric::Psnr, PromptFidelity, LowerBetterForDefense),
            (Metric::Ssim, PromptFidelity, LowerBetterForDefense),
            (Metric::Lpips, PromptFidelity, HigherBetterForDefense),
            (Metric::ClipSd, PromptFidelity, LowerBetterForDefense),
            (Metric::ClipI, ImageIntegrity, LowerBetterForDefense),
            (Metric::Fr, ImageIntegrity, LowerBetterForDefense),
        ];
        for (m, g, d) in table {
            assert_eq!((m.group(), m.direction()), (g, d), "{m}");
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn self_comparison_identities() {
        let b = make_toy_bundle(0, 32).unwrap();
        for s in 0..3 {
            let x = noise(32, 32, s);
            assert_eq!(psnr(&x, &x).unwrap().value, PSNR_CAP);
            assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(lpips(&b, &x, &x).unwrap(), 0.0);
            assert!((clip_i(&b, &x, &x).unwrap() - 1.0).abs() < 1e-12);
            assert!((fr_score(&b, &x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_of_inverse_is_below_one() {
        let x = portrait(32, 32, 0);
        let inv = ImageTensor::new(32, 32, x.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = noise(8, 8, 0);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn lpips_symmetric() {
        let b = make_toy_bundle(0, 32).unwrap();
        let (x, y) = (portrait(32, 32, 0), noise(32, 32, 1));
        let d = lpips(&b, &x, &y).unwrap();
        assert!(d > 0.0);
        assert!((d - lpips(&b, &y, &x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn clip_s_zero_shift_falls_back() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        let s = clip_s(&b, &x, &x, "Let it be snowy").unwrap();
        assert_eq!(s, Flagged { value: 0.0, fallback: true });
        assert!(clip_s(&b, &x, &x, "  ").is_err());
        let e = clip_s(&b, &x, &noise(32, 32, 2), "Let it be snowy").unwrap();
        assert!(!e.fallback && (-1.0..=1.0).contains(&e.value));
    }

    #[test]
    fn clip_sd_self_embedding_is_one() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 3);
        let own = b.clip_image(&x);
        assert!((clip_sd_embedding(&b, &x, &own).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fr_symmetric() {
        let b = make_toy_bundle(0, 32).unwrap();
        let (x, y) = (portrait(32, 32, 0), portrait(32, 32, 9));
        let f = fr_score(&b, &x, &y).unwrap();
        assert!((f - fr_score(&b, &y, &x).unwrap()).abs() < 1e-5);
        assert!((-1.0..=1.0).contains(&f));
    }

    #[test]
    fn aggregate_population_std() {
        let a = aggregate(&[3.0]).unwrap();
        assert_eq!((a.mean, a.std), (3.0, 0.0));
        let a = aggregate(&[1.5, 2.5]).unwrap();
        assert_eq!((a.mean, a.std), (2.0, 0.5));
        assert!(aggregate(&[]).is_none());
    }
}
