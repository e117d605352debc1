use facelock::backends::make_toy_bundle;
use facelock::metrics::*;
use facelock::synthetic::{noise, portrait};
use facelock::ImageTensor;

mod common;
use common::naive_ssim;

fn formula(h: usize, w: usize, f: impl Fn(f64, f64, f64) -> f64) -> ImageTensor {
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push(f(y as f64, x as f64, c as f64));
            }
        }
    }
    ImageTensor::new(h, w, data).unwrap()
}

fn pair(h: usize, w: usize) -> (ImageTensor, ImageTensor) {
    (
        formula(h, w, |y, x, c| 0.5 + 0.4 * (0.3 * y + 0.7 * x + c).sin()),
        formula(h, w, |y, x, c| 0.5 + 0.35 * (0.05 * x * y + 0.5 * c).cos() + 0.1 * (1.3 * x).sin()),
    )
}

#[test]
fn ssim_matches_direct_window_oracle() {
    for s in 0..4 {
        let (a, b) = (noise(32, 32, s), portrait(32, 32, s));
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-10);
    }
    let (a, b) = pair(24, 40);
    assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-10);
}

#[test]
fn ssim_matches_scikit_image_reference() {
    // structural_similarity(gaussian_weights=True, sigma=1.5,
    // use_sample_covariance=False, data_range=1.0, channel_axis=2)
    for ((h, w), want) in [((32, 32), -0.12454654363210199), ((24, 40), -0.1326789394379135)] {
        let (a, b) = pair(h, w);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-4, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn pinned_toy_scores() {
    let bundle = make_toy_bundle(0, 32).unwrap();
    let (x, y) = (portrait(32, 32, 0), portrait(32, 32, 5));
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    close(lpips(&bundle, &x, &y).unwrap(), 1.413296078188873);
    let s = clip_s(&bundle, &x, &y, "Turn the person's hair pink").unwrap();
    assert!(!s.fallback);
    close(s.value, -0.07855114113424388);
    close(clip_sd(&bundle, &y, "A person with pink hair").unwrap(), 0.044569087682028816);
    close(clip_i(&bundle, &x, &y).unwrap(), -0.5070681515017609);
}

/// Fine grain noise keeps identity but hurts SSIM; blending another face into
/// the face box keeps the structure but erodes identity. The two metrics rank them in
/// opposite order.
#[test]
fn ssim_and_fr_can_disagree() {
    let bundle = make_toy_bundle(0, 32).unwrap();
    let x = portrait(32, 32, 0);
    let other = portrait(32, 32, 5);
    let grain = noise(32, 32, 99);
    let grainy = ImageTensor::clamped(
        32,
        32,
        x.data().iter().zip(grain.data()).map(|(v, n)| v + 0.3 * (n - 0.5)).collect(),
    )
    .unwrap();
    let mut blended = x.data().to_vec();
    for yy in 8..24 {
        for xx in 8..24 {
            for c in 0..3 {
                let i = (yy * 32 + xx) * 3 + c;
                blended[i] = 0.5 * blended[i] + 0.5 * other.get(yy, xx, c);
            }
        }
    }
    let blended = ImageTensor::new(32, 32, blended).unwrap();
    let (ssim_grainy, ssim_blend) = (ssim(&x, &grainy).unwrap(), ssim(&x, &blended).unwrap());
    let (fr_grainy, fr_blend) = (fr_score(&bundle, &x, &grainy).unwrap(), fr_score(&bundle, &x, &blended).unwrap());
    assert!(ssim_grainy < ssim_blend);
    assert!(fr_grainy > fr_blend);
}
