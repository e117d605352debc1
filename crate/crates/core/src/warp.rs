//! Resampling maps shared by the toy editor and the geometric purifications.
//!
//! Every geometric transform here is linear in the pixels, so it is expressed
//! as a [`SparseMap`] over channel-major buffers. The same map serves the plain
//! image transform and, through the tape, its gradient.

use std::sync::Arc;

use crate::autodiff::{Shape, SparseMap};
use crate::image::{chw_to_hwc, ImageTensor, CHANNELS};

/// Reflects an index into `[0, n)` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Bilinear resampling map: output pixel `(y, x)` samples the input at the
/// continuous position returned by `source(y, x)`, with reflect boundaries.
pub fn resample_map(
    height: usize,
    width: usize,
    source: impl Fn(usize, usize) -> (f64, f64),
) -> SparseMap {
    let shape = Shape::new(CHANNELS, height, width);
    let plane = height * width;
    let mut entries = Vec::with_capacity(plane * 4 * CHANNELS);
    for y in 0..height {
        for x in 0..width {
            let (sy, sx) = source(y, x);
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let taps = [
                (y0 as isize, x0 as isize, (1.0 - fy) * (1.0 - fx)),
                (y0 as isize, x0 as isize + 1, (1.0 - fy) * fx),
                (y0 as isize + 1, x0 as isize, fy * (1.0 - fx)),
                (y0 as isize + 1, x0 as isize + 1, fy * fx),
            ];
            let out = y * width + x;
            for (ty, tx, w) in taps {
                if w == 0.0 {
                    continue;
                }
                let src = reflect(ty, height) * width + reflect(tx, width);
                for c in 0..CHANNELS {
                    entries.push(((c * plane + out) as u32, (c * plane + src) as u32, w));
                }
            }
        }
    }
    SparseMap {
        in_shape: shape,
        out_shape: shape,
        entries,
    }
}

/// Rotation about the image centre by `degrees` (counter-clockwise), same-size
/// canvas, reflect fill.
pub fn rotation_map(height: usize, width: usize, degrees: f64) -> SparseMap {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    resample_map(height, width, |y, x| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        // inverse rotation: where does this output pixel come from
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    })
}

/// Normalised 1-D Gaussian taps of odd length `k`.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Vec<f64> {
    let half = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Depthwise `k x k` Gaussian blur with reflect padding.
pub fn blur_map(height: usize, width: usize, k: usize, sigma: f64) -> SparseMap {
    let taps = gaussian_kernel(k, sigma);
    let half = (k / 2) as isize;
    let shape = Shape::new(CHANNELS, height, width);
    let plane = height * width;
    let mut entries = Vec::with_capacity(plane * k * k * CHANNELS);
    for c in 0..CHANNELS {
        for y in 0..height {
            for x in 0..width {
                let out = (c * plane + y * width + x) as u32;
                for (i, wy) in taps.iter().enumerate() {
                    let sy = reflect(y as isize + i as isize - half, height);
                    for (j, wx) in taps.iter().enumerate() {
                        let sx = reflect(x as isize + j as isize - half, width);
                        entries.push((out, (c * plane + sy * width + sx) as u32, wy * wx));
                    }
                }
            }
        }
    }
    SparseMap {
        in_shape: shape,
        out_shape: shape,
        entries,
    }
}

/// Gathers the rectangle `[y0, y0 + h) x [x0, x0 + w)` from a `3 x H x W` buffer.
pub fn crop_map(height: usize, width: usize, y0: usize, x0: usize, h: usize, w: usize) -> SparseMap {
    let plane = height * width;
    let mut entries = Vec::with_capacity(h * w * CHANNELS);
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                entries.push((
                    (c * h * w + y * w + x) as u32,
                    (c * plane + (y0 + y) * width + x0 + x) as u32,
                    1.0,
                ));
            }
        }
    }
    SparseMap {
        in_shape: Shape::new(CHANNELS, height, width),
        out_shape: Shape::new(CHANNELS, h, w),
        entries,
    }
}

/// Applies a same-shape map to an image and clamps the result.
pub fn apply_to_image(map: &SparseMap, img: &ImageTensor) -> ImageTensor {
    let out = map.apply(&img.to_chw());
    let (h, w) = (img.height(), img.width());
    ImageTensor::clamped(h, w, chw_to_hwc(h, w, &out)).expect("map preserves shape")
}

pub type SharedMap = Arc<SparseMap>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn gaussian_kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(5, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = crate::synthetic::portrait(16, 16, 2);
        let out = apply_to_image(&rotation_map(16, 16, 0.0), &img);
        assert!(out.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn quarter_turn_on_square_image_permutes_pixels() {
        let img = crate::synthetic::noise(6, 6, 1);
        let out = apply_to_image(&rotation_map(6, 6, 90.0), &img);
        let mut a: Vec<f64> = img.data().to_vec();
        let mut b: Vec<f64> = out.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_takes_requested_window() {
        let img = crate::synthetic::noise(8, 8, 3);
        let out = crop_map(8, 8, 2, 3, 4, 4).apply(&img.to_chw());
        assert_eq!(out[0], img.get(2, 3, 0));
        assert_eq!(out[16 + 5], img.get(3, 4, 1));
    }
}
