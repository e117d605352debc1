//! Procedural portrait-like test images.
//!
//! Used by tests, the CLI's `--synthetic` dataset and the browser demo. Each
//! seed yields a centred face (skin ellipse, hair, eyes, mouth) over a
//! gradient background with mild texture.

use rand::Rng;

use crate::image::ImageTensor;
use crate::rng::RngState;

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

pub fn portrait(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = RngState::new(seed, "synthetic/portrait").rng();
    let bg_top = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let bg_bottom = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let tone = rng.random_range(0.35..0.95);
    let skin = [tone, tone * rng.random_range(0.7..0.85), tone * rng.random_range(0.55..0.7)];
    let hair_level = rng.random_range(0.05..0.5);
    let hair = [hair_level, hair_level * 0.8, hair_level * 0.6];
    let eye = [0.08, 0.06, rng.random_range(0.05..0.3)];
    let lips = [rng.random_range(0.5..0.8), 0.25, 0.3];
    let cx = 0.5 + rng.random_range(-0.03..0.03);
    let cy = 0.52 + rng.random_range(-0.03..0.03);
    let rx = rng.random_range(0.18..0.24);
    let ry = rng.random_range(0.24..0.3);
    let eye_dx = rng.random_range(0.07..0.1);
    let texture_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let soft = 1.5 / height.min(width) as f64;
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let v = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = bg_top[c] * (1.0 - v) + bg_bottom[c] * v;
            }
            // hair: a larger ellipse behind and above the face
            let hd = ((u - cx) / (rx * 1.2)).powi(2) + ((v - cy + 0.06) / (ry * 1.1)).powi(2);
            blend(&mut px, hair, 1.0 - smoothstep(1.0 - soft * 6.0, 1.0, hd));
            let fd = ((u - cx) / rx).powi(2) + ((v - cy + 0.02) / ry).powi(2);
            let face_alpha = 1.0 - smoothstep(1.0 - soft * 6.0, 1.0, fd);
            let shade = 1.0 - 0.15 * ((u - cx) / rx).powi(2);
            blend(&mut px, skin.map(|s| s * shade), face_alpha);
            for side in [-1.0, 1.0] {
                let ed = ((u - cx - side * eye_dx) / 0.035).powi(2) + ((v - cy + 0.05) / 0.02).powi(2);
                blend(&mut px, eye, (1.0 - smoothstep(0.6, 1.0, ed)) * face_alpha);
            }
            let md = ((u - cx) / 0.07).powi(2) + ((v - cy - 0.12) / 0.018).powi(2);
            blend(&mut px, lips, (1.0 - smoothstep(0.6, 1.0, md)) * face_alpha);
            let tex = 0.02 * (17.0 * u + 11.0 * v + texture_phase).sin() * (23.0 * v - 7.0 * u).cos();
            data.extend(px.iter().map(|p| (p + tex).clamp(0.0, 1.0)));
        }
    }
    ImageTensor::new(height, width, data).expect("generated pixels are clamped")
}

/// Uniform random image, for property tests.
pub fn noise(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = RngState::new(seed, "synthetic/noise").rng();
    let data = (0..height * width * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    ImageTensor::new(height, width, data).expect("uniform draws lie in [0, 1]")
}
