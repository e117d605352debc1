//! Small fixed-weight stand-ins for the real components.
//!
//! Weights are drawn from seeded streams and partially structured so the
//! networks behave plausibly: the codec roughly reconstructs a blurred copy of
//! its input, the face network looks only at the central face box, and the
//! editor's output depends on both the prompt and the input.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    BackendBundle, BackendKind, EditParams, FaceBox, FaceEmbedder, FeatureExtractor,
    FeatureFamily, InstructionEditor, LatentCodec, TextImageEmbedder,
};
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::image::ImageTensor;
use crate::nn::{Conv2d, Dense};
use crate::rng::{stable_hash, RngState};
use crate::warp::{crop_map, resample_map};

pub const TOY_SIZES: [usize; 3] = [16, 32, 64];

const LATENT_CHANNELS: usize = 4;
const FACE_DIM: usize = 16;
const CLIP_DIM: usize = 32;

/// Maps `[0, 1]` pixels to `[-1, 1]`.
fn centre(tape: &mut Tape, x: Var) -> Var {
    let n = tape.shape(x).numel();
    let s = tape.scale(x, 2.0);
    tape.add_const(s, &vec![-1.0; n])
}

fn add_box_filter(conv: &mut Conv2d, channels: usize, gain: f64) {
    let k = conv.kernel;
    let w = gain / (k * k) as f64;
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                *conv.w_mut(c, c, ky, kx) += w;
            }
        }
    }
}

fn add_centre_tap(conv: &mut Conv2d, channels: usize, gain: f64) {
    let m = conv.kernel / 2;
    for c in 0..channels {
        *conv.w_mut(c, c, m, m) += gain;
    }
}

/// Two strided convolutions down to a `4 x H/4 x W/4` latent and a mirrored
/// upsampling decoder.
pub struct ToyCodec {
    enc1: Arc<Conv2d>,
    enc2: Arc<Conv2d>,
    dec1: Arc<Conv2d>,
    dec2: Arc<Conv2d>,
}

impl ToyCodec {
    pub fn new(rng: &RngState) -> Self {
        let mut r = rng.derive("codec").rng();
        let mut enc1 = Conv2d::random(&mut r, 3, 8, 3, 2, 0.3);
        add_box_filter(&mut enc1, 3, 1.0);
        let mut enc2 = Conv2d::random(&mut r, 8, LATENT_CHANNELS, 3, 2, 0.2);
        add_box_filter(&mut enc2, 3, 1.0);
        let mut dec1 = Conv2d::random(&mut r, LATENT_CHANNELS, 8, 3, 1, 0.2);
        add_centre_tap(&mut dec1, 3, 1.0);
        let mut dec2 = Conv2d::random(&mut r, 8, 3, 3, 1, 0.2);
        // sigmoid'(0) = 1/4 and the input was centred with gain 2
        add_centre_tap(&mut dec2, 3, 2.2);
        Self {
            enc1: Arc::new(enc1),
            enc2: Arc::new(enc2),
            dec1: Arc::new(dec1),
            dec2: Arc::new(dec2),
        }
    }
}

impl LatentCodec for ToyCodec {
    fn encode(&self, tape: &mut Tape, x: Var) -> Var {
        let h = centre(tape, x);
        let h = tape.conv(h, &self.enc1);
        let h = tape.tanh(h);
        tape.conv(h, &self.enc2)
    }

    fn decode(&self, tape: &mut Tape, z: Var) -> Var {
        let h = tape.upsample2(z);
        let h = tape.conv(h, &self.dec1);
        let h = tape.tanh(h);
        let h = tape.upsample2(h);
        let h = tape.conv(h, &self.dec2);
        tape.sigmoid(h)
    }
}

/// The centred box covering half of each dimension.
pub fn centre_box(height: usize, width: usize) -> FaceBox {
    FaceBox {
        top: height / 4,
        left: width / 4,
        height: height / 2,
        width: width / 2,
    }
}

/// Crops the face box, then conv → conv → 2x2 grid pooling → 16-d embedding.
pub struct ToyFace {
    conv1: Arc<Conv2d>,
    conv2: Arc<Conv2d>,
    head: Arc<Dense>,
}

impl ToyFace {
    pub fn new(rng: &RngState) -> Self {
        let mut r = rng.derive("face").rng();
        Self {
            conv1: Arc::new(Conv2d::random(&mut r, 3, 8, 3, 2, 1.5)),
            conv2: Arc::new(Conv2d::random(&mut r, 8, 16, 3, 2, 1.5)),
            head: Arc::new(Dense::random(&mut r, 16 * 4, FACE_DIM)),
        }
    }
}

impl FaceEmbedder for ToyFace {
    fn embed(&self, tape: &mut Tape, x: Var) -> Var {
        let s = tape.shape(x);
        let b = centre_box(s.h, s.w);
        let crop = Arc::new(crop_map(s.h, s.w, b.top, b.left, b.height, b.width));
        let h = tape.sparse(x, &crop);
        let h = centre(tape, h);
        let h = tape.conv(h, &self.conv1);
        let h = tape.tanh(h);
        let h = tape.conv(h, &self.conv2);
        let h = tape.tanh(h);
        let h = tape.grid_pool(h, 2);
        tape.dense(h, &self.head)
    }

    /// Blank (zero-variance) images have no face.
    fn detect(&self, x: &ImageTensor) -> Option<FaceBox> {
        let mean = x.mean();
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        (var > 1e-10).then(|| centre_box(x.height(), x.width()))
    }
}

/// Three convolution stages; each post-activation map is one feature layer.
pub struct ToyFeatures {
    family: FeatureFamily,
    layers: Vec<Arc<Conv2d>>,
    weights: Vec<f64>,
}

impl ToyFeatures {
    pub fn new(rng: &RngState, family: FeatureFamily) -> Self {
        let mut r = rng.derive(format!("features/{}", family.name())).rng();
        // (in, out, kernel, stride) per stage
        let spec: [(usize, usize, usize, usize); 3] = match family {
            FeatureFamily::AlexnetFamily => [(3, 8, 5, 2), (8, 16, 5, 1), (16, 24, 3, 2)],
            FeatureFamily::SqueezenetFamily => [(3, 8, 3, 2), (8, 8, 1, 1), (8, 16, 3, 2)],
            FeatureFamily::VggFamily => [(3, 8, 3, 1), (8, 16, 3, 2), (16, 32, 3, 2)],
        };
        let layers = spec
            .iter()
            .map(|&(i, o, k, s)| Arc::new(Conv2d::random(&mut r, i, o, k, s, 1.5)))
            .collect::<Vec<_>>();
        let weights = vec![1.0 / layers.len() as f64; layers.len()];
        Self {
            family,
            layers,
            weights,
        }
    }
}

impl FeatureExtractor for ToyFeatures {
    fn features(&self, tape: &mut Tape, x: Var) -> Vec<Var> {
        let mut h = centre(tape, x);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let c = tape.conv(h, layer);
            h = tape.tanh(c);
            out.push(h);
        }
        out
    }

    fn layer_weights(&self) -> &[f64] {
        &self.weights
    }

    fn family(&self) -> FeatureFamily {
        self.family
    }
}

/// Conv image head and hashed bag-of-tokens text head in a shared 32-d space.
pub struct ToyClip {
    conv1: Arc<Conv2d>,
    conv2: Arc<Conv2d>,
    head: Arc<Dense>,
    text_seed: u64,
}

impl ToyClip {
    pub fn new(rng: &RngState) -> Self {
        let mut r = rng.derive("clip").rng();
        Self {
            conv1: Arc::new(Conv2d::random(&mut r, 3, 8, 3, 2, 1.5)),
            conv2: Arc::new(Conv2d::random(&mut r, 8, 16, 3, 2, 1.5)),
            head: Arc::new(Dense::random(&mut r, 16 * 4, CLIP_DIM)),
            text_seed: rng.seed,
        }
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl TextImageEmbedder for ToyClip {
    fn embed_image(&self, tape: &mut Tape, x: Var) -> Var {
        let h = centre(tape, x);
        let h = tape.conv(h, &self.conv1);
        let h = tape.tanh(h);
        let h = tape.conv(h, &self.conv2);
        let h = tape.tanh(h);
        let h = tape.grid_pool(h, 2);
        tape.dense(h, &self.head)
    }

    fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; CLIP_DIM];
        let scale = 1.0 / (CLIP_DIM as f64).sqrt();
        for token in tokens(text) {
            let mut r = RngState::new(self.text_seed, format!("clip/token/{token}")).rng();
            for v in out.iter_mut() {
                *v += scale * r.sample::<f64, _>(StandardNormal);
            }
        }
        out
    }
}

/// Codec round trip followed by a prompt-seeded smooth warp and colour field.
/// No diffusion loop is simulated; `inference_steps` is accepted and ignored.
pub struct ToyEditor {
    codec: Arc<ToyCodec>,
}

impl ToyEditor {
    pub fn new(codec: Arc<ToyCodec>) -> Self {
        Self { codec }
    }
}

struct Wave {
    amp: f64,
    fy: f64,
    fx: f64,
    phase: f64,
}

impl Wave {
    fn draw(r: &mut impl Rng, amp: f64) -> Self {
        Self {
            amp: amp * r.random_range(-1.0..1.0),
            fy: r.random_range(0.5..2.0),
            fx: r.random_range(0.5..2.0),
            phase: r.random_range(0.0..TAU),
        }
    }

    fn at(&self, v: f64, u: f64) -> f64 {
        self.amp * (TAU * (self.fy * v + self.fx * u) + self.phase).sin()
    }
}

impl InstructionEditor for ToyEditor {
    fn edit(
        &self,
        x: &ImageTensor,
        prompt: &str,
        params: &EditParams,
        rng: &RngState,
    ) -> Result<ImageTensor> {
        if prompt.trim().is_empty() {
            return Err(invalid("edit prompt must be nonempty"));
        }
        let (h, w) = (x.height(), x.width());
        let base = {
            let out = super::eval(x, |t, v| {
                let z = self.codec.encode(t, v);
                self.codec.decode(t, z)
            });
            ImageTensor::from_chw(h, w, &out)?
        };

        let prompt_key = stable_hash(prompt);
        // the prompt fixes the edit's character, the seed perturbs it
        let mut pr = RngState::new(prompt_key, "toy-editor/prompt").rng();
        let mut sr = rng.derive(format!("toy-editor/{prompt_key:016x}")).rng();
        let strength = 0.15 * (params.text_guidance / 7.5) * (1.5 / params.image_guidance).sqrt();
        let colour: Vec<Wave> = (0..3)
            .map(|_| {
                let mut wave = Wave::draw(&mut pr, strength);
                wave.phase += sr.random_range(-0.5..0.5);
                wave
            })
            .collect();
        let warp_px = 0.05 * h.min(w) as f64 * strength / 0.15;
        let warp_y = Wave::draw(&mut pr, warp_px);
        let warp_x = Wave::draw(&mut pr, warp_px);
        let jitter = sr.random_range(0.8..1.2);
        // 0: everywhere, 1: face region, 2: background
        let region = prompt_key % 3;

        let map = resample_map(h, w, |y, xx| {
            let v = y as f64 / h as f64;
            let u = xx as f64 / w as f64;
            (
                y as f64 + jitter * warp_y.at(v, u),
                xx as f64 + jitter * warp_x.at(u, v),
            )
        });
        let warped = crate::warp::apply_to_image(&map, &base);
        let mut data = warped.into_data();
        for y in 0..h {
            let v = (y as f64 + 0.5) / h as f64;
            for xx in 0..w {
                let u = (xx as f64 + 0.5) / w as f64;
                let r2 = ((v - 0.5) / 0.3).powi(2) + ((u - 0.5) / 0.25).powi(2);
                let weight = match region {
                    0 => 1.0,
                    1 => (-r2).exp(),
                    _ => 1.0 - (-r2).exp(),
                };
                for (c, wave) in colour.iter().enumerate() {
                    data[(y * w + xx) * 3 + c] += weight * wave.at(v, u);
                }
            }
        }
        ImageTensor::clamped(h, w, data)
    }
}

/// Fixed-random-weight bundle for `image_size` ∈ {16, 32, 64}, using the VGG-like
/// feature stack.
pub fn make_toy_bundle(seed: u64, image_size: usize) -> Result<BackendBundle> {
    make_toy_bundle_with(seed, image_size, FeatureFamily::VggFamily)
}

pub fn make_toy_bundle_with(
    seed: u64,
    image_size: usize,
    family: FeatureFamily,
) -> Result<BackendBundle> {
    if !TOY_SIZES.contains(&image_size) {
        return Err(invalid(format!(
            "toy backend supports image sizes {TOY_SIZES:?}, got {image_size}"
        )));
    }
    let rng = RngState::new(seed, "toy-backend");
    let codec = Arc::new(ToyCodec::new(&rng));
    Ok(BackendBundle {
        editor: Arc::new(ToyEditor::new(Arc::clone(&codec))),
        codec,
        face: Arc::new(ToyFace::new(&rng)),
        feat: Arc::new(ToyFeatures::new(&rng, family)),
        clip: Arc::new(ToyClip::new(&rng)),
        kind: BackendKind::Toy,
        id: format!("toy:{seed}:{image_size}:{}", family.name()),
        image_size: Some(image_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{face_region_mask, image_input};
    use crate::synthetic::{noise, portrait};

    #[test]
    fn unsupported_size_is_rejected() {
        assert!(make_toy_bundle(0, 48).is_err());
        for s in TOY_SIZES {
            assert!(make_toy_bundle(0, s).is_ok());
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let x = portrait(32, 32, 1);
        let a = make_toy_bundle(9, 32).unwrap();
        let b = make_toy_bundle(9, 32).unwrap();
        assert_eq!(a.round_trip(&x), b.round_trip(&x));
        assert_eq!(a.face_embedding(&x), b.face_embedding(&x));
        assert_eq!(a.clip_image(&x), b.clip_image(&x));
        let p = EditParams::default();
        let r = RngState::new(0, "edit");
        assert_eq!(
            a.edit(&x, "Let it be snowy", &p, &r).unwrap(),
            b.edit(&x, "Let it be snowy", &p, &r).unwrap()
        );
    }

    #[test]
    fn face_self_similarity_is_one() {
        let b = make_toy_bundle(0, 32).unwrap();
        for seed in 0..5 {
            let x = noise(32, 32, seed);
            assert!((b.face_similarity(&x, &x) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn latent_shape_is_quarter_resolution() {
        let b = make_toy_bundle(0, 32).unwrap();
        let mut t = Tape::new();
        let x = image_input(&mut t, &portrait(32, 32, 0));
        let z = b.codec.encode(&mut t, x);
        let s = t.shape(z);
        assert_eq!((s.c, s.h, s.w), (LATENT_CHANNELS, 8, 8));
        let d = b.codec.decode(&mut t, z);
        assert_eq!(t.shape(d), t.shape(x));
    }

    #[test]
    fn codec_roughly_reconstructs() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 3);
        let mse = b.round_trip(&x).mse(&x);
        let gray = ImageTensor::gray(32, 32).mse(&x);
        assert!(mse < gray, "round-trip mse {mse} vs gray baseline {gray}");
    }

    #[test]
    fn centred_mask_for_toy_face() {
        let b = make_toy_bundle(0, 32).unwrap();
        let m = face_region_mask(b.face.as_ref(), &portrait(32, 32, 0));
        assert!(!m.fallback);
        assert_eq!(m.count(), 16 * 16);
        assert_eq!(m.data[8 * 32 + 8], 1.0);
        assert_eq!(m.data[7 * 32 + 8], 0.0);
        assert_eq!(m.data[23 * 32 + 23], 1.0);
        assert_eq!(m.data[24 * 32 + 23], 0.0);
    }

    #[test]
    fn blank_image_falls_back_to_full_mask() {
        let b = make_toy_bundle(0, 16).unwrap();
        let m = face_region_mask(b.face.as_ref(), &ImageTensor::constant(16, 16, 0.3).unwrap());
        assert!(m.fallback);
        assert_eq!(m.count(), 16 * 16);
    }

    #[test]
    fn editor_depends_on_prompt_and_seed() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        let p = EditParams::default();
        let r = RngState::new(0, "edit");
        let a = b.edit(&x, "Turn the person's hair pink", &p, &r).unwrap();
        let c = b.edit(&x, "Let it be snowy", &p, &r).unwrap();
        let d = b.edit(&x, "Turn the person's hair pink", &p, &r.with_seed(1)).unwrap();
        assert!(a.mse(&c) > 0.0);
        assert!(a.mse(&d) > 0.0);
        assert_eq!(a, b.edit(&x, "Turn the person's hair pink", &p, &r).unwrap());
        assert!(b.edit(&x, "  ", &p, &r).is_err());
    }

    #[test]
    fn text_embedding_is_bag_of_tokens() {
        let b = make_toy_bundle(0, 32).unwrap();
        assert_eq!(b.clip_text("Pink hair"), b.clip_text("hair, PINK"));
        assert_eq!(b.clip_text("a").len(), b.clip_image(&portrait(32, 32, 0)).len());
    }
}
