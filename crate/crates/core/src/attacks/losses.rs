//! Loss terms, both as scalar evaluators and as tape builders.

use std::sync::Arc;

use crate::autodiff::{Shape, Tape, Var};
use crate::backends::{eval, image_input, BackendBundle};
use crate::image::ImageTensor;

/// Facial-recognition loss: the negative face similarity of the two images.
/// Higher means more biometric disparity.
pub fn fr_loss(bundle: &BackendBundle, x_decoded: &ImageTensor, x_src: &ImageTensor) -> f64 {
    -bundle.face_similarity(x_decoded, x_src)
}

/// Feature-disparity loss: `Σ_l w_l ‖φ_l(a) − φ_l(b)‖² / numel(φ_l)`.
pub fn fe_loss(bundle: &BackendBundle, x_decoded: &ImageTensor, x_src: &ImageTensor) -> f64 {
    let a = bundle.feature_maps(x_decoded);
    let b = bundle.feature_maps(x_src);
    bundle
        .feat
        .layer_weights()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(w, ((fa, _), (fb, _)))| {
            let sq: f64 = fa.iter().zip(fb).map(|(p, q)| (p - q) * (p - q)).sum();
            w * sq / fa.len() as f64
        })
        .sum()
}

/// Latent displacement `‖E(x_protected) − z_src‖²`.
pub fn latent_loss(bundle: &BackendBundle, x_protected: &ImageTensor, z_src: &[f64]) -> f64 {
    let z = eval(x_protected, |t, v| bundle.codec.encode(t, v));
    z.iter().zip(z_src).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Source-side constants reused by every step of an attack.
pub(crate) struct FeatureTargets {
    pub maps: Vec<(Vec<f64>, Shape)>,
    pub weights: Vec<f64>,
}

impl FeatureTargets {
    pub fn of(bundle: &BackendBundle, x: &ImageTensor) -> Self {
        Self {
            maps: bundle.feature_maps(x),
            weights: bundle.feat.layer_weights().to_vec(),
        }
    }
}

pub(crate) fn decode_encode(tape: &mut Tape, bundle: &BackendBundle, x: Var) -> Var {
    let z = bundle.codec.encode(tape, x);
    bundle.codec.decode(tape, z)
}

/// `−cos(face(x), face_src)`.
pub(crate) fn fr_term(tape: &mut Tape, bundle: &BackendBundle, x: Var, src_embedding: &[f64]) -> Var {
    let e = bundle.face.embed(tape, x);
    let s = tape.constant(src_embedding.to_vec(), tape.shape(e));
    let cos = tape.cosine(e, s);
    tape.scale(cos, -1.0)
}

pub(crate) fn fe_term(tape: &mut Tape, bundle: &BackendBundle, x: Var, targets: &FeatureTargets) -> Var {
    let feats = bundle.feat.features(tape, x);
    let mut total: Option<Var> = None;
    for ((f, (target, _)), w) in feats.into_iter().zip(&targets.maps).zip(&targets.weights) {
        let n = tape.shape(f).numel() as f64;
        let d = tape.sub_const(f, target);
        let sq = tape.sum_squares(d);
        let term = tape.scale(sq, w / n);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| tape.constant(vec![0.0], Shape::SCALAR))
}

/// `‖v − c‖²` for a constant `c`.
pub(crate) fn sq_dist_const(tape: &mut Tape, v: Var, c: &[f64]) -> Var {
    let d = tape.sub_const(v, c);
    tape.sum_squares(d)
}

/// `‖(x' − x) ⊙ m‖₂`.
pub(crate) fn pixel_term(tape: &mut Tape, x_prime: Var, source_chw: &[f64], mask_chw: &Arc<Vec<f64>>) -> Var {
    let d = tape.sub_const(x_prime, source_chw);
    let m = tape.mul_const(d, Arc::clone(mask_chw));
    tape.l2_norm(m)
}

/// Value and input gradient of a scalar image function, for tests and tools.
pub fn value_and_gradient(
    x: &ImageTensor,
    f: impl FnOnce(&mut Tape, Var) -> Var,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let v = image_input(&mut tape, x);
    let out = f(&mut tape, v);
    let g = tape.backward(out).wrt(v, &tape);
    (
        tape.scalar(out),
        crate::image::chw_to_hwc(x.height(), x.width(), &g),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::make_toy_bundle;
    use crate::synthetic::{noise, portrait};

    #[test]
    fn fr_loss_self_is_minus_one() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        assert!((fr_loss(&b, &x, &x) + 1.0).abs() < 1e-5);
        for s in 0..5 {
            let v = fr_loss(&b, &noise(32, 32, s), &x);
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn fe_loss_zero_nonnegative_symmetric() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        assert_eq!(fe_loss(&b, &x, &x), 0.0);
        for s in 0..5 {
            let a = noise(32, 32, s);
            let v = fe_loss(&b, &a, &x);
            assert!(v >= 0.0);
            assert!((v - fe_loss(&b, &x, &a)).abs() < 1e-6);
        }
    }

    #[test]
    fn latent_loss_zero_at_source() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        let z = b.encode_image(&x);
        assert_eq!(latent_loss(&b, &x, &z), 0.0);
        assert!(latent_loss(&b, &noise(32, 32, 1), &z) > 0.0);
    }

    #[test]
    fn graph_terms_agree_with_scalar_losses() {
        let b = make_toy_bundle(0, 32).unwrap();
        let x = portrait(32, 32, 0);
        let y = noise(32, 32, 4);
        let emb = b.face_embedding(&x);
        let (fr, _) = value_and_gradient(&y, |t, v| fr_term(t, &b, v, &emb));
        assert!((fr - fr_loss(&b, &y, &x)).abs() < 1e-12);
        let targets = FeatureTargets::of(&b, &x);
        let (fe, _) = value_and_gradient(&y, |t, v| fe_term(t, &b, v, &targets));
        assert!((fe - fe_loss(&b, &y, &x)).abs() < 1e-12);
    }
}
