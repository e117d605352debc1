use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cw::cw_l2_attack;
use super::engine::{evaluate, sign_pgd, Terms};
use super::losses::{decode_encode, fe_term, fr_term, pixel_term, sq_dist_const, FeatureTargets};
use super::{AttackConfig, AttackMethod, Direction, LossName, LossTerm, ProtectionResult, StepLosses};
use crate::autodiff::{SparseMap, Tape, Var};
use crate::backends::{face_region_mask, image_shape, BackendBundle, FaceMask};
use crate::error::{invalid, Error, Result};
use crate::image::{chw_to_hwc, ImageTensor};
use crate::rng::RngState;
use crate::warp::{blur_map, rotation_map};

/// Source-side constants of the FaceLock family of objectives.
struct FaceContext {
    source_chw: Vec<f64>,
    embedding: Vec<f64>,
    z: Vec<f64>,
    features: Option<FeatureTargets>,
    mask: Option<Arc<Vec<f64>>>,
}

impl FaceContext {
    fn new(bundle: &BackendBundle, x: &ImageTensor, features: bool, mask: Option<&FaceMask>) -> Self {
        Self {
            source_chw: x.to_chw(),
            embedding: bundle.face_embedding(x),
            z: bundle.encode_image(x),
            features: features.then(|| FeatureTargets::of(bundle, x)),
            mask: mask.map(|m| Arc::new(m.to_chw())),
        }
    }

    /// `fr + λ_aux·fe + λ_latent·latent + λ_aux·pixel`, each through the codec
    /// round trip where applicable and only when toggled on.
    fn facelock_terms(&self, bundle: &BackendBundle, cfg: &AttackConfig, tape: &mut Tape, x: Var) -> Terms {
        let toggles = cfg.loss_toggles;
        let z = bundle.codec.encode(tape, x);
        let xd = bundle.codec.decode(tape, z);
        let mut terms = Vec::new();
        if toggles.fr {
            terms.push((LossTerm::ascend(LossName::Fr, 1.0), fr_term(tape, bundle, xd, &self.embedding)));
        }
        if toggles.fe {
            let targets = self.features.as_ref().expect("feature targets prepared");
            terms.push((LossTerm::ascend(LossName::Fe, cfg.lambda_aux), fe_term(tape, bundle, xd, targets)));
        }
        if toggles.latent {
            let v = sq_dist_const(tape, z, &self.z);
            terms.push((LossTerm::ascend(LossName::Latent, cfg.lambda_latent), v));
        }
        if toggles.pixel {
            let mask = self.mask.as_ref().expect("mask prepared");
            let v = pixel_term(tape, x, &self.source_chw, mask);
            terms.push((LossTerm::ascend(LossName::Pixel, cfg.lambda_aux), v));
        }
        terms
    }
}

/// FaceLock: maximise `f_FR(x_d, x) + λ_aux·f_FE(x_d, x) + λ_latent·‖E(x') − E(x)‖²`
/// with `x_d = D(E(x'))`. `cfg.loss_toggles` selects the active terms.
pub fn facelock_protect(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    let mask = cfg.loss_toggles.pixel.then(|| face_region_mask(&*bundle.face, x));
    let ctx = FaceContext::new(bundle, x, cfg.loss_toggles.fe, mask.as_ref());
    let fallback = mask.is_some_and(|m| m.fallback);
    sign_pgd(bundle, x, cfg, "facelock", Direction::Ascend, fallback, &|tape, v, _| {
        ctx.facelock_terms(bundle, cfg, tape, v)
    })
}

/// Losses and the total ascent gradient (HWC) of the FaceLock objective at
/// `x_prime`, for inspection and finite-difference checks.
pub fn facelock_objective(
    bundle: &BackendBundle,
    x_src: &ImageTensor,
    x_prime: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<(StepLosses, Vec<f64>)> {
    x_src.ensure_same_shape(x_prime)?;
    let mask = cfg.loss_toggles.pixel.then(|| face_region_mask(&*bundle.face, x_src));
    let ctx = FaceContext::new(bundle, x_src, cfg.loss_toggles.fe, mask.as_ref());
    let e = evaluate(
        &|tape, v, _| ctx.facelock_terms(bundle, cfg, tape, v),
        x_prime.to_chw(),
        image_shape(x_prime),
        0,
        Direction::Ascend,
    )?;
    Ok((e.losses, chw_to_hwc(x_prime.height(), x_prime.width(), &e.gradient)))
}

/// Design I: attack the recogniser directly, `−sim(face(x'), face(x))`.
pub fn cvl_attack(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    let emb = bundle.face_embedding(x);
    sign_pgd(bundle, x, cfg, "cvl", Direction::Ascend, false, &|tape, v, _| {
        vec![(LossTerm::ascend(LossName::Fr, 1.0), fr_term(tape, bundle, v, &emb))]
    })
}

/// Design II: the recogniser loss on the codec round trip `D(E(x'))`.
pub fn cvl_d_attack(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    let emb = bundle.face_embedding(x);
    sign_pgd(bundle, x, cfg, "cvl_d", Direction::Ascend, false, &|tape, v, _| {
        let xd = decode_encode(tape, bundle, v);
        vec![(LossTerm::ascend(LossName::Fr, 1.0), fr_term(tape, bundle, xd, &emb))]
    })
}

/// Design III: Design II plus `λ_aux·‖(x' − x) ⊙ m‖₂` over the face region.
pub fn cvl_dp_attack(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    let mask = face_region_mask(&*bundle.face, x);
    cvl_dp_attack_with_mask(bundle, x, cfg, &mask)
}

pub fn cvl_dp_attack_with_mask(
    bundle: &BackendBundle,
    x: &ImageTensor,
    cfg: &AttackConfig,
    mask: &FaceMask,
) -> Result<ProtectionResult> {
    if mask.height != x.height() || mask.width != x.width() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", x.height(), x.width()),
            actual: format!("{}x{}", mask.height, mask.width),
        });
    }
    let emb = bundle.face_embedding(x);
    let source = x.to_chw();
    let m = Arc::new(mask.to_chw());
    sign_pgd(bundle, x, cfg, "cvl_dp", Direction::Ascend, mask.fallback, &|tape, v, _| {
        let xd = decode_encode(tape, bundle, v);
        let fr = fr_term(tape, bundle, xd, &emb);
        let px = pixel_term(tape, v, &source, &m);
        vec![
            (LossTerm::ascend(LossName::Fr, 1.0), fr),
            (LossTerm::ascend(LossName::Pixel, cfg.lambda_aux), px),
        ]
    })
}

fn target_or_gray(x: &ImageTensor, target: Option<&ImageTensor>) -> Result<ImageTensor> {
    match target {
        Some(t) => {
            x.ensure_same_shape(t)?;
            Ok(t.clone())
        }
        None => Ok(ImageTensor::gray(x.height(), x.width())),
    }
}

/// PhotoGuard encoder attack: pull `E(x')` towards `E(x_target)`. The target
/// defaults to a mid-gray image.
pub fn encoder_attack_targeted(
    bundle: &BackendBundle,
    x: &ImageTensor,
    x_target: Option<&ImageTensor>,
    cfg: &AttackConfig,
) -> Result<ProtectionResult> {
    let z_t = bundle.encode_image(&target_or_gray(x, x_target)?);
    sign_pgd(bundle, x, cfg, "photoguard", Direction::Descend, false, &|tape, v, _| {
        let z = bundle.codec.encode(tape, v);
        vec![(LossTerm::descend(LossName::EncoderTargeted, 1.0), sq_dist_const(tape, z, &z_t))]
    })
}

/// Push `E(x')` away from `E(x)`.
pub fn encoder_attack_untargeted(bundle: &BackendBundle, x: &ImageTensor, cfg: &AttackConfig) -> Result<ProtectionResult> {
    let z_src = bundle.encode_image(x);
    sign_pgd(bundle, x, cfg, "untargeted_encoder", Direction::Ascend, false, &|tape, v, _| {
        let z = bundle.codec.encode(tape, v);
        vec![(LossTerm::ascend(LossName::EncoderUntargeted, 1.0), sq_dist_const(tape, z, &z_src))]
    })
}

/// Pull the codec reconstruction `D(E(x'))` towards `x_target` (mid-gray by
/// default).
pub fn vae_attack(
    bundle: &BackendBundle,
    x: &ImageTensor,
    x_target: Option<&ImageTensor>,
    cfg: &AttackConfig,
) -> Result<ProtectionResult> {
    let target = target_or_gray(x, x_target)?.to_chw();
    sign_pgd(bundle, x, cfg, "vae", Direction::Descend, false, &|tape, v, _| {
        let xd = decode_encode(tape, bundle, v);
        vec![(LossTerm::descend(LossName::VaeTarget, 1.0), sq_dist_const(tape, xd, &target))]
    })
}

/// Differentiable transforms sampled by the EOT attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EotTransform {
    Identity,
    /// 5x5 Gaussian, σ = 1.5.
    Blur,
    /// Rotation by an angle drawn uniformly from ±10°.
    Rotate,
}

impl EotTransform {
    pub fn name(self) -> &'static str {
        match self {
            EotTransform::Identity => "identity",
            EotTransform::Blur => "blur",
            EotTransform::Rotate => "rotate",
        }
    }
}

impl fmt::Display for EotTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EotTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [EotTransform::Identity, EotTransform::Blur, EotTransform::Rotate]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid(format!("unknown EOT transform `{s}`")))
    }
}

/// Objective builder shared by the attack and [`eot_expected_objective`];
/// rotation angles for step `t` come from `stream.derive(t)`.
fn eot_builder<'a>(
    bundle: &'a BackendBundle,
    x: &ImageTensor,
    cfg: &'a AttackConfig,
    transforms: &'a [EotTransform],
    stream: RngState,
) -> Result<impl Fn(&mut Tape, Var, usize) -> Terms + 'a> {
    if transforms.is_empty() {
        return Err(invalid("EOT transform set is empty"));
    }
    let (h, w) = (x.height(), x.width());
    let z_src = bundle.encode_image(x);
    let source = x.to_chw();
    let blur = Arc::new(blur_map(h, w, 5, 1.5));
    let sample = move |step: usize| -> Vec<Option<Arc<SparseMap>>> {
        let mut rng = stream.derive(step.to_string()).rng();
        transforms
            .iter()
            .map(|t| match t {
                EotTransform::Identity => None,
                EotTransform::Blur => Some(Arc::clone(&blur)),
                EotTransform::Rotate => Some(Arc::new(rotation_map(h, w, rng.random_range(-10.0..=10.0)))),
            })
            .collect()
    };
    Ok(move |tape: &mut Tape, v: Var, step: usize| {
        let mut total: Option<Var> = None;
        for map in sample(step) {
            let input = match map {
                Some(m) => tape.sparse(v, &m),
                None => v,
            };
            let z = bundle.codec.encode(tape, input);
            let d = sq_dist_const(tape, z, &z_src);
            total = Some(match total {
                Some(t) => tape.add(t, d),
                None => d,
            });
        }
        let mut expectation = total.expect("non-empty transform set");
        if transforms.len() > 1 {
            expectation = tape.scale(expectation, 1.0 / transforms.len() as f64);
        }
        let mut terms = vec![(LossTerm::ascend(LossName::EncoderUntargeted, 1.0), expectation)];
        if cfg.eot_beta != 0.0 {
            let delta = tape.sub_const(v, &source);
            let l2 = tape.sum_squares(delta);
            terms.push((LossTerm::descend(LossName::L2, cfg.eot_beta), l2));
        }
        terms
    })
}

/// EOT encoder attack: ascend the mean over `transforms` of
/// `‖E(f(x')) − E(x)‖²`, minus `β‖δ‖²`. One draw per transform per step.
pub fn eot_encoder_attack(
    bundle: &BackendBundle,
    x: &ImageTensor,
    cfg: &AttackConfig,
    transforms: &[EotTransform],
) -> Result<ProtectionResult> {
    let build = eot_builder(bundle, x, cfg, transforms, cfg.rng().derive("eot"))?;
    sign_pgd(bundle, x, cfg, "eot_encoder", Direction::Ascend, false, &build)
}

/// Monte Carlo estimate of the EOT objective at `x_prime`: the mean over
/// `draws` independent transform samples from `rng`. Evaluating two points
/// with the same `rng` compares them under common random numbers.
pub fn eot_expected_objective(
    bundle: &BackendBundle,
    x_src: &ImageTensor,
    x_prime: &ImageTensor,
    cfg: &AttackConfig,
    transforms: &[EotTransform],
    draws: usize,
    rng: &RngState,
) -> Result<f64> {
    x_src.ensure_same_shape(x_prime)?;
    if draws == 0 {
        return Err(invalid("need at least one draw"));
    }
    let build = eot_builder(bundle, x_src, cfg, transforms, rng.clone())?;
    let mut sum = 0.0;
    for d in 0..draws {
        sum += evaluate(&build, x_prime.to_chw(), image_shape(x_prime), d, Direction::Ascend)?.losses.objective;
    }
    Ok(sum / draws as f64)
}

/// Runs `method` with its default target (mid-gray) and transform set.
pub fn protect(
    bundle: &BackendBundle,
    method: AttackMethod,
    x: &ImageTensor,
    cfg: &AttackConfig,
) -> Result<ProtectionResult> {
    match method {
        AttackMethod::Facelock => facelock_protect(bundle, x, cfg),
        AttackMethod::Cvl => cvl_attack(bundle, x, cfg),
        AttackMethod::CvlD => cvl_d_attack(bundle, x, cfg),
        AttackMethod::CvlDp => cvl_dp_attack(bundle, x, cfg),
        AttackMethod::Photoguard => encoder_attack_targeted(bundle, x, None, cfg),
        AttackMethod::UntargetedEncoder => encoder_attack_untargeted(bundle, x, cfg),
        AttackMethod::Vae => vae_attack(bundle, x, None, cfg),
        AttackMethod::CwL2 => cw_l2_attack(bundle, x, cfg),
        AttackMethod::EotEncoder => eot_encoder_attack(bundle, x, cfg, &cfg.eot_transforms),
    }
}
