//! Perturbation-generation algorithms.
//!
//! All L∞ attacks share one sign-gradient engine ([`engine`]): each step
//! evaluates the attack's objective on the current protected image, moves the
//! perturbation by `alpha * sign(gradient)`, clips it to the ε-ball, clamps
//! the protected image to valid pixels and re-derives the perturbation from the
//! clamped image. The CW attack ([`cw`]) instead descends on a tanh
//! reparametrisation and only clips at the end.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{ImageTensor, Perturbation};
use crate::rng::RngState;

mod cw;
mod engine;
pub mod losses;
mod methods;

pub use cw::{cw_l2_attack, cw_l2_attack_observed};
pub use losses::{fe_loss, fr_loss, latent_loss, value_and_gradient};
pub use methods::{
    cvl_attack, cvl_d_attack, cvl_dp_attack, cvl_dp_attack_with_mask, encoder_attack_targeted,
    encoder_attack_untargeted, eot_encoder_attack, eot_expected_objective, facelock_objective, facelock_protect,
    protect, vae_attack, EotTransform,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Fr,
    Fe,
    Latent,
    Pixel,
    L2,
    EncoderTargeted,
    EncoderUntargeted,
    VaeTarget,
}

impl LossName {
    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Fr => "fr",
            LossName::Fe => "fe",
            LossName::Latent => "latent",
            LossName::Pixel => "pixel",
            LossName::L2 => "l2",
            LossName::EncoderTargeted => "encoder_targeted",
            LossName::EncoderUntargeted => "encoder_untargeted",
            LossName::VaeTarget => "vae_target",
        }
    }
}

impl FromStr for LossName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use LossName::*;
        [Fr, Fe, Latent, Pixel, L2, EncoderTargeted, EncoderUntargeted, VaeTarget]
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown loss term `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ascend,
    Descend,
}

/// One weighted term of an attack objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: LossName,
    pub weight: f64,
    pub direction: Direction,
}

impl LossTerm {
    pub fn ascend(name: LossName, weight: f64) -> Self {
        Self {
            name,
            weight,
            direction: Direction::Ascend,
        }
    }

    pub fn descend(name: LossName, weight: f64) -> Self {
        Self {
            name,
            weight,
            direction: Direction::Descend,
        }
    }
}

/// Which FaceLock terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LossToggles {
    pub fr: bool,
    pub fe: bool,
    pub latent: bool,
    pub pixel: bool,
}

impl LossToggles {
    pub const FACELOCK: LossToggles = LossToggles {
        fr: true,
        fe: true,
        latent: true,
        pixel: false,
    };

    pub const FR_ONLY: LossToggles = LossToggles {
        fr: true,
        fe: false,
        latent: false,
        pixel: false,
    };
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::FACELOCK
    }
}

impl TryFrom<Vec<String>> for LossToggles {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        let mut t = LossToggles {
            fr: false,
            fe: false,
            latent: false,
            pixel: false,
        };
        for n in names {
            match n.as_str() {
                "fr" => t.fr = true,
                "fe" => t.fe = true,
                "latent" => t.latent = true,
                "pixel" => t.pixel = true,
                other => return Err(invalid(format!("unknown loss toggle `{other}`"))),
            }
        }
        Ok(t)
    }
}

impl From<LossToggles> for Vec<String> {
    fn from(t: LossToggles) -> Self {
        [("fr", t.fr), ("fe", t.fe), ("latent", t.latent), ("pixel", t.pixel)]
            .into_iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n.to_string())
            .collect()
    }
}

/// Attack hyper-parameters. Defaults: ε = 0.02, α = 0.003, 100 steps,
/// λ_latent = 0.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    /// Weight of the latent regulariser.
    pub lambda_latent: f64,
    /// Weight of the feature-disparity and masked-pixel terms.
    pub lambda_aux: f64,
    pub loss_toggles: LossToggles,
    pub cw_c: f64,
    /// Weight of the `−β‖δ‖²` penalty in the EOT encoder attack.
    pub eot_beta: f64,
    pub eot_transforms: Vec<EotTransform>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            alpha: 0.003,
            steps: 100,
            lambda_latent: 0.2,
            lambda_aux: 1.0,
            loss_toggles: LossToggles::FACELOCK,
            cw_c: 1.0,
            eot_beta: 0.1,
            eot_transforms: vec![EotTransform::Identity, EotTransform::Blur, EotTransform::Rotate],
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// `epsilon = 0` and `alpha = 0` are accepted as degenerate no-op settings.
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("epsilon", self.epsilon),
            ("alpha", self.alpha),
            ("lambda_latent", self.lambda_latent),
            ("lambda_aux", self.lambda_aux),
            ("cw_c", self.cw_c),
            ("eot_beta", self.eot_beta),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> RngState {
        RngState::new(self.seed, "attack")
    }

    /// Short stable digest of the configuration, for cache keys and sidecars.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        crate::rng::hex_digest(json.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Facelock,
    Cvl,
    CvlD,
    CvlDp,
    Photoguard,
    UntargetedEncoder,
    Vae,
    CwL2,
    EotEncoder,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 9] = [
        AttackMethod::Facelock,
        AttackMethod::Cvl,
        AttackMethod::CvlD,
        AttackMethod::CvlDp,
        AttackMethod::Photoguard,
        AttackMethod::UntargetedEncoder,
        AttackMethod::Vae,
        AttackMethod::CwL2,
        AttackMethod::EotEncoder,
    ];

    /// The design ladder compared in the component ablation.
    pub const DESIGNS: [AttackMethod; 4] = [
        AttackMethod::Cvl,
        AttackMethod::CvlD,
        AttackMethod::CvlDp,
        AttackMethod::Facelock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Facelock => "facelock",
            AttackMethod::Cvl => "cvl",
            AttackMethod::CvlD => "cvl_d",
            AttackMethod::CvlDp => "cvl_dp",
            AttackMethod::Photoguard => "photoguard",
            AttackMethod::UntargetedEncoder => "untargeted_encoder",
            AttackMethod::Vae => "vae",
            AttackMethod::CwL2 => "cw_l2",
            AttackMethod::EotEncoder => "eot_encoder",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            AttackMethod::Photoguard | AttackMethod::Vae | AttackMethod::CwL2 => Direction::Descend,
            _ => Direction::Ascend,
        }
    }

    /// Component checklist `(recogniser, codec-in-loop, pixel, feature)`.
    pub fn components(self) -> [bool; 4] {
        match self {
            AttackMethod::Cvl => [true, false, false, false],
            AttackMethod::CvlD => [true, true, false, false],
            AttackMethod::CvlDp => [true, true, true, false],
            AttackMethod::Facelock => [true, true, false, true],
            _ => [false, true, false, false],
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown attack `{s}`")))
    }
}

/// Named loss values at one optimisation step. `objective` is the quantity
/// the attack moves in its own direction (ascent attacks maximise it, descent
/// attacks minimise it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub objective: f64,
    pub terms: BTreeMap<String, f64>,
}

impl StepLosses {
    pub fn term(&self, name: LossName) -> Option<f64> {
        self.terms.get(name.as_str()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionResult {
    pub protected: ImageTensor,
    pub perturbation: Perturbation,
    /// Losses evaluated at the start of each step; one entry per step.
    pub loss_trace: Vec<StepLosses>,
    /// Losses at the returned perturbation (for CW: at the final `w`, before
    /// the closing clip).
    pub final_losses: StepLosses,
    pub method_tag: String,
    pub direction: Direction,
    /// The face-region mask fell back to the whole image.
    pub mask_fallback: bool,
}

impl ProtectionResult {
    pub fn linf(&self) -> f64 {
        self.perturbation.linf()
    }

    pub fn initial_losses(&self) -> &StepLosses {
        self.loss_trace.first().unwrap_or(&self.final_losses)
    }
}
