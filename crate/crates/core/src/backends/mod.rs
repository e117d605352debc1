//! Interfaces for the neural components the attacks differentiate through,
//! plus the deterministic toy implementations used for offline work.
//!
//! Differentiable components build their forward pass on a caller-supplied
//! [`Tape`]; images enter as channel-major `3 x H x W` variables (see
//! [`image_input`]). The editor is a black box and only needs to be
//! deterministic for a fixed [`RngState`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::image::{cosine_sim, ImageTensor, CHANNELS};
use crate::rng::RngState;

mod real;
mod toy;

pub use real::{real_bundle, BackendConfig, ComponentRegistry, ExternalCommandEditor};
pub use toy::{make_toy_bundle, make_toy_bundle_with, ToyClip, ToyCodec, ToyEditor, ToyFace, ToyFeatures, TOY_SIZES};

pub trait LatentCodec: Send + Sync {
    fn encode(&self, tape: &mut Tape, x: Var) -> Var;
    fn decode(&self, tape: &mut Tape, z: Var) -> Var;
}

pub trait FaceEmbedder: Send + Sync {
    fn embed(&self, tape: &mut Tape, x: Var) -> Var;
    /// Bounding box of the detected face, if any.
    fn detect(&self, x: &ImageTensor) -> Option<FaceBox>;
}

pub trait FeatureExtractor: Send + Sync {
    fn features(&self, tape: &mut Tape, x: Var) -> Vec<Var>;
    fn layer_weights(&self) -> &[f64];
    fn family(&self) -> FeatureFamily;
}

pub trait TextImageEmbedder: Send + Sync {
    fn embed_image(&self, tape: &mut Tape, x: Var) -> Var;
    fn embed_text(&self, text: &str) -> Vec<f64>;
}

pub trait InstructionEditor: Send + Sync {
    fn edit(
        &self,
        x: &ImageTensor,
        prompt: &str,
        params: &EditParams,
        rng: &RngState,
    ) -> Result<ImageTensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    AlexnetFamily,
    SqueezenetFamily,
    VggFamily,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 3] = [
        FeatureFamily::AlexnetFamily,
        FeatureFamily::SqueezenetFamily,
        FeatureFamily::VggFamily,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::AlexnetFamily => "alexnet_family",
            FeatureFamily::SqueezenetFamily => "squeezenet_family",
            FeatureFamily::VggFamily => "vgg_family",
        }
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid(format!("unknown feature extractor family `{s}`")))
    }
}

/// Instruction-editor settings; defaults are 512 px, 50 steps, image guidance
/// 1.5, text guidance 7.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditParams {
    pub image_size: usize,
    pub inference_steps: usize,
    pub image_guidance: f64,
    pub text_guidance: f64,
}

impl Default for EditParams {
    fn default() -> Self {
        Self {
            image_size: 512,
            inference_steps: 50,
            image_guidance: 1.5,
            text_guidance: 7.5,
        }
    }
}

impl EditParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.inference_steps == 0 {
            return Err(invalid("edit image_size and inference_steps must be positive"));
        }
        if !(self.image_guidance > 0.0 && self.text_guidance >= 0.0) {
            return Err(invalid("edit guidance scales must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Real,
    #[default]
    Toy,
}

/// The five components, bound together.
#[derive(Clone)]
pub struct BackendBundle {
    pub codec: Arc<dyn LatentCodec>,
    pub face: Arc<dyn FaceEmbedder>,
    pub feat: Arc<dyn FeatureExtractor>,
    pub clip: Arc<dyn TextImageEmbedder>,
    pub editor: Arc<dyn InstructionEditor>,
    pub kind: BackendKind,
    /// Stable identifier used in cache keys and reports.
    pub id: String,
    /// Square input size the components expect, if fixed.
    pub image_size: Option<usize>,
}

impl fmt::Debug for BackendBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendBundle")
            .field("kind", &self.kind)
            .field("id", &self.id)
            .field("image_size", &self.image_size)
            .finish_non_exhaustive()
    }
}

impl BackendBundle {
    pub fn check_input(&self, x: &ImageTensor) -> Result<()> {
        match self.image_size {
            Some(s) if x.height() != s || x.width() != s => Err(Error::ShapeMismatch {
                expected: format!("{s}x{s}x3"),
                actual: format!("{}x{}x3", x.height(), x.width()),
            }),
            _ => Ok(()),
        }
    }

    pub fn encode_image(&self, x: &ImageTensor) -> Vec<f64> {
        eval(x, |t, v| self.codec.encode(t, v))
    }

    /// `decode(encode(x))`.
    pub fn round_trip(&self, x: &ImageTensor) -> ImageTensor {
        let out = eval(x, |t, v| {
            let z = self.codec.encode(t, v);
            self.codec.decode(t, z)
        });
        ImageTensor::from_chw(x.height(), x.width(), &out).expect("decoder preserves shape")
    }

    pub fn face_embedding(&self, x: &ImageTensor) -> Vec<f64> {
        eval(x, |t, v| self.face.embed(t, v))
    }

    /// Cosine similarity of face embeddings; 0 when either embedding vanishes.
    pub fn face_similarity(&self, a: &ImageTensor, b: &ImageTensor) -> f64 {
        cosine_sim(&self.face_embedding(a), &self.face_embedding(b)).unwrap_or(0.0)
    }

    pub fn feature_maps(&self, x: &ImageTensor) -> Vec<(Vec<f64>, Shape)> {
        let mut tape = Tape::new();
        let v = image_const(&mut tape, x);
        self.feat
            .features(&mut tape, v)
            .into_iter()
            .map(|f| (tape.value(f).to_vec(), tape.shape(f)))
            .collect()
    }

    pub fn clip_image(&self, x: &ImageTensor) -> Vec<f64> {
        eval(x, |t, v| self.clip.embed_image(t, v))
    }

    pub fn clip_text(&self, text: &str) -> Vec<f64> {
        self.clip.embed_text(text)
    }

    pub fn edit(
        &self,
        x: &ImageTensor,
        prompt: &str,
        params: &EditParams,
        rng: &RngState,
    ) -> Result<ImageTensor> {
        params.validate()?;
        self.editor.edit(x, prompt, params, rng)
    }
}

pub fn image_shape(x: &ImageTensor) -> Shape {
    Shape::new(CHANNELS, x.height(), x.width())
}

/// Differentiable image input.
pub fn image_input(tape: &mut Tape, x: &ImageTensor) -> Var {
    tape.input(x.to_chw(), image_shape(x))
}

pub fn image_const(tape: &mut Tape, x: &ImageTensor) -> Var {
    tape.constant(x.to_chw(), image_shape(x))
}

/// Forward-only evaluation of `f` on a constant image.
pub fn eval(x: &ImageTensor, f: impl FnOnce(&mut Tape, Var) -> Var) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = image_const(&mut tape, x);
    let out = f(&mut tape, v);
    tape.value(out).to_vec()
}

/// Binary `H x W` face-region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// No face was found and the mask covers the whole image.
    pub fallback: bool,
}

impl FaceMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
            fallback: false,
        }
    }

    /// The mask repeated over the three channels, channel-major.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len() * CHANNELS);
        for _ in 0..CHANNELS {
            out.extend_from_slice(&self.data);
        }
        out
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// Filled rectangle over the detected face; all ones with `fallback` set when
/// no face is found.
pub fn face_region_mask(face: &dyn FaceEmbedder, x: &ImageTensor) -> FaceMask {
    let (h, w) = (x.height(), x.width());
    match face.detect(x) {
        Some(b) => {
            let mut data = vec![0.0; h * w];
            for y in b.top..(b.top + b.height).min(h) {
                for xx in b.left..(b.left + b.width).min(w) {
                    data[y * w + xx] = 1.0;
                }
            }
            FaceMask {
                height: h,
                width: w,
                data,
                fallback: false,
            }
        }
        None => {
            log::warn!("no face found; protecting the whole image");
            FaceMask {
                height: h,
                width: w,
                data: vec![1.0; h * w],
                fallback: true,
            }
        }
    }
}
