//! Adapter contract for real model components.
//!
//! The crate does not ship pretrained networks. A [`ComponentRegistry`] maps
//! the identifiers named in a [`BackendConfig`] to loader functions; callers
//! that wrap a real VAE, recogniser, CNN stack or joint text-image model
//! register them here. One loader is built in: `editor = "command"`, which
//! shells out to an external editing program (see [`ExternalCommandEditor`]).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::toy::make_toy_bundle_with;
use super::{
    BackendBundle, BackendKind, EditParams, FaceEmbedder, FeatureExtractor, FeatureFamily,
    InstructionEditor, LatentCodec, TextImageEmbedder,
};
use crate::error::{Error, Result};
use crate::external::run_png_command;
use crate::image::ImageTensor;
use crate::rng::RngState;

/// `[backend]` section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub seed: u64,
    pub image_size: usize,
    pub codec: Option<String>,
    pub face: Option<String>,
    pub feature_extractor: Option<FeatureFamily>,
    pub editor: Option<String>,
    pub clip: Option<String>,
    /// Shell template for `editor = "command"`.
    pub editor_command: Option<String>,
    /// Component name → weight file; each must exist at startup.
    pub weights: BTreeMap<String, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Toy,
            seed: 0,
            image_size: 32,
            codec: None,
            face: None,
            feature_extractor: None,
            editor: None,
            clip: None,
            editor_command: None,
            weights: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn family(&self) -> FeatureFamily {
        self.feature_extractor.unwrap_or(FeatureFamily::VggFamily)
    }

    pub fn build(&self, registry: &ComponentRegistry) -> Result<BackendBundle> {
        match self.kind {
            BackendKind::Toy => make_toy_bundle_with(self.seed, self.image_size, self.family()),
            BackendKind::Real => real_bundle(self, registry),
        }
    }
}

type Loader<T> = Arc<dyn Fn(&BackendConfig) -> Result<Arc<T>> + Send + Sync>;

#[derive(Clone, Default)]
pub struct ComponentRegistry {
    codecs: BTreeMap<String, Loader<dyn LatentCodec>>,
    faces: BTreeMap<String, Loader<dyn FaceEmbedder>>,
    features: BTreeMap<String, Loader<dyn FeatureExtractor>>,
    clips: BTreeMap<String, Loader<dyn TextImageEmbedder>>,
    editors: BTreeMap<String, Loader<dyn InstructionEditor>>,
}

impl ComponentRegistry {
    /// Registry with the built-in `command` editor.
    pub fn with_builtin() -> Self {
        let mut r = Self::default();
        r.register_editor("command", |cfg| {
            let template = cfg.editor_command.clone().ok_or_else(|| {
                Error::Config("editor = \"command\" requires backend.editor_command".into())
            })?;
            Ok(Arc::new(ExternalCommandEditor { template }) as Arc<dyn InstructionEditor>)
        });
        r
    }

    pub fn register_codec(
        &mut self,
        name: &str,
        f: impl Fn(&BackendConfig) -> Result<Arc<dyn LatentCodec>> + Send + Sync + 'static,
    ) {
        self.codecs.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_face(
        &mut self,
        name: &str,
        f: impl Fn(&BackendConfig) -> Result<Arc<dyn FaceEmbedder>> + Send + Sync + 'static,
    ) {
        self.faces.insert(name.to_string(), Arc::new(f));
    }

    /// Feature stacks are keyed by family name (`vgg_family`, ...).
    pub fn register_features(
        &mut self,
        family: FeatureFamily,
        f: impl Fn(&BackendConfig) -> Result<Arc<dyn FeatureExtractor>> + Send + Sync + 'static,
    ) {
        self.features.insert(family.name().to_string(), Arc::new(f));
    }

    pub fn register_clip(
        &mut self,
        name: &str,
        f: impl Fn(&BackendConfig) -> Result<Arc<dyn TextImageEmbedder>> + Send + Sync + 'static,
    ) {
        self.clips.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_editor(
        &mut self,
        name: &str,
        f: impl Fn(&BackendConfig) -> Result<Arc<dyn InstructionEditor>> + Send + Sync + 'static,
    ) {
        self.editors.insert(name.to_string(), Arc::new(f));
    }
}

fn resolve<T: ?Sized>(
    table: &BTreeMap<String, Loader<T>>,
    component: &str,
    name: &str,
    cfg: &BackendConfig,
) -> Result<Arc<T>> {
    let loader = table.get(name).ok_or_else(|| Error::UnknownComponent {
        component: component.to_string(),
        name: name.to_string(),
    })?;
    loader(cfg)
}

/// Binds the five configured components. Fails naming every component that is
/// unset or whose weight file is missing, then naming the first one without a
/// registered loader.
pub fn real_bundle(cfg: &BackendConfig, registry: &ComponentRegistry) -> Result<BackendBundle> {
    let named = |v: &Option<String>| v.as_deref().filter(|s| !s.trim().is_empty()).map(str::to_string);
    let fields = [
        ("codec", named(&cfg.codec)),
        ("face", named(&cfg.face)),
        ("feature_extractor", cfg.feature_extractor.map(|f| f.name().to_string())),
        ("editor", named(&cfg.editor)),
        ("clip", named(&cfg.clip)),
    ];
    let mut missing: Vec<String> = fields
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(k, _)| k.to_string())
        .collect();
    for (component, path) in &cfg.weights {
        if !Path::new(path).exists() && !missing.contains(component) {
            missing.push(component.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingComponents(missing));
    }
    let get = |i: usize| fields[i].1.clone().expect("checked above");
    let (codec_name, face_name, feat_name, editor_name, clip_name) = (get(0), get(1), get(2), get(3), get(4));
    Ok(BackendBundle {
        codec: resolve(&registry.codecs, "codec", &codec_name, cfg)?,
        face: resolve(&registry.faces, "face", &face_name, cfg)?,
        feat: resolve(&registry.features, "feature_extractor", &feat_name, cfg)?,
        clip: resolve(&registry.clips, "clip", &clip_name, cfg)?,
        editor: resolve(&registry.editors, "editor", &editor_name, cfg)?,
        kind: BackendKind::Real,
        id: format!("real:{codec_name}:{face_name}:{feat_name}:{clip_name}:{editor_name}"),
        image_size: None,
    })
}

/// Editor that runs an external program per edit. Placeholders: `{input}`,
/// `{output}`, `{prompt}`, `{seed}`, `{stream}`, `{steps}`,
/// `{image_guidance}`, `{text_guidance}`, `{size}`.
#[derive(Debug, Clone)]
pub struct ExternalCommandEditor {
    pub template: String,
}

impl InstructionEditor for ExternalCommandEditor {
    fn edit(
        &self,
        x: &ImageTensor,
        prompt: &str,
        params: &EditParams,
        rng: &RngState,
    ) -> Result<ImageTensor> {
        run_png_command(
            &self.template,
            x,
            &[
                ("prompt", prompt.to_string()),
                ("seed", rng.seed.to_string()),
                ("stream", rng.label.clone()),
                ("steps", params.inference_steps.to_string()),
                ("image_guidance", params.image_guidance.to_string()),
                ("text_guidance", params.text_guidance.to_string()),
                ("size", params.image_size.to_string()),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::{ToyClip, ToyCodec, ToyFace, ToyFeatures};

    fn stub_registry() -> ComponentRegistry {
        let rng = RngState::new(0, "stub");
        let mut r = ComponentRegistry::with_builtin();
        let codec = Arc::new(ToyCodec::new(&rng));
        let c2 = Arc::clone(&codec);
        r.register_codec("sd-vae", move |_| Ok(c2.clone() as Arc<dyn LatentCodec>));
        let face = Arc::new(ToyFace::new(&rng));
        r.register_face("cvlface", move |_| Ok(face.clone() as Arc<dyn FaceEmbedder>));
        for fam in FeatureFamily::ALL {
            let rng = rng.clone();
            r.register_features(fam, move |_| {
                Ok(Arc::new(ToyFeatures::new(&rng, fam)) as Arc<dyn FeatureExtractor>)
            });
        }
        let clip = Arc::new(ToyClip::new(&rng));
        r.register_clip("clip-vit", move |_| Ok(clip.clone() as Arc<dyn TextImageEmbedder>));
        r
    }

    fn full_config() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Real,
            codec: Some("sd-vae".into()),
            face: Some("cvlface".into()),
            feature_extractor: Some(FeatureFamily::AlexnetFamily),
            editor: Some("command".into()),
            editor_command: Some("cp {input} {output}".into()),
            clip: Some("clip-vit".into()),
            ..BackendConfig::default()
        }
    }

    #[test]
    fn full_config_yields_real_bundle() {
        let b = real_bundle(&full_config(), &stub_registry()).unwrap();
        assert_eq!(b.kind, BackendKind::Real);
        assert_eq!(b.feat.family(), FeatureFamily::AlexnetFamily);
    }

    #[test]
    fn missing_editor_is_named() {
        let cfg = BackendConfig {
            editor: None,
            ..full_config()
        };
        let err = real_bundle(&cfg, &stub_registry()).unwrap_err();
        match &err {
            Error::MissingComponents(names) => assert_eq!(names, &vec!["editor".to_string()]),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("editor"));
    }

    #[test]
    fn missing_weight_file_is_named() {
        let mut cfg = full_config();
        cfg.weights
            .insert("face".into(), "/nonexistent/cvlface.safetensors".into());
        let err = real_bundle(&cfg, &stub_registry()).unwrap_err();
        assert!(matches!(err, Error::MissingComponents(ref n) if n == &vec!["face".to_string()]));
    }

    #[test]
    fn unregistered_component_is_reported() {
        let cfg = BackendConfig {
            codec: Some("other-vae".into()),
            ..full_config()
        };
        let err = real_bundle(&cfg, &stub_registry()).unwrap_err();
        assert!(matches!(err, Error::UnknownComponent { ref component, .. } if component == "codec"));
    }

    #[test]
    fn encode_is_deterministic_across_calls() {
        let b = real_bundle(&full_config(), &stub_registry()).unwrap();
        let x = crate::synthetic::portrait(32, 32, 1);
        assert_eq!(b.encode_image(&x), b.encode_image(&x));
    }

    #[cfg(unix)]
    #[test]
    fn command_editor_runs_external_program() {
        let b = real_bundle(&full_config(), &stub_registry()).unwrap();
        let x = crate::synthetic::portrait(16, 16, 1);
        let out = b
            .edit(&x, "Let it be snowy", &EditParams::default(), &RngState::default())
            .unwrap();
        assert_eq!(out, x.quantized());
    }

    #[test]
    fn toy_kind_builds_toy_bundle() {
        let cfg = BackendConfig::default();
        let b = cfg.build(&ComponentRegistry::default()).unwrap();
        assert_eq!(b.kind, BackendKind::Toy);
    }
}
