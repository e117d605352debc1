//! Browser demo: protect a small portrait, optionally purify it, then edit
//! both versions with the same seed and compare the scores.
//!
//! [`Session`] holds the logic and is usable natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use std::collections::BTreeMap;

use facelock::attacks::{protect, AttackConfig, AttackMethod, ProtectionResult};
use facelock::backends::{make_toy_bundle, BackendBundle, EditParams};
use facelock::harness::pipeline::edit_stream;
use facelock::harness::PromptCatalog;
use facelock::metrics::{self, Metric};
use facelock::purification::{purify, PurifySpec};
use facelock::synthetic::portrait;
use facelock::{ImageTensor, Result, RngState};
use serde_json::json;
use wasm_bindgen::prelude::*;

pub const SIZE: usize = 32;

/// Baseline and defense edits of the last `edit` call.
pub struct EditPair {
    pub prompt: String,
    pub baseline: ImageTensor,
    pub defended: ImageTensor,
}

pub struct Session {
    bundle: BackendBundle,
    catalog: PromptCatalog,
    source: ImageTensor,
    protection: Option<ProtectionResult>,
    /// The protected image after any purification.
    defended: Option<ImageTensor>,
    last_edit: Option<EditPair>,
}

impl Session {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            bundle: make_toy_bundle(seed, SIZE)?,
            catalog: PromptCatalog::default(),
            source: portrait(SIZE, SIZE, 0),
            protection: None,
            defended: None,
            last_edit: None,
        })
    }

    fn reset(&mut self, source: ImageTensor) {
        self.source = source;
        self.protection = None;
        self.defended = None;
        self.last_edit = None;
    }

    pub fn source(&self) -> &ImageTensor {
        &self.source
    }

    pub fn defended(&self) -> Option<&ImageTensor> {
        self.defended.as_ref()
    }

    pub fn last_edit(&self) -> Option<&EditPair> {
        self.last_edit.as_ref()
    }

    pub fn sample_portrait(&mut self, seed: u64) {
        self.reset(portrait(SIZE, SIZE, seed));
    }

    /// Loads an RGBA canvas image of any size, resized to the demo size.
    pub fn load_rgba(&mut self, width: usize, height: usize, rgba: &[u8]) -> Result<()> {
        let x = ImageTensor::from_rgba8_bytes(height, width, rgba)?;
        self.reset(x.resized(SIZE, SIZE));
        Ok(())
    }

    pub fn protect(&mut self, method: &str, epsilon: f64, steps: usize) -> Result<serde_json::Value> {
        let method: AttackMethod = method.parse()?;
        let cfg = AttackConfig {
            epsilon,
            steps,
            ..AttackConfig::default()
        };
        cfg.validate()?;
        let r = protect(&self.bundle, method, &self.source, &cfg)?;
        let summary = json!({
            "method": method.name(),
            "linf": r.linf(),
            "initial_objective": r.initial_losses().objective,
            "final_objective": r.final_losses.objective,
            "trace": r.loss_trace.iter().map(|s| s.objective).collect::<Vec<_>>(),
        });
        self.defended = Some(r.protected.clone());
        self.protection = Some(r);
        self.last_edit = None;
        Ok(summary)
    }

    /// Purifies the protected image in place (`blur`, `rotate`, `jpeg75`, ...).
    pub fn purify(&mut self, kind: &str, seed: u64) -> Result<()> {
        let spec: PurifySpec = kind.parse()?;
        let Some(x) = &self.defended else {
            return Err(facelock::Error::InvalidArgument("protect the image first".into()));
        };
        self.defended = Some(purify(x, &spec, &RngState::new(seed, format!("demo/purify/{kind}")))?);
        self.last_edit = None;
        Ok(())
    }

    /// `δ` scaled to fill the display range, centred on mid-grey.
    pub fn perturbation_view(&self) -> Option<ImageTensor> {
        let d = &self.protection.as_ref()?.perturbation;
        let gain = if d.epsilon > 0.0 { 0.5 / d.epsilon } else { 0.0 };
        let data = d.delta.iter().map(|v| 0.5 + v * gain).collect();
        ImageTensor::clamped(d.height, d.width, data).ok()
    }

    /// Edits the source and the defended image under the same editor seed.
    /// `prompt` is a catalog id or free text.
    pub fn edit(&mut self, prompt: &str, seed: u64) -> Result<()> {
        let defended = self.defended.clone().unwrap_or_else(|| self.source.clone());
        let text = self.catalog.get(prompt).map_or(prompt.to_string(), |p| p.text.clone());
        let params = EditParams {
            image_size: SIZE,
            ..EditParams::default()
        };
        let stream = edit_stream("demo", prompt, seed);
        self.last_edit = Some(EditPair {
            baseline: self.bundle.edit(&self.source, &text, &params, &stream)?,
            defended: self.bundle.edit(&defended, &text, &params, &stream)?,
            prompt: prompt.to_string(),
        });
        Ok(())
    }

    /// All seven metrics for the last edit pair, keyed by metric name, plus
    /// the baseline's FR for reference.
    pub fn scores(&self) -> Result<serde_json::Value> {
        let Some(e) = &self.last_edit else {
            return Err(facelock::Error::InvalidArgument("edit first".into()));
        };
        let b = &self.bundle;
        let text = self.catalog.get(&e.prompt).map_or(e.prompt.clone(), |p| p.text.clone());
        let description = self.catalog.get(&e.prompt).and_then(|p| p.description.clone()).unwrap_or(text.clone());
        let mut m = BTreeMap::new();
        m.insert(Metric::ClipS.name(), metrics::clip_s(b, &self.source, &e.defended, &text)?.value);
        m.insert(Metric::Psnr.name(), metrics::psnr(&e.baseline, &e.defended)?.value);
        m.insert(Metric::Ssim.name(), metrics::ssim(&e.baseline, &e.defended)?);
        m.insert(Metric::Lpips.name(), metrics::lpips(b, &e.baseline, &e.defended)?);
        m.insert(Metric::ClipSd.name(), metrics::clip_sd(b, &e.defended, &description)?);
        m.insert(Metric::ClipI.name(), metrics::clip_i(b, &self.source, &e.defended)?);
        m.insert(Metric::Fr.name(), metrics::fr_score(b, &self.source, &e.defended)?);
        Ok(json!({
            "defense": m,
            "baseline_fr": metrics::fr_score(b, &self.source, &e.baseline)?,
            "arrows": Metric::ALL.iter().map(|m| (m.name(), m.direction().arrow())).collect::<BTreeMap<_, _>>(),
        }))
    }
}

fn js(e: facelock::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Ok(Demo {
            inner: Session::new(seed.into()).map_err(js)?,
        })
    }

    pub fn size(&self) -> usize {
        SIZE
    }

    /// Prompt catalog as JSON `[{id, text, category}]`.
    pub fn prompts(&self) -> String {
        serde_json::to_string(&self.inner.catalog.entries).unwrap_or_default()
    }

    pub fn sample_portrait(&mut self, seed: u32) -> Vec<u8> {
        self.inner.sample_portrait(seed.into());
        self.inner.source().to_rgba8_bytes()
    }

    pub fn load_rgba(&mut self, width: usize, height: usize, rgba: &[u8]) -> Result<Vec<u8>, JsError> {
        self.inner.load_rgba(width, height, rgba).map_err(js)?;
        Ok(self.inner.source().to_rgba8_bytes())
    }

    /// Returns a JSON summary; fetch pixels with `defended_rgba`.
    pub fn protect(&mut self, method: &str, epsilon: f64, steps: usize) -> Result<String, JsError> {
        Ok(self.inner.protect(method, epsilon, steps).map_err(js)?.to_string())
    }

    pub fn purify(&mut self, kind: &str, seed: u32) -> Result<Vec<u8>, JsError> {
        self.inner.purify(kind, seed.into()).map_err(js)?;
        Ok(self.defended_rgba())
    }

    pub fn defended_rgba(&self) -> Vec<u8> {
        self.inner.defended().map(ImageTensor::to_rgba8_bytes).unwrap_or_default()
    }

    pub fn perturbation_rgba(&self) -> Vec<u8> {
        self.inner.perturbation_view().map(|x| x.to_rgba8_bytes()).unwrap_or_default()
    }

    pub fn edit(&mut self, prompt: &str, seed: u32) -> Result<(), JsError> {
        self.inner.edit(prompt, seed.into()).map_err(js)
    }

    /// `"baseline"` or `"defended"`.
    pub fn edited_rgba(&self, which: &str) -> Vec<u8> {
        match (self.inner.last_edit(), which) {
            (Some(e), "baseline") => e.baseline.to_rgba8_bytes(),
            (Some(e), "defended") => e.defended.to_rgba8_bytes(),
            _ => Vec::new(),
        }
    }

    pub fn scores(&self) -> Result<String, JsError> {
        Ok(self.inner.scores().map_err(js)?.to_string())
    }
}
