//! protect → purify → edit → evaluate.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::catalog::{Prompt, PromptCatalog};
use super::config::Config;
use super::dataset::{load_source, Skip};
use super::records::{EvaluationRecord, RecordFlag, NO_DEFENSE};
use crate::attacks::{protect, AttackConfig, AttackMethod, ProtectionResult};
use crate::backends::{BackendBundle, EditParams};
use crate::error::{Error, Result};
use crate::image::{write_png, ImageTensor};
use crate::metrics::{self, Metric};
use crate::purification::{purify, PurifySpec};
use crate::rng::{hex_digest, RngState};

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub images: Vec<(String, ImageTensor)>,
    /// Inputs dropped while loading.
    pub skipped: Vec<Skip>,
    pub prompts: Vec<Prompt>,
    pub methods: Vec<AttackMethod>,
    pub seeds: Vec<u64>,
    pub purifications: Vec<PurifySpec>,
    pub edit_params: EditParams,
    pub attack: AttackConfig,
    /// Tag stamped on defense records of sweep runs.
    pub variant: String,
    /// Worker threads; 1 runs inline.
    pub jobs: usize,
    pub cache: Option<PathBuf>,
}

impl ExperimentPlan {
    /// A plan with the default seeds 0..5, no purification and default
    /// attack and edit settings.
    pub fn new(images: Vec<(String, ImageTensor)>, prompts: Vec<Prompt>, methods: Vec<AttackMethod>) -> Self {
        Self {
            images,
            skipped: Vec::new(),
            prompts,
            methods,
            seeds: (0..5).collect(),
            purifications: vec![PurifySpec::None],
            edit_params: EditParams::default(),
            attack: AttackConfig::default(),
            variant: String::new(),
            jobs: 1,
            cache: None,
        }
    }

    /// Builds a plan from a config; images are resized to `image_size`.
    pub fn from_config(cfg: &Config, image_size: usize) -> Result<Self> {
        cfg.validate()?;
        let source = cfg
            .plan
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("plan.dataset is not set".into()))?;
        let dataset = load_source(source, image_size)?;
        let catalog = match &cfg.plan.catalog {
            Some(p) => PromptCatalog::load(p)?,
            None => PromptCatalog::default(),
        };
        if cfg.plan.seeds.is_empty() || cfg.plan.methods.is_empty() {
            return Err(Error::Config("plan.seeds and plan.methods must be non-empty".into()));
        }
        Ok(Self {
            images: dataset.images,
            skipped: dataset.skipped,
            prompts: catalog.select(&cfg.plan.prompts)?,
            methods: cfg.plan.methods.clone(),
            seeds: cfg.plan.seeds.clone(),
            purifications: cfg.purify.specs()?,
            edit_params: cfg.edit.clone(),
            attack: cfg.attack.config.clone(),
            variant: String::new(),
            jobs: 1,
            cache: cfg.plan.cache.clone(),
        })
    }

    /// Expected record count: images × prompts × (methods + 1) × seeds ×
    /// purifications.
    pub fn cardinality(&self) -> usize {
        self.images.len() * self.prompts.len() * (self.methods.len() + 1) * self.seeds.len() * self.purifications.len()
    }
}

/// Runs `f` over `items`, on `jobs` threads when the `parallel` feature is on.
/// Output order always matches input order.
pub(crate) fn par_map<T: Sync, U: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| items.par_iter().map(&f).collect());
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

pub type ProtectionSet = BTreeMap<(String, AttackMethod), ProtectionResult>;

/// Summary written next to each cached protected image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionSidecar {
    pub key: String,
    pub image_id: String,
    pub method: String,
    pub backend_id: String,
    pub config_hash: String,
    pub epsilon: f64,
    pub linf: f64,
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_terms: BTreeMap<String, f64>,
    pub mask_fallback: bool,
}

impl ProtectionSidecar {
    pub fn of(key: &str, image_id: &str, bundle: &BackendBundle, cfg: &AttackConfig, r: &ProtectionResult) -> Self {
        Self {
            key: key.to_string(),
            image_id: image_id.to_string(),
            method: r.method_tag.clone(),
            backend_id: bundle.id.clone(),
            config_hash: cfg.hash(),
            epsilon: r.perturbation.epsilon,
            linf: r.linf(),
            steps: r.loss_trace.len(),
            initial_objective: r.initial_losses().objective,
            final_objective: r.final_losses.objective,
            final_terms: r.final_losses.terms.clone(),
            mask_fallback: r.mask_fallback,
        }
    }
}

/// Cache key over image content, method, attack config and backend.
pub fn protection_key(image: &ImageTensor, method: AttackMethod, cfg: &AttackConfig, bundle: &BackendBundle) -> String {
    let mut bytes = Vec::with_capacity(image.len() * 8 + 128);
    bytes.extend_from_slice(&(image.height() as u64).to_le_bytes());
    bytes.extend_from_slice(&(image.width() as u64).to_le_bytes());
    for v in image.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(method.name().as_bytes());
    bytes.extend_from_slice(serde_json::to_string(cfg).expect("config serialises").as_bytes());
    bytes.extend_from_slice(bundle.id.as_bytes());
    hex_digest(&bytes)[..24].to_string()
}

/// Paths of one cached protection: protected PNG, sidecar, full result.
pub fn cache_paths(dir: &Path, image_id: &str, method: AttackMethod, key: &str) -> [PathBuf; 3] {
    let stem = format!("{image_id}.{}.{key}", method.name());
    [
        dir.join(format!("{stem}.png")),
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.result.json")),
    ]
}

fn protect_cached(
    bundle: &BackendBundle,
    id: &str,
    x: &ImageTensor,
    method: AttackMethod,
    cfg: &AttackConfig,
    cache: Option<&Path>,
) -> Result<ProtectionResult> {
    let Some(dir) = cache else {
        return protect(bundle, method, x, cfg);
    };
    let key = protection_key(x, method, cfg, bundle);
    let [png, sidecar, full] = cache_paths(dir, id, method, &key);
    if full.exists() {
        let text = std::fs::read_to_string(&full)?;
        if let Ok(r) = serde_json::from_str::<ProtectionResult>(&text) {
            log::debug!("cache hit {}", full.display());
            return Ok(r);
        }
        log::warn!("ignoring unreadable cache entry {}", full.display());
    }
    let r = protect(bundle, method, x, cfg)?;
    std::fs::create_dir_all(dir)?;
    write_png(&png, &r.protected)?;
    let side = ProtectionSidecar::of(&key, id, bundle, cfg, &r);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&side)? + "\n")?;
    std::fs::write(&full, serde_json::to_string(&r)?)?;
    Ok(r)
}

/// Protects every image with every method, reusing cached results.
pub fn run_protection(bundle: &BackendBundle, plan: &ExperimentPlan) -> Result<ProtectionSet> {
    let jobs: Vec<(usize, AttackMethod)> = (0..plan.images.len())
        .flat_map(|i| plan.methods.iter().map(move |m| (i, *m)))
        .collect();
    let results = par_map(plan.jobs, &jobs, |(i, m)| {
        let (id, x) = &plan.images[*i];
        protect_cached(bundle, id, x, *m, &plan.attack, plan.cache.as_deref())
    })?;
    Ok(jobs
        .into_iter()
        .zip(results)
        .map(|((i, m), r)| ((plan.images[i].0.clone(), m), r))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutput {
    pub image_id: String,
    pub prompt_id: String,
    /// `None` for the unprotected baseline.
    pub method: Option<AttackMethod>,
    pub seed: u64,
    pub purification: String,
    pub edit_stream: String,
    pub edited: ImageTensor,
}

/// Editor stream for one (image, prompt, seed); independent of the method so
/// the baseline and every defense are edited with the same randomness.
pub fn edit_stream(image_id: &str, prompt_id: &str, seed: u64) -> RngState {
    RngState::new(seed, format!("edit/{image_id}/{prompt_id}"))
}

fn purify_stream(image_id: &str, prompt_id: &str, seed: u64, purification: &str) -> RngState {
    RngState::new(seed, format!("purify/{image_id}/{prompt_id}/{purification}"))
}

/// Purifies (when requested) and edits the source and every protected
/// version for each (image, prompt, seed, purification).
pub fn run_edits(bundle: &BackendBundle, plan: &ExperimentPlan, protections: &ProtectionSet) -> Result<Vec<EditOutput>> {
    let mut jobs = Vec::new();
    for (i, (image_id, _)) in plan.images.iter().enumerate() {
        for p in 0..plan.prompts.len() {
            for &seed in &plan.seeds {
                for (s, _) in plan.purifications.iter().enumerate() {
                    jobs.push((i, p, seed, s, None));
                    for &m in &plan.methods {
                        if !protections.contains_key(&(image_id.clone(), m)) {
                            return Err(Error::Dataset(format!("no protection for {image_id} / {m}")));
                        }
                        jobs.push((i, p, seed, s, Some(m)));
                    }
                }
            }
        }
    }
    par_map(plan.jobs, &jobs, |&(i, p, seed, s, method)| {
        let (image_id, source) = &plan.images[i];
        let prompt = &plan.prompts[p];
        let spec = &plan.purifications[s];
        let input = match method {
            None => source,
            Some(m) => &protections[&(image_id.clone(), m)].protected,
        };
        let purified = purify(input, spec, &purify_stream(image_id, &prompt.id, seed, &spec.name()))?;
        let stream = edit_stream(image_id, &prompt.id, seed);
        let edited = bundle.edit(&purified, &prompt.text, &plan.edit_params, &stream)?;
        Ok(EditOutput {
            image_id: image_id.clone(),
            prompt_id: prompt.id.clone(),
            method,
            seed,
            purification: spec.name(),
            edit_stream: format!("{}#{}", stream.label, stream.seed),
            edited,
        })
    })
}

/// Scores every edit. PSNR, SSIM and LPIPS compare the baseline edit with the
/// defense edit of the same (image, prompt, seed, purification) and are null
/// on baseline rows; CLIP-S, CLIP-SD, CLIP-I and FR are measured against the
/// prompt, its description and the unprotected source.
pub fn evaluate(
    bundle: &BackendBundle,
    plan: &ExperimentPlan,
    protections: &ProtectionSet,
    edits: &[EditOutput],
) -> Result<Vec<EvaluationRecord>> {
    let baseline: HashMap<(&str, &str, u64, &str), &ImageTensor> = edits
        .iter()
        .filter(|e| e.method.is_none())
        .map(|e| ((e.image_id.as_str(), e.prompt_id.as_str(), e.seed, e.purification.as_str()), &e.edited))
        .collect();
    let sources: HashMap<&str, &ImageTensor> = plan.images.iter().map(|(id, x)| (id.as_str(), x)).collect();
    let prompts: HashMap<&str, &Prompt> = plan.prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let backbone = bundle.feat.family().name().to_string();
    par_map(plan.jobs, edits, |e| {
        let source = sources[e.image_id.as_str()];
        let prompt = prompts[e.prompt_id.as_str()];
        let mut flags = Vec::new();
        let mut values: BTreeMap<String, Option<f64>> = Metric::ALL.iter().map(|m| (m.name().to_string(), None)).collect();
        let mut set = |m: Metric, v: f64| {
            values.insert(m.name().to_string(), Some(v));
        };

        if let Some(m) = e.method {
            let reference = baseline
                .get(&(e.image_id.as_str(), e.prompt_id.as_str(), e.seed, e.purification.as_str()))
                .ok_or_else(|| Error::Dataset(format!("missing baseline edit for {}/{}", e.image_id, e.prompt_id)))?;
            let psnr = metrics::psnr(reference, &e.edited)?;
            if psnr.fallback {
                flags.push(RecordFlag::PsnrCapped);
            }
            set(Metric::Psnr, psnr.value);
            set(Metric::Ssim, metrics::ssim(reference, &e.edited)?);
            set(Metric::Lpips, metrics::lpips(bundle, reference, &e.edited)?);
            if protections[&(e.image_id.clone(), m)].mask_fallback {
                flags.push(RecordFlag::FaceMaskFallback);
            }
        }
        let cs = metrics::clip_s(bundle, source, &e.edited, &prompt.text)?;
        if cs.fallback {
            flags.push(RecordFlag::ClipSZeroShift);
        }
        set(Metric::ClipS, cs.value);
        match &prompt.description {
            Some(d) => set(Metric::ClipSd, metrics::clip_sd(bundle, &e.edited, d)?),
            None => flags.push(RecordFlag::MissingDescription),
        }
        set(Metric::ClipI, metrics::clip_i(bundle, source, &e.edited)?);
        set(Metric::Fr, metrics::fr_score(bundle, source, &e.edited)?);

        let method = e.method.map_or(NO_DEFENSE.to_string(), |m| m.name().to_string());
        let variant = if e.method.is_some() { plan.variant.clone() } else { String::new() };
        let mut record_id = format!("{}/{}/{}/s{}/{}", e.image_id, e.prompt_id, method, e.seed, e.purification);
        if !variant.is_empty() {
            record_id = format!("{variant}/{record_id}");
        }
        Ok(EvaluationRecord {
            record_id,
            variant,
            image_id: e.image_id.clone(),
            prompt_id: e.prompt_id.clone(),
            category: prompt.category,
            method,
            seed: e.seed,
            purification: e.purification.clone(),
            edit_stream: e.edit_stream.clone(),
            epsilon: e.method.map(|_| plan.attack.epsilon),
            backbone: backbone.clone(),
            metrics: values,
            flags,
        })
    })
}

/// The whole pipeline with one bundle.
pub fn run_plan(bundle: &BackendBundle, plan: &ExperimentPlan) -> Result<Vec<EvaluationRecord>> {
    run_plan_with(bundle, bundle, plan)
}

/// Protects with `attack_bundle`; edits and scores with `eval_bundle`.
/// Records carry the attack bundle's feature family as their backbone.
pub fn run_plan_with(
    attack_bundle: &BackendBundle,
    eval_bundle: &BackendBundle,
    plan: &ExperimentPlan,
) -> Result<Vec<EvaluationRecord>> {
    for (_, x) in &plan.images {
        attack_bundle.check_input(x)?;
    }
    let protections = run_protection(attack_bundle, plan)?;
    let edits = run_edits(eval_bundle, plan, &protections)?;
    let mut records = evaluate(eval_bundle, plan, &protections, &edits)?;
    let backbone = attack_bundle.feat.family().name();
    for r in records.iter_mut().filter(|r| !r.is_baseline()) {
        r.backbone = backbone.to_string();
    }
    Ok(records)
}
