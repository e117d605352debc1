//! TOML configuration: `[backend]`, `[attack]`, `[edit]`, `[purify]`, `[plan]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackMethod};
use crate::backends::{BackendConfig, EditParams, FeatureFamily};
use crate::error::{Error, Result};
use crate::purification::PurifySpec;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendConfig,
    pub attack: AttackSection,
    pub edit: EditParams,
    pub purify: PurifyConfig,
    pub plan: PlanConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.config.validate()?;
        self.edit.validate()?;
        for spec in self.purify.specs()? {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub name: AttackMethod,
    #[serde(flatten)]
    pub config: AttackConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            name: AttackMethod::Facelock,
            config: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalPurifier {
    pub command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifyConfig {
    /// Short names: `none`, `blur`, `rotate`, `jpeg60`, `jpeg75`, `jpeg90`,
    /// `color_jitter`, `external`.
    pub kinds: Vec<String>,
    pub external: ExternalPurifier,
    /// Colour-jitter factor ranges (`1 ± range`).
    pub jitter_brightness: f64,
    pub jitter_contrast: f64,
    pub jitter_saturation: f64,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self {
            kinds: vec!["none".into()],
            external: ExternalPurifier::default(),
            jitter_brightness: 0.2,
            jitter_contrast: 0.2,
            jitter_saturation: 0.2,
        }
    }
}

impl PurifyConfig {
    pub fn specs(&self) -> Result<Vec<PurifySpec>> {
        self.kinds
            .iter()
            .map(|k| {
                Ok(match k.parse::<PurifySpec>()? {
                    PurifySpec::External { .. } => PurifySpec::External {
                        command: self.external.command.clone(),
                    },
                    PurifySpec::ColorJitter { .. } => PurifySpec::ColorJitter {
                        brightness: self.jitter_brightness,
                        contrast: self.jitter_contrast,
                        saturation: self.jitter_saturation,
                    },
                    other => other,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Image directory, or `synthetic:N` for N procedural portraits.
    pub dataset: Option<String>,
    /// Tab-separated prompt catalog; the bundled 25 prompts when unset.
    pub catalog: Option<PathBuf>,
    /// Prompt ids; all catalog prompts when empty.
    pub prompts: Vec<String>,
    pub methods: Vec<AttackMethod>,
    pub seeds: Vec<u64>,
    pub budgets: Vec<f64>,
    pub designs: Vec<AttackMethod>,
    pub backbones: Vec<FeatureFamily>,
    /// Protection cache directory.
    pub cache: Option<PathBuf>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            catalog: None,
            prompts: Vec::new(),
            methods: vec![AttackMethod::Facelock],
            seeds: (0..5).collect(),
            budgets: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            designs: AttackMethod::DESIGNS.to_vec(),
            backbones: FeatureFamily::ALL.to_vec(),
            cache: None,
        }
    }
}
