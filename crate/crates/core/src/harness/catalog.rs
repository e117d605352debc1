//! Editing prompts, grouped by what they change.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const DEFAULT_CATALOG: &str = include_str!("../../data/prompts.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptCategory {
    FacialFeature,
    Accessory,
    Background,
}

impl PromptCategory {
    pub const ALL: [PromptCategory; 3] = [
        PromptCategory::FacialFeature,
        PromptCategory::Accessory,
        PromptCategory::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptCategory::FacialFeature => "facial_feature",
            PromptCategory::Accessory => "accessory",
            PromptCategory::Background => "background",
        }
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown prompt category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub category: PromptCategory,
    /// Description of the intended result, used by CLIP-SD.
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCatalog {
    pub entries: Vec<Prompt>,
}

impl Default for PromptCatalog {
    /// The 25 evaluation prompts: 10 facial-feature, 8 accessory and
    /// 7 background edits.
    fn default() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog parses")
    }
}

impl PromptCatalog {
    /// Tab-separated `id, category, prompt[, description]`; `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Prompt> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::Dataset(format!("catalog line {}: expected at least 3 columns", n + 1)));
            }
            let id = cols[0].trim().to_string();
            if entries.iter().any(|p| p.id == id) {
                return Err(Error::Dataset(format!("catalog line {}: duplicate id `{id}`", n + 1)));
            }
            let text = cols[2].trim().to_string();
            if text.is_empty() {
                return Err(Error::Dataset(format!("catalog line {}: empty prompt", n + 1)));
            }
            entries.push(Prompt {
                id,
                text,
                category: cols[1].trim().parse()?,
                description: cols.get(3).map(|d| d.trim().to_string()).filter(|d| !d.is_empty()),
            });
        }
        if entries.is_empty() {
            return Err(Error::Dataset("prompt catalog is empty".into()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.entries.iter().find(|p| p.id == id)
    }

    /// Entries with the given ids, in the order given; all entries when `ids`
    /// is empty.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Prompt>> {
        if ids.is_empty() {
            return Ok(self.entries.clone());
        }
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| invalid(format!("unknown prompt id `{id}`")))
            })
            .collect()
    }

    pub fn by_category(&self, category: PromptCategory) -> impl Iterator<Item = &Prompt> {
        self.entries.iter().filter(move |p| p.category == category)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_counts() {
        let c = PromptCatalog::default();
        assert_eq!(c.entries.len(), 25);
        let count = |cat| c.by_category(cat).count();
        assert_eq!(count(PromptCategory::FacialFeature), 10);
        assert_eq!(count(PromptCategory::Accessory), 8);
        assert_eq!(count(PromptCategory::Background), 7);
        assert!(c.entries.iter().all(|p| p.description.is_some()));
        assert_eq!(c.entries[0].text, "Turn the person's hair pink");
        assert_eq!(c.get("background_07").unwrap().text, "Let the person stand under the moon");
    }

    #[test]
    fn select_keeps_order_and_rejects_unknown() {
        let c = PromptCatalog::default();
        let ids = vec!["accessory_04".to_string(), "facial_01".to_string()];
        let s = c.select(&ids).unwrap();
        assert_eq!(s[0].id, "accessory_04");
        assert_eq!(s[1].category, PromptCategory::FacialFeature);
        assert!(c.select(&["nope".to_string()]).is_err());
    }

    #[test]
    fn parse_rejects_bad_rows() {
        assert!(PromptCatalog::parse("a\tfacial_feature").is_err());
        assert!(PromptCatalog::parse("a\tshoes\tWear shoes").is_err());
        assert!(PromptCatalog::parse("a\taccessory\tx\na\taccessory\ty").is_err());
        let c = PromptCatalog::parse("a\taccessory\tWear a hat").unwrap();
        assert_eq!(c.entries[0].description, None);
    }
}
