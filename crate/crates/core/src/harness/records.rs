//! Evaluation records and their JSON-lines store.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::PromptCategory;
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Method label of the unprotected baseline.
pub const NO_DEFENSE: &str = "no_defense";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    /// Defense and baseline edits were identical; PSNR is the cap.
    PsnrCapped,
    /// The edit left the CLIP image embedding unchanged; CLIP-S is 0.
    ClipSZeroShift,
    /// No face was found; the protection mask covered the whole image.
    FaceMaskFallback,
    /// The prompt has no description; CLIP-SD is null.
    MissingDescription,
}

/// One row: a single (image, prompt, method, seed, purification) edit scored
/// on all seven metrics. Metrics that do not apply are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub record_id: String,
    /// Sweep variant (`eps=0.01`, `backbone=vgg_family`); empty for plain runs.
    pub variant: String,
    pub image_id: String,
    pub prompt_id: String,
    pub category: PromptCategory,
    pub method: String,
    pub seed: u64,
    pub purification: String,
    /// Label of the editor random stream; shared by every method for the same
    /// (image, prompt, seed).
    pub edit_stream: String,
    /// Perturbation budget; `None` for the baseline.
    pub epsilon: Option<f64>,
    pub backbone: String,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub flags: Vec<RecordFlag>,
}

impl EvaluationRecord {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        self.metrics.get(m.name()).copied().flatten()
    }

    pub fn is_baseline(&self) -> bool {
        self.method == NO_DEFENSE
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[EvaluationRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn records_to_jsonl(records: &[EvaluationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serialises"));
        s.push('\n');
    }
    s
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("record line {}: {e}", n + 1)))?;
        out.push(r);
    }
    Ok(out)
}
