//! Image-directory ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_image, ImageTensor};
use crate::synthetic::portrait;

/// An input that was left out, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<(String, ImageTensor)>,
    pub skipped: Vec<Skip>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Loads every PNG/JPEG in `dir` in filename order, resized (bilinear) to
/// `size x size`. Unreadable files are skipped with a warning; a directory
/// with no usable image is an error. The image id is the file stem.
pub fn load_dataset(dir: impl AsRef<Path>, size: usize) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match read_image(&path) {
            Ok(img) => images.push((id, img.resized(size, size))),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push(Skip {
                    item: path.display().to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no readable images in {}", dir.display())));
    }
    Ok(Dataset { images, skipped })
}

/// `synthetic:N` yields N procedural portraits; anything else is a directory.
pub fn load_source(source: &str, size: usize) -> Result<Dataset> {
    if let Some(n) = source.strip_prefix("synthetic:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Dataset(format!("bad synthetic dataset spec `{source}`")))?;
        if n == 0 {
            return Err(Error::Dataset("synthetic dataset needs at least one image".into()));
        }
        return Ok(Dataset {
            images: (0..n)
                .map(|i| (format!("synthetic_{i:03}"), portrait(size, size, i as u64)))
                .collect(),
            skipped: Vec::new(),
        });
    }
    load_dataset(source, size)
}
