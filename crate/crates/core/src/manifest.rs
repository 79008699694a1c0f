//! Line-delimited JSON dataset manifests.
//!
//! One record per line. Paths are relative to the directory holding the
//! manifest, so a dataset directory can be moved as a whole.

use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuSource {
    Measured,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub frame_id: String,
    /// Image path relative to the manifest directory.
    pub frame: String,
    pub timestamp_s: f64,
    pub mu: f64,
    pub source: MuSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_timestamp_s: Option<f64>,
    /// Segmentation mask path relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// Which labelling an ambiguous synthetic scene received (0 = none).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_id: Option<u8>,
}

impl ManifestRecord {
    pub fn frame_path(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.frame)
    }

    pub fn mask_path(&self, manifest_dir: &Path) -> Option<PathBuf> {
        self.mask.as_ref().map(|m| manifest_dir.join(m))
    }
}

pub fn render_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records always serialize");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, render_manifest(records)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: ManifestRecord = serde_json::from_str(l)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            if !(0.0..=1.0).contains(&rec.mu) {
                return Err(Error::format(
                    path,
                    format!("line {}: mu {} outside [0, 1]", i + 1, rec.mu),
                ));
            }
            Ok(rec)
        })
        .collect()
}

/// Directory a manifest's relative paths resolve against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    if let Ok(p) = path.canonicalize() {
        return Ok(p);
    }
    let base = std::env::current_dir().map_err(|e| Error::io(path, e))?;
    let mut out = PathBuf::new();
    for c in base.join(path).components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Ok(out)
}

/// `target` expressed relative to directory `base`, with `/` separators.
pub fn relative_path(target: &Path, base: &Path) -> Result<String> {
    let target = absolute(target)?;
    let base = absolute(base)?;
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = std::iter::repeat_n("..".to_string(), b.len() - common).collect();
    parts.extend(
        t[common..]
            .iter()
            .map(|c| c.as_os_str().to_string_lossy().into_owned()),
    );
    Ok(parts.join("/"))
}
