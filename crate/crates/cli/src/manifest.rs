//! Manifest and label-sidecar CSV files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use avd_core::evaluation::ChunkLabel;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// As written in the manifest; used as the chunk source id.
    pub path: String,
    /// `path` resolved against the manifest's directory.
    pub resolved: PathBuf,
    pub label: u8,
    pub group: String,
}

#[derive(Deserialize)]
struct RawRow {
    path: String,
    label: String,
    #[serde(default)]
    group: Option<String>,
}

pub fn parse_label(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
        "0" | "non-violence" | "nonviolence" => Some(0),
        "1" | "violence" => Some(1),
        _ => None,
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        let line = i + 2;
        let raw = rec.map_err(|e| CliError::data(format!("{} line {line}: {e}", path.display())))?;
        let label = parse_label(&raw.label).ok_or_else(|| {
            CliError::data(format!("{} line {line}: label {:?} is not 0/1/non-violence/violence", path.display(), raw.label))
        })?;
        if !seen.insert(raw.path.clone()) {
            return Err(CliError::data(format!("{} line {line}: duplicate path {:?}", path.display(), raw.path)));
        }
        let p = Path::new(&raw.path);
        let resolved = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let group = raw.group.filter(|g| !g.is_empty()).unwrap_or_else(|| raw.path.clone());
        rows.push(ManifestRow {
            path: raw.path,
            resolved,
            label,
            group,
        });
    }
    if rows.is_empty() {
        return Err(CliError::empty(format!("{} lists no audio files", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRow {
    pub chunk_id: String,
    pub label: u8,
    pub group: String,
}

pub fn write_labels(rows: &[LabelRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(e.to_string()))
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, ChunkLabel>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for rec in reader.deserialize::<RawLabel>() {
        let r = rec.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let label = parse_label(&r.label)
            .ok_or_else(|| CliError::data(format!("{}: bad label {:?} for {}", path.display(), r.label, r.chunk_id)))?;
        let group = r.group.filter(|g| !g.is_empty()).unwrap_or_else(|| source_of(&r.chunk_id).to_string());
        if out.insert(r.chunk_id.clone(), ChunkLabel { label, group }).is_some() {
            return Err(CliError::data(format!("{}: duplicate chunk id {}", path.display(), r.chunk_id)));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawLabel {
    chunk_id: String,
    label: String,
    #[serde(default)]
    group: Option<String>,
}

/// The source part of a `source#index` chunk id.
fn source_of(chunk_id: &str) -> &str {
    chunk_id.rsplit_once('#').map_or(chunk_id, |(s, _)| s)
}
