//! Layer manifests: one layer per line,
//!
//! ```text
//! name, w=<path>, x=<path>
//! name, w=<path>, h=<path>
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::LayerRecord;
use crate::error::{Error, Result};
use crate::tensor::io::read_tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Calibration {
    Features(PathBuf),
    Hessian(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub weights: PathBuf,
    pub calibration: Calibration,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        let (key, path) = match &self.calibration {
            Calibration::Features(p) => ("x", p),
            Calibration::Hessian(p) => ("h", p),
        };
        format!(
            "{}, w={}, {}={}",
            self.name,
            self.weights.display(),
            key,
            path.display()
        )
    }

    /// Loads the referenced tensors.
    pub fn load(&self) -> Result<LayerRecord> {
        let load = || -> Result<LayerRecord> {
            let w = read_tensor(&self.weights)?;
            match &self.calibration {
                Calibration::Features(p) => LayerRecord::with_features(&self.name, w, read_tensor(p)?),
                Calibration::Hessian(p) => LayerRecord::with_hessian(&self.name, w, read_tensor(p)?),
            }
        };
        load().map_err(|e| e.in_layer(&self.name))
    }
}

fn parse_line(line: &str, base: &Path, lineno: usize) -> Result<ManifestEntry> {
    let bad = |msg: &str| Error::Data(format!("manifest line {lineno}: {msg}"));
    let mut parts = line.split(',').map(str::trim);
    let name = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing name"))?;
    let (mut w, mut cal) = (None, None);
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| bad(&format!("expected key=path, got `{part}`")))?;
        let path = base.join(v.trim());
        match k.trim() {
            "w" if w.is_none() => w = Some(path),
            "x" if cal.is_none() => cal = Some(Calibration::Features(path)),
            "h" if cal.is_none() => cal = Some(Calibration::Hessian(path)),
            "w" | "x" | "h" => return Err(bad("duplicate or conflicting key")),
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
    }
    Ok(ManifestEntry {
        name: name.to_string(),
        weights: w.ok_or_else(|| bad("missing w="))?,
        calibration: cal.ok_or_else(|| bad("missing x= or h="))?,
    })
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = parse_line(line, base, i + 1)?;
        if out.iter().any(|e| e.name == entry.name) {
            return Err(Error::Data(format!(
                "manifest line {}: duplicate layer name `{}`",
                i + 1,
                entry.name
            )));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Writes entries with paths made relative to the manifest directory where
/// possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let mut s = String::new();
    for e in entries {
        let e = ManifestEntry {
            name: e.name.clone(),
            weights: rel(&e.weights),
            calibration: match &e.calibration {
                Calibration::Features(p) => Calibration::Features(rel(p)),
                Calibration::Hessian(p) => Calibration::Hessian(rel(p)),
            },
        };
        let _ = writeln!(s, "{}", e.to_line());
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_layers(entries: &[ManifestEntry]) -> Result<Vec<LayerRecord>> {
    entries.iter().map(ManifestEntry::load).collect()
}
