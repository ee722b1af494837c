//! Dataset manifests.
//!
//! A manifest is UTF-8 text with one record per line and four tab-separated
//! fields:
//!
//! ```text
//! # pifnet-manifest v1
//! path<TAB>label<TAB>subject<TAB>split
//! ```
//!
//! `path` is relative to the manifest's directory (absolute paths are kept as
//! is), `label` is `0` or `1`, `split` is `train`, `val`, `test` or `-` for
//! unassigned. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::split::{check_no_leakage, Split};
use crate::data::volume::read_volume;
use crate::data::VolumeRecord;
use crate::error::{Error, Result};

pub const HEADER: &str = "# pifnet-manifest v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u8,
    pub subject: String,
    pub split: Option<Split>,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for e in entries {
        let split = e.split.map_or("-".to_string(), |s| s.to_string());
        writeln!(out, "{}\t{}\t{}\t{}", e.path.display(), e.label, e.subject, split).expect("write to string");
    }
    out
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let err = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [file, label, subject, split] = fields[..] else {
            return Err(err(n, format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(err(n, format!("label `{other}` is not 0 or 1"))),
        };
        if subject.is_empty() {
            return Err(err(n, "empty subject id".into()));
        }
        let split = match split {
            "-" => None,
            s => Some(s.parse::<Split>().map_err(|e| err(n, e.to_string()))?),
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(file),
            label,
            subject: subject.to_string(),
            split,
        });
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    fs::write(path, format_manifest(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Reads the manifest and every volume it lists, then checks for leakage.
pub fn load_dataset(manifest: &Path) -> Result<Vec<VolumeRecord>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let file = if e.path.is_absolute() { e.path } else { base.join(e.path) };
            Ok(VolumeRecord {
                volume: read_volume(&file)?,
                label: e.label,
                subject: e.subject,
                split: e.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_no_leakage(&records)?;
    Ok(records)
}
