//! Datasets: synthetic generation, files, splits and preprocessing.

pub mod manifest;
pub mod split;
pub mod synth;
pub mod transform;
pub mod volume;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use manifest::{load_dataset, read_manifest, write_manifest, ManifestEntry};
pub use split::{check_no_leakage, split_subjects, Split, SplitFractions};
pub use synth::{generate_dataset, Site, SynthSpec};
pub use transform::{augment, normalize_max, AugmentMode};
pub use volume::{read_volume, write_volume};

/// One labeled volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRecord {
    /// `(C, D, H, W)`.
    pub volume: Tensor,
    pub label: u8,
    pub subject: String,
    pub split: Option<Split>,
}

/// Writes `volumes/NNNNN.pifv` for every record plus `manifest.tsv` in `dir`.
pub fn write_dataset(records: &[VolumeRecord], dir: &Path) -> Result<()> {
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let rel = Path::new("volumes").join(format!("{i:05}.pifv"));
        write_volume(&r.volume, &dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: r.label,
            subject: r.subject.clone(),
            split: r.split,
        });
    }
    write_manifest(&entries, &dir.join("manifest.tsv"))
}

/// Records of one split.
pub fn select(records: &[VolumeRecord], split: Split) -> Vec<&VolumeRecord> {
    records.iter().filter(|r| r.split == Some(split)).collect()
}
