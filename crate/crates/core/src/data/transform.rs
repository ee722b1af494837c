//! Intensity normalization and training-time augmentation of `(C, D, H, W)`
//! volumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest translation per axis, in voxels.
pub const MAX_SHIFT: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalized {
    Scaled,
    /// Maximum was not positive; the volume is unchanged.
    Degenerate,
}

/// Divides by the maximum intensity.
pub fn normalize_max(volume: &Tensor) -> (Tensor, Normalized) {
    let max = volume.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        (volume.map(|v| v / max), Normalized::Scaled)
    } else {
        log::warn!("volume maximum is {max}; left unnormalized");
        (volume.clone(), Normalized::Degenerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    #[default]
    None,
    Translate,
    Flip,
    Both,
}

impl AugmentMode {
    pub fn flips(self) -> bool {
        matches!(self, AugmentMode::Flip | AugmentMode::Both)
    }

    pub fn translates(self) -> bool {
        matches!(self, AugmentMode::Translate | AugmentMode::Both)
    }

    /// Mirroring moves content between patches, so PIF models may only translate.
    pub fn check_model(self, spec: &ModelSpec) -> Result<()> {
        if self.flips() && spec.has_pif() {
            return Err(Error::Config(format!(
                "augmentation `{self}` flips volumes, but model `{}` has a PIF layer; \
                 patch-individual filters need every patch to keep the same content, \
                 so PIF models allow translation only",
                spec.name
            )));
        }
        Ok(())
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::None => "none",
            AugmentMode::Translate => "translate",
            AugmentMode::Flip => "flip",
            AugmentMode::Both => "both",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(AugmentMode::None),
            "translate" => Ok(AugmentMode::Translate),
            "flip" => Ok(AugmentMode::Flip),
            "both" => Ok(AugmentMode::Both),
            other => Err(Error::Config(format!(
                "unknown augmentation mode `{other}` (none, translate, flip, both)"
            ))),
        }
    }
}

fn spatial(volume: &Tensor) -> Result<(usize, [usize; 3])> {
    match *volume.shape() {
        [c, d, h, w] => Ok((c, [d, h, w])),
        ref s => Err(Error::InvalidShape(format!("volumes are (C, D, H, W), got {s:?}"))),
    }
}

/// Moves voxel `(i, j, k)` to `(i + dz, j + dy, k + dx)`; vacated voxels are zero.
pub fn translate(volume: &Tensor, shift: [i64; 3]) -> Result<Tensor> {
    let (c, [d, h, w]) = spatial(volume)?;
    let mut out = Tensor::zeros(volume.shape());
    let src = volume.data();
    let dst = out.data_mut();
    let plane = d * h * w;
    let range = |n: usize, s: i64| -> (usize, usize) {
        let n = n as i64;
        ((0.max(-s)).min(n) as usize, (n.min(n - s)).max(0) as usize)
    };
    let (z0, z1) = range(d, shift[0]);
    let (y0, y1) = range(h, shift[1]);
    let (x0, x1) = range(w, shift[2]);
    if x0 >= x1 {
        return Ok(out);
    }
    for ch in 0..c {
        for z in z0..z1 {
            let tz = (z as i64 + shift[0]) as usize;
            for y in y0..y1 {
                let ty = (y as i64 + shift[1]) as usize;
                let s = ch * plane + (z * h + y) * w;
                let t = ch * plane + (tz * h + ty) * w;
                let tx0 = (x0 as i64 + shift[2]) as usize;
                dst[t + tx0..t + tx0 + (x1 - x0)].copy_from_slice(&src[s + x0..s + x1]);
            }
        }
    }
    Ok(out)
}

/// Mirrors along the width (sagittal) axis.
pub fn flip_width(volume: &Tensor) -> Result<Tensor> {
    let (_, [_, _, w]) = spatial(volume)?;
    let mut out = volume.clone();
    for row in out.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Random shift in `[-MAX_SHIFT, MAX_SHIFT]` per axis and/or a mirror with
/// probability one half, per `mode`.
pub fn augment(volume: &Tensor, mode: AugmentMode, rng: &mut Rng) -> Result<Tensor> {
    let mut out = volume.clone();
    if mode.translates() {
        let shift = [0; 3].map(|_: i64| rng.int_inclusive(-MAX_SHIFT, MAX_SHIFT));
        out = translate(&out, shift)?;
    }
    if mode.flips() && rng.bernoulli(0.5) {
        out = flip_width(&out)?;
    }
    Ok(out)
}
