//! Synthetic spatially aligned volumes.
//!
//! Every sample is a shared smooth template (an ellipsoidal "head" modulated by
//! a few low-frequency waves), a per-subject smooth variation, Gaussian noise
//! and, for class 1, Gaussian blobs at fixed signal sites whose centers are
//! jittered per sample. Optional distractor blobs appear at random positions in
//! both classes. Intensities are clipped at zero and rounded to `f32`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::VolumeRecord;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const TEMPLATE_STREAM: u64 = 1;
const SUBJECT_STREAM_BASE: u64 = 1 << 20;

/// A class-1 signal location, in voxel coordinates `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub center: [f64; 3],
    pub radius: f64,
    pub amplitude: f64,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [z, y, x] = self.center;
        write!(f, "{z},{y},{x},{},{}", self.radius, self.amplitude)
    }
}

impl FromStr for Site {
    type Err = Error;

    /// `z,y,x,radius,amplitude`
    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("invalid site `{s}`")))?;
        match v[..] {
            [z, y, x, radius, amplitude] => Ok(Site {
                center: [z, y, x],
                radius,
                amplitude,
            }),
            _ => Err(Error::Config(format!(
                "site `{s}` needs five numbers: z,y,x,radius,amplitude"
            ))),
        }
    }
}

/// Parses `;`-separated sites.
pub fn parse_sites(s: &str) -> Result<Vec<Site>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_sites(sites: &[Site]) -> String {
    sites.iter().map(Site::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `(D, H, W)`.
    pub extents: [usize; 3],
    pub n_per_class: usize,
    pub sites: Vec<Site>,
    /// Mean intensity inside the head.
    pub base: f64,
    /// Amplitude of the template's low-frequency waves.
    pub template_contrast: f64,
    pub template_waves: usize,
    /// Amplitude of the per-subject smooth variation.
    pub subject_variation: f64,
    pub noise_sigma: f64,
    /// Bound on the per-sample site displacement, per axis, in voxels.
    pub jitter: f64,
    /// Blobs at uniformly random positions, in both classes.
    pub distractors: usize,
    pub records_per_subject: usize,
}

impl SynthSpec {
    /// A 32³ spec with two signal sites.
    pub fn desk(n_per_class: usize) -> Self {
        SynthSpec {
            extents: [32, 32, 32],
            n_per_class,
            sites: vec![
                Site {
                    center: [12.0, 13.0, 10.0],
                    radius: 2.5,
                    amplitude: 0.35,
                },
                Site {
                    center: [19.0, 18.0, 21.0],
                    radius: 2.5,
                    amplitude: -0.3,
                },
            ],
            base: 0.6,
            template_contrast: 0.25,
            template_waves: 4,
            subject_variation: 0.1,
            noise_sigma: 0.1,
            jitter: 1.0,
            distractors: 0,
            records_per_subject: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.extents.contains(&0) {
            return bad(format!("extents {:?} must be positive", self.extents));
        }
        if self.n_per_class == 0 || self.records_per_subject == 0 {
            return bad("sample and per-subject record counts must be positive".into());
        }
        let finite = [
            self.base,
            self.template_contrast,
            self.subject_variation,
            self.noise_sigma,
            self.jitter,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("base, contrast, variation, noise and jitter must be finite and non-negative".into());
        }
        for (i, s) in self.sites.iter().enumerate() {
            let inside = (0..3).all(|a| s.center[a] >= 0.0 && s.center[a] <= (self.extents[a] - 1) as f64);
            if !inside {
                return bad(format!("site {i} at {:?} lies outside extents {:?}", s.center, self.extents));
            }
            if !(s.radius > 0.0 && s.radius.is_finite()) || !s.amplitude.is_finite() {
                return bad(format!("site {i} needs a positive radius and finite amplitude"));
            }
        }
        Ok(())
    }

    /// Jitter must stay below the patch size of any PIF layer trained on the data.
    pub fn check_patch_size(&self, patch_size: usize) -> Result<()> {
        if self.jitter >= patch_size as f64 {
            return Err(Error::Config(format!(
                "site jitter {} is not below patch size {patch_size}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Plane wave `amp · cos(2π k·p / extents + phase)`.
#[derive(Debug, Clone, Copy)]
struct Wave {
    k: [f64; 3],
    phase: f64,
    amp: f64,
}

fn draw_waves(n: usize, amp: f64, max_cycles: i64, rng: &mut Rng) -> Vec<Wave> {
    (0..n)
        .map(|_| Wave {
            k: [0; 3].map(|_: i32| rng.int_inclusive(-max_cycles, max_cycles) as f64),
            phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            amp: amp * rng.uniform_range(0.5, 1.0) / (n.max(1) as f64).sqrt(),
        })
        .collect()
}

fn wave_field(waves: &[Wave], extents: [usize; 3], p: [f64; 3]) -> f64 {
    waves
        .iter()
        .map(|w| {
            let arg: f64 = (0..3).map(|a| w.k[a] * p[a] / extents[a] as f64).sum();
            w.amp * (std::f64::consts::TAU * arg + w.phase).cos()
        })
        .sum()
}

/// Smooth ellipsoidal support in `[0, 1]`.
fn head_mask(extents: [usize; 3], p: [f64; 3]) -> f64 {
    let r2: f64 = (0..3)
        .map(|a| {
            let c = (extents[a] as f64 - 1.0) / 2.0;
            let semi = 0.46 * extents[a] as f64;
            ((p[a] - c) / semi).powi(2)
        })
        .sum();
    1.0 / (1.0 + ((r2.sqrt() - 1.0) * 12.0).exp())
}

fn blob(center: [f64; 3], radius: f64, p: [f64; 3]) -> f64 {
    let d2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
    (-d2 / (2.0 * radius * radius)).exp()
}

/// The noise-free template shared by all samples of `(spec, seed)`.
pub fn template(spec: &SynthSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = Rng::stream(seed, TEMPLATE_STREAM);
    let waves = draw_waves(spec.template_waves, spec.template_contrast, 2, &mut rng);
    Ok(fill(spec.extents, |p| {
        head_mask(spec.extents, p) * (spec.base + wave_field(&waves, spec.extents, p))
    }))
}

fn fill(extents: [usize; 3], mut f: impl FnMut([f64; 3]) -> f64) -> Tensor {
    let [d, h, w] = extents;
    let mut data = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                data.push(f([z as f64, y as f64, x as f64]));
            }
        }
    }
    Tensor::new(vec![1, d, h, w], data).expect("extents are positive")
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:04}")
}

/// Generates `2 · n_per_class` records, alternating labels by subject.
pub fn generate_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<VolumeRecord>> {
    spec.validate()?;
    let base = template(spec, seed)?;
    let per_class_subjects = spec.n_per_class.div_ceil(spec.records_per_subject);
    let mut records = Vec::with_capacity(2 * spec.n_per_class);
    let mut made = [0usize; 2];
    for subject in 0..2 * per_class_subjects {
        let label = (subject % 2) as u8;
        let mut rng = Rng::stream(seed, SUBJECT_STREAM_BASE + subject as u64);
        let variation = draw_waves(3, spec.subject_variation, 1, &mut rng);
        for _ in 0..spec.records_per_subject {
            if made[label as usize] == spec.n_per_class {
                break;
            }
            made[label as usize] += 1;
            let volume = sample(spec, &base, &variation, label, &mut rng);
            records.push(VolumeRecord {
                volume,
                label,
                subject: subject_id(subject),
                split: None,
            });
        }
    }
    Ok(records)
}

fn sample(spec: &SynthSpec, base: &Tensor, variation: &[Wave], label: u8, rng: &mut Rng) -> Tensor {
    let e = spec.extents;
    let mut blobs: Vec<([f64; 3], f64, f64)> = Vec::new();
    for s in &spec.sites {
        let jitter = [0; 3].map(|_: i32| rng.uniform_range(-spec.jitter, spec.jitter));
        if label == 1 {
            let c = [0, 1, 2].map(|a| s.center[a] + jitter[a]);
            blobs.push((c, s.radius, s.amplitude));
        }
    }
    let template_sites = spec.sites.first().copied();
    for _ in 0..spec.distractors {
        let c = [0, 1, 2].map(|a| rng.uniform_range(0.0, (e[a] - 1) as f64));
        let (radius, amp) = template_sites.map_or((2.0, 0.3), |s| (s.radius, s.amplitude));
        blobs.push((c, radius, amp));
    }
    let mut i = 0;
    fill(e, |p| {
        let mask = head_mask(e, p);
        let mut v = base.data()[i] + mask * wave_field(variation, e, p);
        for &(c, r, a) in &blobs {
            v += a * mask * blob(c, r, p);
        }
        v += spec.noise_sigma * rng.normal();
        i += 1;
        f64::from(v.max(0.0) as f32)
    })
}

/// Mean intensity within `site.radius` of the site center.
pub fn site_mean(volume: &Tensor, site: &Site) -> f64 {
    let s = volume.shape();
    let (d, h, w) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let (mut sum, mut n) = (0.0, 0usize);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64, y as f64, x as f64];
                let d2: f64 = (0..3).map(|a| (p[a] - site.center[a]).powi(2)).sum();
                if d2 <= site.radius * site.radius {
                    sum += volume.data()[(z * h + y) * w + x];
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
