//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored; every key may appear at most once and unknown keys are errors.
//!
//! | key | value | default |
//! |-----|-------|---------|
//! | `model.baseline` | preset or custom name | `desk-baseline-a` |
//! | `model.pif` | preset or custom name | `desk-pif-a` |
//! | `model.input` | `c,d,h,w` | preset input |
//! | `model.baseline.layers`, `model.pif.layers` | `\|`-separated layers | preset layers |
//! | `model.baseline.batch_size`, `model.pif.batch_size` | integer | preset batch size |
//! | `pif.patch_size`, `pif.kernel`, `pif.filters` | integer | PIF layer of `model.pif` |
//! | `pif.overlap` | `true` / `false` | PIF layer of `model.pif` |
//! | `train.lr`, `train.weight_decay` | number | baseline preset |
//! | `train.batch_size` | integer, sets both arms | unset |
//! | `train.patience`, `train.max_epochs`, `train.seed`, `train.repeats` | integer | 8, 100, 0, 10 |
//! | `train.normalize` | `true` / `false` | `true` |
//! | `augment.mode` | `none`, `translate`, `flip`, `both` | `none` |
//!
//! A custom name needs `model.<arm>.layers` and `model.input`; its batch
//! size, learning rate and weight decay default to 8, 0.001 and 0.0001.
//!
//! Layer syntax: `conv 8 k3 s1 p0`, `pool k3 s3`, `elu`, `dropout 0.3`,
//! `pif s5 k3 f6 overlap`, `flatten`, `linear 100`, `sigmoid`.

use std::collections::BTreeMap;
use std::fmt::Write;

use pifnet::data::AugmentMode;
use pifnet::model::{LayerSpec, ModelSpec};
use pifnet::presets::{preset, Preset};
use pifnet::training::TrainConfig;
use pifnet::{Error, Result};

const KEYS: [&str; 20] = [
    "model.baseline",
    "model.pif",
    "model.input",
    "model.baseline.layers",
    "model.pif.layers",
    "model.baseline.batch_size",
    "model.pif.batch_size",
    "pif.patch_size",
    "pif.kernel",
    "pif.filters",
    "pif.overlap",
    "train.lr",
    "train.weight_decay",
    "train.batch_size",
    "train.patience",
    "train.max_epochs",
    "train.seed",
    "train.repeats",
    "train.normalize",
    "augment.mode",
];

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub baseline: ModelSpec,
    pub pif: ModelSpec,
    pub baseline_batch: usize,
    pub pif_batch: usize,
    pub train: TrainConfig,
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

/// Splits `text` into key/value pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(config_err(format!("line {}: unknown key `{key}`", i + 1)));
        }
        if pairs.insert(key.to_string(), value.to_string()).is_some() {
            return Err(config_err(format!("line {}: `{key}` given twice", i + 1)));
        }
    }
    Ok(pairs)
}

fn parse_value<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    pairs
        .get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| config_err(format!("`{key}`: cannot parse `{v}`")))
        })
        .transpose()
}

fn parse_input(v: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| config_err(format!("`model.input`: cannot parse `{v}`")))?;
    parts
        .try_into()
        .map_err(|_| config_err(format!("`model.input` needs c,d,h,w, got `{v}`")))
}

/// A model spec with its preset batch size, learning rate and weight decay.
/// Names that are not presets need `<key>.layers` and `model.input`.
fn resolve_model(pairs: &BTreeMap<String, String>, key: &str, default: &str) -> Result<Preset> {
    let name = pairs.get(key).map(String::as_str).unwrap_or(default);
    let layers = pairs.get(&format!("{key}.layers"));
    let input = pairs.get("model.input").map(|v| parse_input(v)).transpose()?;
    let mut p = match (preset(name), layers, input) {
        (Some(p), _, _) => p,
        (None, Some(_), Some(input)) => {
            let d = TrainConfig::default();
            Preset {
                spec: ModelSpec::new(name, input, Vec::new()),
                batch_size: d.batch_size,
                lr: d.lr,
                weight_decay: d.weight_decay,
            }
        }
        (None, ..) => {
            return Err(config_err(format!(
                "`{key}`: `{name}` is not a preset; custom models need `{key}.layers` and `model.input`"
            )))
        }
    };
    if let Some(input) = input {
        p.spec.input = input;
    }
    if let Some(v) = layers {
        p.spec.layers = ModelSpec::parse_layers(v)?;
    }
    Ok(p)
}

/// Resolves `text` against the presets.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let pairs = parse_pairs(text)?;
    let b = resolve_model(&pairs, "model.baseline", "desk-baseline-a")?;
    let p = resolve_model(&pairs, "model.pif", "desk-pif-a")?;
    let baseline = b.spec.clone();
    let mut pif = p.spec.clone();
    let overrides = [
        ("pif.patch_size", parse_value::<usize>(&pairs, "pif.patch_size")?),
        ("pif.kernel", parse_value::<usize>(&pairs, "pif.kernel")?),
        ("pif.filters", parse_value::<usize>(&pairs, "pif.filters")?),
    ];
    let overlap_override = parse_value::<bool>(&pairs, "pif.overlap")?;
    if overrides.iter().any(|(_, v)| v.is_some()) || overlap_override.is_some() {
        let idx = pif
            .pif_index()
            .ok_or_else(|| config_err(format!("`pif.*` given but `{}` has no PIF layer", pif.name)))?;
        if let LayerSpec::Pif {
            patch_size,
            kernel,
            filters,
            overlap,
        } = &mut pif.layers[idx]
        {
            for (key, v) in overrides {
                if let Some(v) = v {
                    match key {
                        "pif.patch_size" => *patch_size = v,
                        "pif.kernel" => *kernel = v,
                        _ => *filters = v,
                    }
                }
            }
            if let Some(o) = overlap_override {
                *overlap = o;
            }
        }
    }
    if !pif.has_pif() {
        return Err(config_err(format!("`model.pif` ({}) has no PIF layer", pif.name)));
    }
    let shared_batch = parse_value::<usize>(&pairs, "train.batch_size")?;
    let baseline_batch = parse_value(&pairs, "model.baseline.batch_size")?
        .or(shared_batch)
        .unwrap_or(b.batch_size);
    let pif_batch = parse_value(&pairs, "model.pif.batch_size")?
        .or(shared_batch)
        .unwrap_or(p.batch_size);
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        lr: parse_value(&pairs, "train.lr")?.unwrap_or(b.lr),
        weight_decay: parse_value(&pairs, "train.weight_decay")?.unwrap_or(b.weight_decay),
        batch_size: baseline_batch,
        max_epochs: parse_value(&pairs, "train.max_epochs")?.unwrap_or(defaults.max_epochs),
        patience: parse_value(&pairs, "train.patience")?.unwrap_or(defaults.patience),
        seed: parse_value(&pairs, "train.seed")?.unwrap_or(defaults.seed),
        repeats: parse_value(&pairs, "train.repeats")?.unwrap_or(defaults.repeats),
        augment: parse_value::<AugmentMode>(&pairs, "augment.mode")?.unwrap_or(defaults.augment),
        normalize: parse_value(&pairs, "train.normalize")?.unwrap_or(defaults.normalize),
    };
    train.validate()?;
    Ok(ExperimentConfig {
        baseline,
        pif,
        baseline_batch,
        pif_batch,
        train,
    })
}

impl ExperimentConfig {
    /// Every setting as config text; parsing it gives back `self`.
    pub fn resolved(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        let [c, d, h, w] = self.baseline.input;
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("model.baseline", self.baseline.name.clone());
        put("model.pif", self.pif.name.clone());
        put("model.input", format!("{c},{d},{h},{w}"));
        put("model.baseline.layers", self.baseline.layers_string());
        put("model.pif.layers", self.pif.layers_string());
        put("model.baseline.batch_size", self.baseline_batch.to_string());
        put("model.pif.batch_size", self.pif_batch.to_string());
        let t = &self.train;
        put("train.lr", format!("{:?}", t.lr));
        put("train.weight_decay", format!("{:?}", t.weight_decay));
        put("train.patience", t.patience.to_string());
        put("train.max_epochs", t.max_epochs.to_string());
        put("train.seed", t.seed.to_string());
        put("train.repeats", t.repeats.to_string());
        put("train.normalize", t.normalize.to_string());
        put("augment.mode", t.augment.to_string());
        out
    }
}
