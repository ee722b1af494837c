//! Shipped architectures.
//!
//! Each architecture exists at two scales. `full-*` presets keep the original
//! filter counts, kernels, pooling and head sizes; they are meant for shape
//! checking and parameter accounting. `desk-*` presets take 32³ inputs with
//! reduced filter counts and are the ones trained in tests.
//!
//! Full-scale input extents are adjusted so the PIF input tiles exactly:
//! A uses unpadded convolutions on 182×224×182 (the PIF layer then sees a
//! 3×4×3 grid of 5³ patches plus 2×3×2 overlap patches), B and C use
//! one-voxel padding on 96×98×96.

use crate::model::{LayerSpec, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub spec: ModelSpec,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

pub const PRESET_NAMES: [&str; 12] = [
    "full-baseline-a",
    "full-pif-a",
    "full-baseline-b",
    "full-pif-b",
    "full-baseline-c",
    "full-pif-c",
    "desk-baseline-a",
    "desk-pif-a",
    "desk-baseline-b",
    "desk-pif-b",
    "desk-baseline-c",
    "desk-pif-c",
];

/// `(baseline, pif)` name pairs.
pub fn preset_pairs() -> Vec<(&'static str, &'static str)> {
    PRESET_NAMES.chunks(2).map(|c| (c[0], c[1])).collect()
}

fn conv_p(filters: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv {
        filters,
        kernel: 3,
        stride: 1,
        padding,
    }
}

fn linear(n: usize) -> LayerSpec {
    LayerSpec::Linear { out_features: n }
}

fn dropout() -> LayerSpec {
    LayerSpec::Dropout { p: 0.3 }
}

/// conv → ELU, optionally followed by max-pool and dropout.
fn block(layers: &mut Vec<LayerSpec>, filters: usize, padding: usize, pool: Option<(usize, usize)>) {
    layers.push(conv_p(filters, padding));
    layers.push(LayerSpec::Elu);
    if let Some((k, s)) = pool {
        layers.push(LayerSpec::pool(k, s));
        layers.push(dropout());
    }
}

fn head(layers: &mut Vec<LayerSpec>, hidden: Option<usize>) {
    layers.push(LayerSpec::FlattenConcat);
    if let Some(h) = hidden {
        layers.push(linear(h));
        layers.push(LayerSpec::Elu);
    }
    layers.push(linear(1));
    layers.push(LayerSpec::Sigmoid);
}

fn pif_tail(layers: &mut Vec<LayerSpec>, patch: usize, filters: usize) {
    layers.push(LayerSpec::pif(patch, 3, filters));
    layers.push(LayerSpec::Elu);
}

/// Layers, input shape, batch size, learning rate, weight decay.
type Recipe = (Vec<LayerSpec>, [usize; 4], usize, f64, f64);

fn build(name: &str) -> Option<Recipe> {
    let mut l = Vec::new();
    let third = Some((3, 3));
    let out = match name {
        // five convs (8, 16, 32, 64, 64); pool 3/3 after the first two, 4/2 after the fifth
        "full-baseline-a" => {
            block(&mut l, 8, 0, third);
            block(&mut l, 16, 0, third);
            block(&mut l, 32, 0, None);
            block(&mut l, 64, 0, None);
            block(&mut l, 64, 0, Some((4, 2)));
            head(&mut l, Some(100));
            (l, [1, 182, 224, 182], 8, 1e-4, 1e-5)
        }
        "full-pif-a" => {
            block(&mut l, 8, 0, third);
            block(&mut l, 16, 0, third);
            block(&mut l, 32, 0, None);
            block(&mut l, 64, 0, None);
            pif_tail(&mut l, 5, 6);
            head(&mut l, Some(100));
            (l, [1, 182, 224, 182], 12, 1e-4, 1e-5)
        }
        "full-baseline-b" => {
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, None);
            block(&mut l, 64, 1, None);
            block(&mut l, 36, 1, Some((4, 2)));
            head(&mut l, Some(80));
            (l, [1, 96, 98, 96], 12, 1e-4, 1e-4)
        }
        "full-pif-b" => {
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, None);
            block(&mut l, 64, 1, None);
            pif_tail(&mut l, 5, 3);
            head(&mut l, Some(80));
            (l, [1, 96, 98, 96], 6, 1e-4, 1e-4)
        }
        // four convs of 64, the fifth replaced by pool + dropout, single linear output
        "full-baseline-c" => {
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, third);
            block(&mut l, 64, 1, None);
            block(&mut l, 64, 1, None);
            l.push(LayerSpec::pool(3, 3));
            l.push(dropout());
            head(&mut l, None);
            (l, [1, 96, 98, 96], 4, 1e-4, 1e-4)
        }
        "full-pif-c" => {
            block(&mut l, 16, 1, third);
            block(&mut l, 32, 1, third);
            block(&mut l, 64, 1, None);
            block(&mut l, 64, 1, None);
            pif_tail(&mut l, 5, 4);
            head(&mut l, Some(100));
            (l, [1, 96, 98, 96], 4, 1e-4, 1e-4)
        }
        // 32³ → 30 → pool 10 → 8 → (baseline: 6 → pool 3 | pif: 2×2×2 patches of 4³ + 1 overlap)
        "desk-baseline-a" => {
            block(&mut l, 4, 0, third);
            block(&mut l, 8, 0, None);
            block(&mut l, 10, 0, Some((2, 2)));
            head(&mut l, Some(16));
            (l, [1, 32, 32, 32], 8, 1e-3, 1e-4)
        }
        "desk-pif-a" => {
            block(&mut l, 4, 0, third);
            block(&mut l, 8, 0, None);
            pif_tail(&mut l, 4, 2);
            head(&mut l, Some(16));
            (l, [1, 32, 32, 32], 8, 1e-3, 1e-4)
        }
        "desk-baseline-b" => {
            block(&mut l, 8, 0, third);
            block(&mut l, 8, 0, None);
            block(&mut l, 8, 0, Some((2, 2)));
            head(&mut l, Some(14));
            (l, [1, 32, 32, 32], 8, 1e-3, 1e-4)
        }
        "desk-pif-b" => {
            block(&mut l, 8, 0, third);
            block(&mut l, 8, 0, None);
            pif_tail(&mut l, 4, 2);
            head(&mut l, Some(8));
            (l, [1, 32, 32, 32], 8, 1e-3, 1e-4)
        }
        "desk-baseline-c" => {
            block(&mut l, 8, 0, third);
            block(&mut l, 8, 0, None);
            block(&mut l, 8, 0, None);
            l.push(LayerSpec::pool(2, 2));
            l.push(dropout());
            head(&mut l, None);
            (l, [1, 32, 32, 32], 4, 1e-3, 1e-4)
        }
        "desk-pif-c" => {
            block(&mut l, 4, 0, third);
            block(&mut l, 8, 0, None);
            pif_tail(&mut l, 4, 1);
            head(&mut l, Some(10));
            (l, [1, 32, 32, 32], 4, 1e-3, 1e-4)
        }
        _ => return None,
    };
    Some(out)
}

pub fn preset(name: &str) -> Option<Preset> {
    build(name).map(|(layers, input, batch_size, lr, weight_decay)| Preset {
        spec: ModelSpec::new(name, input, layers),
        batch_size,
        lr,
        weight_decay,
    })
}
