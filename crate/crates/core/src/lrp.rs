//! α/β layer-wise relevance propagation.
//!
//! Relevance arriving at output `j` of an affine layer is split over its inputs
//! by the sign of each contribution `z_ij = a_i · w_ij`:
//!
//! ```text
//! R_i = Σ_j ( α · z⁺_ij / Σ_i z⁺_ij  −  β · z⁻_ij / Σ_i z⁻_ij ) · R_j
//! ```
//!
//! with `α = 1 + β`, so each layer conserves the total. Biases take no share.
//! Denominators are pushed away from zero by `ε` in their own sign; an exactly
//! zero denominator drops its term. Max-pooling sends each window's relevance to
//! its recorded winner, and ELU and dropout pass relevance through unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{crop_volume, uncrop_add, Graph};
use crate::error::{Error, Result};
use crate::layers::conv::{self, Conv3dSpec, ConvDims};
use crate::model::{Flow, LayerParams, LayerSpec, Mode, Model};
use crate::pif::{BranchLayout, PatchKind, PifLayerState, PifOutput};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 5.0;
pub const DEFAULT_BETA: f64 = 4.0;
pub const DEFAULT_EPS: f64 = 1e-9;

/// A layer addressed by position or as "the PIF layer".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerRef {
    Index(usize),
    Pif,
}

impl LayerRef {
    fn resolve(self, model: &Model) -> Result<usize> {
        match self {
            LayerRef::Index(i) if i < model.spec().layers.len() => Ok(i),
            LayerRef::Index(i) => Err(Error::InvalidIndex(format!(
                "layer {i} out of range (model has {} layers)",
                model.spec().layers.len()
            ))),
            LayerRef::Pif => model
                .spec()
                .pif_index()
                .ok_or_else(|| Error::InvalidIndex("model has no PIF layer".into())),
        }
    }
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Index(i) => write!(f, "{i}"),
            LayerRef::Pif => f.write_str("pif"),
        }
    }
}

/// Where relevance is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrpStart {
    /// The pre-sigmoid logit.
    Output,
    /// The full output map of one filter of a layer.
    Filter { layer: LayerRef, filter: usize },
    /// One patch block of one filter of a PIF layer's output.
    PatchFilter {
        layer: LayerRef,
        patch: usize,
        filter: usize,
    },
}

impl fmt::Display for LrpStart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrpStart::Output => f.write_str("output"),
            LrpStart::Filter { layer, filter } => write!(f, "{layer}:{filter}"),
            LrpStart::PatchFilter { layer, patch, filter } => {
                write!(f, "{layer}:patch{patch}:filter{filter}")
            }
        }
    }
}

impl FromStr for LrpStart {
    type Err = Error;

    /// `output`, `<layer>:<filter>`, `pif:<filter>` or
    /// `<layer|pif>:patch<P>:filter<F>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid LRP start `{s}`"));
        let s = s.trim();
        if s == "output" {
            return Ok(LrpStart::Output);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let layer = match parts[0] {
            "pif" => LayerRef::Pif,
            p => LayerRef::Index(p.parse().map_err(|_| bad())?),
        };
        match parts[1..] {
            [filter] => Ok(LrpStart::Filter {
                layer,
                filter: filter.parse().map_err(|_| bad())?,
            }),
            [patch, filter] => {
                let patch = patch.strip_prefix("patch").ok_or_else(bad)?;
                let filter = filter.strip_prefix("filter").ok_or_else(bad)?;
                Ok(LrpStart::PatchFilter {
                    layer,
                    patch: patch.parse().map_err(|_| bad())?,
                    filter: filter.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    alpha: f64,
    beta: f64,
    eps: f64,
    pub start: LrpStart,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            eps: DEFAULT_EPS,
            start: LrpStart::Output,
        }
    }
}

impl LrpConfig {
    /// Rejects any pair other than `α = 1 + β` with `β ≥ 0`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || beta < 0.0 {
            return Err(Error::Config(format!(
                "LRP α and β must be finite and non-negative, got α={alpha}, β={beta}"
            )));
        }
        if (alpha - (1.0 + beta)).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "LRP is confined to α = 1 + β, got α={alpha}, β={beta}"
            )));
        }
        Ok(LrpConfig {
            alpha,
            beta,
            ..Default::default()
        })
    }

    pub fn with_start(mut self, start: LrpStart) -> Self {
        self.start = start;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("LRP stabilizer must be positive, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

/// Input-resolution relevance, summed over input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// `(D, H, W)`.
    pub volume: Tensor,
    pub start: LrpStart,
    pub alpha: f64,
    pub beta: f64,
    pub model_checksum: String,
}

impl RelevanceMap {
    pub fn extents(&self) -> [usize; 3] {
        let s = self.volume.shape();
        [s[0], s[1], s[2]]
    }
}

/// Relevance attached to one activation of the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Relevance {
    Single(Tensor),
    Branches {
        original: Tensor,
        overlap: Option<Tensor>,
    },
}

impl Relevance {
    pub fn sum(&self) -> f64 {
        match self {
            Relevance::Single(t) => t.sum(),
            Relevance::Branches { original, overlap } => {
                original.sum() + overlap.as_ref().map_or(0.0, Tensor::sum)
            }
        }
    }

    fn single(self, layer: usize) -> Result<Tensor> {
        match self {
            Relevance::Single(t) => Ok(t),
            Relevance::Branches { .. } => Err(Error::InvalidShape(format!(
                "layer {layer} received branch relevance"
            ))),
        }
    }
}

fn ratio(r: f64, z: f64, eps: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        r / (z + eps * z.signum())
    }
}

fn positive(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn negative(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.min(0.0)).collect()
}

/// Shared α/β rule for any bias-free linear map.
///
/// `forward(a, w)` evaluates the map, `transpose(s, w)` its adjoint. Positive
/// contributions come from `a⁺w⁺` and `a⁻w⁻`, negative ones from `a⁺w⁻` and
/// `a⁻w⁺`, so four forward and four adjoint passes cover every connection.
fn alpha_beta(
    a: &[f64],
    w: &[f64],
    relevance: &[f64],
    cfg: &LrpConfig,
    forward: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    transpose: impl Fn(&[f64], &[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let (ap, an) = (positive(a), negative(a));
    let (wp, wn) = (positive(w), negative(w));
    let add = |x: Vec<f64>, y: Vec<f64>| -> Vec<f64> { x.iter().zip(&y).map(|(p, q)| p + q).collect() };
    let zp = add(forward(&ap, &wp), forward(&an, &wn));
    let zn = add(forward(&ap, &wn), forward(&an, &wp));
    let sp: Vec<f64> = relevance
        .iter()
        .zip(&zp)
        .map(|(&r, &z)| cfg.alpha * ratio(r, z, cfg.eps))
        .collect();
    let sn: Vec<f64> = relevance
        .iter()
        .zip(&zn)
        .map(|(&r, &z)| -cfg.beta * ratio(r, z, cfg.eps))
        .collect();
    let via_pos = add(transpose(&sp, &wp), transpose(&sn, &wn));
    let via_neg = add(transpose(&sp, &wn), transpose(&sn, &wp));
    (0..a.len())
        .map(|i| ap[i] * via_pos[i] + an[i] * via_neg[i])
        .collect()
}

fn check_relevance(expected: &[usize], relevance: &Tensor, op: &'static str) -> Result<()> {
    if relevance.shape() != expected {
        return Err(Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            actual: relevance.shape().to_vec(),
        });
    }
    Ok(())
}

/// Relevance of `(N, F)` inputs of a linear layer with `(O, F)` weights.
pub fn relprop_linear(input: &Tensor, weight: &Tensor, relevance: &Tensor, cfg: &LrpConfig) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 2 || ws.len() != 2 || is[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "relprop linear",
            expected: vec![is.first().copied().unwrap_or(1), ws.get(1).copied().unwrap_or(0)],
            actual: is.to_vec(),
        });
    }
    let (n, f, o) = (is[0], is[1], ws[0]);
    check_relevance(&[n, o], relevance, "relprop linear relevance")?;
    let forward = |a: &[f64], w: &[f64]| {
        let mut z = vec![0.0; n * o];
        for r in 0..n {
            for j in 0..o {
                z[r * o + j] = a[r * f..][..f].iter().zip(&w[j * f..][..f]).map(|(x, y)| x * y).sum();
            }
        }
        z
    };
    let transpose = |s: &[f64], w: &[f64]| {
        let mut t = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..o {
                let sj = s[r * o + j];
                for (acc, &wv) in t[r * f..][..f].iter_mut().zip(&w[j * f..][..f]) {
                    *acc += sj * wv;
                }
            }
        }
        t
    };
    let out = alpha_beta(input.data(), weight.data(), relevance.data(), cfg, forward, transpose);
    Tensor::new(is.to_vec(), out)
}

fn relprop_conv_raw(dims: &ConvDims, input: &[f64], weight: &[f64], relevance: &[f64], cfg: &LrpConfig) -> Vec<f64> {
    let zero_bias = vec![0.0; dims.out_ch];
    let out_len = dims.batch * dims.out_ch * dims.out_volume();
    let forward = |a: &[f64], w: &[f64]| {
        let mut z = vec![0.0; out_len];
        conv::forward_raw(dims, a, w, &zero_bias, &mut z);
        z
    };
    let transpose = |s: &[f64], w: &[f64]| {
        conv::backward_raw(dims, input, w, s, true)
            .input
            .expect("input adjoint requested")
    };
    alpha_beta(input, weight, relevance, cfg, forward, transpose)
}

/// Relevance of the input of a 3D convolution.
pub fn relprop_conv3d(
    input: &Tensor,
    spec: &Conv3dSpec,
    weight: &Tensor,
    relevance: &Tensor,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let dims = ConvDims::resolve(input.shape(), spec)?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "relprop conv3d weight",
            expected: spec.weight_shape().to_vec(),
            actual: weight.shape().to_vec(),
        });
    }
    check_relevance(&dims.output_shape(), relevance, "relprop conv3d relevance")?;
    let out = relprop_conv_raw(&dims, input.data(), weight.data(), relevance.data(), cfg);
    Tensor::new(input.shape().to_vec(), out)
}

/// Routes each pooled value's relevance to its window winner.
pub fn relprop_pool(input_shape: &[usize], argmax: &[usize], relevance: &Tensor) -> Result<Tensor> {
    if argmax.len() != relevance.numel() {
        return Err(Error::MissingActivation(format!(
            "{} pooling winners for {} relevance values",
            argmax.len(),
            relevance.numel()
        )));
    }
    let mut out = Tensor::zeros(input_shape);
    let len = out.numel();
    let data = out.data_mut();
    for (&idx, &r) in argmax.iter().zip(relevance.data()) {
        if idx >= len {
            return Err(Error::InvalidIndex(format!("pool winner {idx} outside input of {len}")));
        }
        data[idx] += r;
    }
    Ok(out)
}

/// Relevance of a PIF layer's input. Each bank only redistributes inside its
/// own patch.
pub fn relprop_pif(
    input: &Tensor,
    state: &PifLayerState,
    original: &Tensor,
    overlap: Option<&Tensor>,
    cfg: &LrpConfig,
) -> Result<Tensor> {
    let batch = input.shape().first().copied().unwrap_or(0);
    let expected = state.original_shape(batch);
    check_relevance(&expected, original, "relprop pif original")?;
    match (state.overlap_shape(batch), overlap) {
        (Some(shape), Some(r)) => check_relevance(&shape, r, "relprop pif overlap")?,
        (None, None) => {}
        (Some(shape), None) => {
            return Err(Error::ShapeMismatch {
                op: "relprop pif overlap",
                expected: shape,
                actual: vec![],
            })
        }
        (None, Some(r)) => {
            return Err(Error::ShapeMismatch {
                op: "relprop pif overlap",
                expected: vec![],
                actual: r.shape().to_vec(),
            })
        }
    }
    let s = state.grid().patch_size();
    let spec = state.bank_spec();
    let dims = ConvDims::resolve(&[batch, state.in_channels(), s, s, s], &spec)?;
    let (b, f) = (state.block_size(), state.filters());
    let mut out = vec![0.0; input.numel()];
    for (patch, ((origin, kind), bank)) in state.grid().origins().zip(state.banks()).enumerate() {
        let (_, idx, layout) = state.locate(patch)?;
        let (rel, count) = match kind {
            PatchKind::Original => (original, state.grid().originals().len()),
            PatchKind::Overlap => (
                overlap.expect("overlap relevance checked"),
                state.grid().overlaps().len(),
            ),
        };
        let block: Vec<f64> = layout
            .block_offsets(batch, f, b, count, idx)
            .iter()
            .map(|&o| rel.data()[o])
            .collect();
        if block.iter().all(|&r| r == 0.0) {
            continue;
        }
        let crop = crop_volume(input, origin, [s; 3])?;
        let r_in = relprop_conv_raw(&dims, crop.data(), bank.weight.data(), &block, cfg);
        uncrop_add(&mut out, input.shape(), origin, [s; 3], &r_in);
    }
    Tensor::new(input.shape().to_vec(), out)
}

fn value_of(g: &Graph, flow: Flow) -> Relevance {
    match flow {
        Flow::Single(v) => Relevance::Single(g.value(v).clone()),
        Flow::Branches(PifOutput { original, overlap }) => Relevance::Branches {
            original: g.value(original).clone(),
            overlap: overlap.map(|v| g.value(v).clone()),
        },
    }
}

/// Zeroes every channel of `t` (channel axis given) except `filter`.
fn keep_channel(t: &mut Tensor, axis: usize, filter: usize) -> Result<()> {
    let shape = t.shape().to_vec();
    let channels = shape[axis];
    if filter >= channels {
        return Err(Error::InvalidIndex(format!(
            "filter {filter} out of range (layer has {channels})"
        )));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        if (i / inner) % channels != filter {
            *v = 0.0;
        }
    }
    Ok(())
}

fn pif_state_for(model: &Model, layer: usize) -> Result<&PifLayerState> {
    // the layer itself or an activation that follows a PIF layer
    model.layers()[..=layer]
        .iter()
        .rev()
        .find_map(|l| match l {
            LayerParams::Pif(s) => Some(s),
            _ => None,
        })
        .ok_or_else(|| Error::InvalidIndex(format!("layer {layer} is not at or after a PIF layer")))
}

fn initial_relevance(model: &Model, g: &Graph, trace: &[Flow], start: LrpStart) -> Result<(usize, Relevance)> {
    let sigmoid = model.spec().layers.len() - 1;
    match start {
        LrpStart::Output => Ok((sigmoid, value_of(g, trace[sigmoid]))),
        LrpStart::Filter { layer, filter } => {
            let layer = layer.resolve(model)?;
            if layer >= sigmoid {
                return Err(Error::InvalidIndex(format!(
                    "layer {layer} is the output; use the output start"
                )));
            }
            let mut r = value_of(g, trace[layer + 1]);
            match &mut r {
                Relevance::Single(t) => keep_channel(t, 1, filter)?,
                Relevance::Branches { original, overlap } => {
                    keep_channel(original, 1, filter)?;
                    if let Some(ov) = overlap {
                        keep_channel(ov, 2, filter)?;
                    }
                }
            }
            Ok((layer + 1, r))
        }
        LrpStart::PatchFilter { layer, patch, filter } => {
            let layer = layer.resolve(model)?;
            let state = pif_state_for(model, layer)?;
            let Relevance::Branches { original, overlap } = value_of(g, trace[layer + 1]) else {
                return Err(Error::InvalidIndex(format!(
                    "layer {layer} does not output PIF branches"
                )));
            };
            if filter >= state.filters() {
                return Err(Error::InvalidIndex(format!(
                    "filter {filter} out of range (layer has {})",
                    state.filters()
                )));
            }
            let (kind, idx, layout) = state.locate(patch)?;
            let (b, f) = (state.block_size(), state.filters());
            let b3 = b * b * b;
            let keep = |src: &Tensor, count: usize| {
                let mut out = Tensor::zeros(src.shape());
                let offsets = layout.block_offsets(1, f, b, count, idx);
                for &o in &offsets[filter * b3..(filter + 1) * b3] {
                    out.data_mut()[o] = src.data()[o];
                }
                out
            };
            let n_orig = state.grid().originals().len();
            let n_ov = state.grid().overlaps().len();
            let r = match kind {
                PatchKind::Original => Relevance::Branches {
                    original: keep(&original, n_orig),
                    overlap: overlap.map(|ov| Tensor::zeros(ov.shape())),
                },
                PatchKind::Overlap => Relevance::Branches {
                    original: Tensor::zeros(original.shape()),
                    overlap: overlap.map(|ov| keep(&ov, n_ov)),
                },
            };
            Ok((layer + 1, r))
        }
    }
}

/// Relevance at every layer boundary below the start point.
///
/// Entry `i` is the relevance of the input of layer `i`; the last entry is the
/// starting relevance.
pub fn propagate(model: &Model, input: &Tensor, cfg: &LrpConfig) -> Result<Vec<Relevance>> {
    let input = single_volume(model, input)?;
    let mut g = Graph::new();
    let x = g.constant(input);
    let fwd = model.forward(&mut g, x, &mut Mode::Eval)?;
    let (top, start) = initial_relevance(model, &g, &fwd.trace, cfg.start)?;
    let mut out = vec![start];
    for i in (0..top).rev() {
        let r = out.last().expect("non-empty").clone();
        let below = fwd.trace[i];
        let next = match (&model.spec().layers[i], &model.layers()[i]) {
            (LayerSpec::Conv { .. }, LayerParams::Conv { spec, weight, .. }) => {
                let a = g.value(single(below, i)?);
                Relevance::Single(relprop_conv3d(a, spec, weight, &r.single(i)?, cfg)?)
            }
            (LayerSpec::Linear { .. }, LayerParams::Linear { weight, .. }) => {
                let a = g.value(single(below, i)?);
                Relevance::Single(relprop_linear(a, weight, &r.single(i)?, cfg)?)
            }
            (LayerSpec::MaxPool { .. }, _) => {
                let pooled = single(fwd.trace[i + 1], i)?;
                let argmax = g
                    .pool_argmax(pooled)
                    .ok_or_else(|| Error::MissingActivation(format!("pool winners of layer {i}")))?;
                let shape = g.value(single(below, i)?).shape().to_vec();
                Relevance::Single(relprop_pool(&shape, argmax, &r.single(i)?)?)
            }
            (LayerSpec::Pif { .. }, LayerParams::Pif(state)) => {
                let a = g.value(single(below, i)?);
                let Relevance::Branches { original, overlap } = r else {
                    return Err(Error::InvalidShape(format!("layer {i} expects branch relevance")));
                };
                Relevance::Single(relprop_pif(a, state, &original, overlap.as_ref(), cfg)?)
            }
            (LayerSpec::FlattenConcat, _) => {
                let flat = r.single(i)?.into_data();
                match below {
                    Flow::Single(v) => Relevance::Single(Tensor::new(g.value(v).shape().to_vec(), flat)?),
                    Flow::Branches(PifOutput { original, overlap }) => {
                        let o_shape = g.value(original).shape().to_vec();
                        let split = o_shape.iter().product();
                        let overlap = overlap
                            .map(|v| Tensor::new(g.value(v).shape().to_vec(), flat[split..].to_vec()))
                            .transpose()?;
                        Relevance::Branches {
                            original: Tensor::new(o_shape, flat[..split].to_vec())?,
                            overlap,
                        }
                    }
                }
            }
            (LayerSpec::Elu | LayerSpec::Dropout { .. }, _) => r,
            (layer, _) => {
                return Err(Error::Config(format!(
                    "layer {i} ({layer}) cannot propagate relevance"
                )))
            }
        };
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

fn single(flow: Flow, layer: usize) -> Result<crate::autodiff::Var> {
    match flow {
        Flow::Single(v) => Ok(v),
        Flow::Branches(_) => Err(Error::InvalidShape(format!(
            "layer {layer} input is a PIF branch pair"
        ))),
    }
}

/// Accepts `(C, D, H, W)` or `(1, C, D, H, W)`.
fn single_volume(model: &Model, input: &Tensor) -> Result<Tensor> {
    let want = model.spec().input;
    let shape = input.shape();
    let ok = match shape.len() {
        4 => shape == want,
        5 => shape[0] == 1 && shape[1..] == want,
        _ => false,
    };
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "heatmap input",
            expected: want.to_vec(),
            actual: shape.to_vec(),
        });
    }
    input.clone().reshape(vec![1, want[0], want[1], want[2], want[3]])
}

/// Voxel relevance of one input volume.
pub fn heatmap(model: &Model, input: &Tensor, cfg: &LrpConfig) -> Result<RelevanceMap> {
    let relevance = propagate(model, input, cfg)?;
    let r0 = relevance
        .into_iter()
        .next()
        .expect("propagation yields the input relevance")
        .single(0)?;
    let [c, d, h, w] = model.spec().input;
    let vol = d * h * w;
    let mut volume = vec![0.0; vol];
    for ch in 0..c {
        for (acc, &r) in volume.iter_mut().zip(&r0.data()[ch * vol..][..vol]) {
            *acc += r;
        }
    }
    let volume = Tensor::new(vec![d, h, w], volume)?;
    volume.check_finite("heatmap")?;
    Ok(RelevanceMap {
        volume,
        start: cfg.start,
        alpha: cfg.alpha,
        beta: cfg.beta,
        model_checksum: model.checksum(),
    })
}

/// Output-branch offsets of filter `filter` in patch `patch`'s block, in the
/// layout of its own branch.
pub fn patch_filter_offsets(state: &PifLayerState, patch: usize, filter: usize) -> Result<(PatchKind, Vec<usize>)> {
    let (kind, idx, layout) = state.locate(patch)?;
    let b = state.block_size();
    let b3 = b * b * b;
    let count = match layout {
        BranchLayout::Reassembled { .. } => state.grid().originals().len(),
        BranchLayout::Stacked => state.grid().overlaps().len(),
    };
    let offsets = layout.block_offsets(1, state.filters(), b, count, idx);
    Ok((kind, offsets[filter * b3..(filter + 1) * b3].to_vec()))
}
