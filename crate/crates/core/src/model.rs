//! Declarative architectures and their parameter containers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::conv::Conv3dSpec;
use crate::layers::init::{he_init, zero_bias};
use crate::layers::pool::PoolSpec;
use crate::pif::{make_patch_grid, Bank, PifLayerState, PifOutput};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Elu,
    Dropout {
        p: f64,
    },
    Pif {
        patch_size: usize,
        kernel: usize,
        filters: usize,
        overlap: bool,
    },
    FlattenConcat,
    Linear {
        out_features: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn pool(kernel: usize, stride: usize) -> Self {
        LayerSpec::MaxPool { kernel, stride }
    }

    pub fn pif(patch_size: usize, kernel: usize, filters: usize) -> Self {
        LayerSpec::Pif {
            patch_size,
            kernel,
            filters,
            overlap: true,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "pool",
            LayerSpec::Elu => "elu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Pif { .. } => "pif",
            LayerSpec::FlattenConcat => "flatten",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }
}

/// Text form used in config files, e.g. `conv 8 k3 s1 p0`, `pool k3 s3`,
/// `dropout 0.3`, `pif s5 k3 f6 overlap`, `linear 100`.
impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => write!(f, "conv {filters} k{kernel} s{stride} p{padding}"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "pool k{kernel} s{stride}"),
            LayerSpec::Elu => f.write_str("elu"),
            LayerSpec::Dropout { p } => write!(f, "dropout {p}"),
            LayerSpec::Pif {
                patch_size,
                kernel,
                filters,
                overlap,
            } => write!(
                f,
                "pif s{patch_size} k{kernel} f{filters} {}",
                if overlap { "overlap" } else { "no-overlap" }
            ),
            LayerSpec::FlattenConcat => f.write_str("flatten"),
            LayerSpec::Linear { out_features } => write!(f, "linear {out_features}"),
            LayerSpec::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

fn parse_tagged(tok: &str, tag: char, layer: &str) -> Result<usize> {
    tok.strip_prefix(tag)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("bad option `{tok}` in `{layer}` (expected {tag}<n>)")))
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Config(format!("cannot parse layer `{}`", s.trim()));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let Some((&head, rest)) = toks.split_first() else {
            return Err(bad());
        };
        match head {
            "conv" => {
                let (&filters, opts) = rest.split_first().ok_or_else(bad)?;
                let mut spec = LayerSpec::conv(num(filters)?, 3);
                if let LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } = &mut spec
                {
                    for t in opts {
                        match t.chars().next() {
                            Some('k') => *kernel = parse_tagged(t, 'k', s)?,
                            Some('s') => *stride = parse_tagged(t, 's', s)?,
                            Some('p') => *padding = parse_tagged(t, 'p', s)?,
                            _ => return Err(bad()),
                        }
                    }
                }
                Ok(spec)
            }
            "pool" => {
                let (mut kernel, mut stride) = (None, None);
                for t in rest {
                    match t.chars().next() {
                        Some('k') => kernel = Some(parse_tagged(t, 'k', s)?),
                        Some('s') => stride = Some(parse_tagged(t, 's', s)?),
                        _ => return Err(bad()),
                    }
                }
                let kernel = kernel.ok_or_else(bad)?;
                Ok(LayerSpec::pool(kernel, stride.unwrap_or(kernel)))
            }
            "elu" if rest.is_empty() => Ok(LayerSpec::Elu),
            "dropout" => match rest {
                [p] => Ok(LayerSpec::Dropout {
                    p: p.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            },
            "pif" => {
                let (mut s_, mut k, mut f, mut overlap) = (None, None, None, true);
                for t in rest {
                    match *t {
                        "overlap" => overlap = true,
                        "no-overlap" => overlap = false,
                        _ => match t.chars().next() {
                            Some('s') => s_ = Some(parse_tagged(t, 's', s)?),
                            Some('k') => k = Some(parse_tagged(t, 'k', s)?),
                            Some('f') => f = Some(parse_tagged(t, 'f', s)?),
                            _ => return Err(bad()),
                        },
                    }
                }
                Ok(LayerSpec::Pif {
                    patch_size: s_.ok_or_else(bad)?,
                    kernel: k.ok_or_else(bad)?,
                    filters: f.ok_or_else(bad)?,
                    overlap,
                })
            }
            "flatten" if rest.is_empty() => Ok(LayerSpec::FlattenConcat),
            "linear" => match rest {
                [n] => Ok(LayerSpec::Linear { out_features: num(n)? }),
                _ => Err(bad()),
            },
            "sigmoid" if rest.is_empty() => Ok(LayerSpec::Sigmoid),
            _ => Err(bad()),
        }
    }
}

/// Activation shape between layers (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Volume {
        channels: usize,
        extents: [usize; 3],
    },
    /// PIF output: reassembled original branch plus optional stacked overlap
    /// branch `(count, filters, block)`.
    Branches {
        filters: usize,
        extents: [usize; 3],
        overlap: Option<(usize, usize, usize)>,
    },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Volume { channels, extents } => channels * extents.iter().product::<usize>(),
            ActShape::Branches {
                filters,
                extents,
                overlap,
            } => {
                filters * extents.iter().product::<usize>()
                    + overlap.map(|(c, f, b)| c * f * b * b * b).unwrap_or(0)
            }
            ActShape::Flat(n) => n,
        }
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActShape::Volume { channels, extents } => {
                write!(f, "{channels}x{}x{}x{}", extents[0], extents[1], extents[2])
            }
            ActShape::Branches {
                filters,
                extents,
                overlap,
            } => {
                write!(f, "{filters}x{}x{}x{}", extents[0], extents[1], extents[2])?;
                if let Some((c, fl, b)) = overlap {
                    write!(f, " + {c}x{fl}x{b}x{b}x{b}")?;
                }
                Ok(())
            }
            ActShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `(channels, depth, height, width)`
    pub input: [usize; 4],
    pub layers: Vec<LayerSpec>,
}

/// Parameter count of one layer, as printed by `params`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub index: usize,
    pub layer: String,
    pub output: String,
    pub count: usize,
    /// `(banks, per-bank)` for PIF layers.
    pub banks: Option<(usize, usize)>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, input: [usize; 4], layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            name: name.into(),
            input,
            layers,
        }
    }

    pub fn spatial_extents(&self) -> [usize; 3] {
        [self.input[1], self.input[2], self.input[3]]
    }

    pub fn has_pif(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Pif { .. }))
    }

    /// Index of the first PIF layer.
    pub fn pif_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Pif { .. }))
    }

    /// Static shape chain: element `i` is the input shape of layer `i`; the last
    /// element is the network output. Fails on the first illegal layer.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        if self.input.contains(&0) {
            return Err(Error::InvalidShape(format!("input extents {:?} must be positive", self.input)));
        }
        let mut shapes = vec![ActShape::Volume {
            channels: self.input[0],
            extents: self.spatial_extents(),
        }];
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().expect("non-empty");
            let ctx = |msg: String| Error::InvalidShape(format!("layer {i} ({layer}): {msg}"));
            let next = match (*layer, cur) {
                (
                    LayerSpec::Conv {
                        filters,
                        kernel,
                        stride,
                        padding,
                    },
                    ActShape::Volume { channels, extents },
                ) => {
                    let spec = Conv3dSpec {
                        in_channels: channels,
                        out_channels: filters,
                        kernel_size: kernel,
                        stride,
                        padding,
                    };
                    if filters == 0 {
                        return Err(ctx("filter count must be >= 1".into()));
                    }
                    ActShape::Volume {
                        channels: filters,
                        extents: spec.output_extents(extents).map_err(|e| ctx(e.to_string()))?,
                    }
                }
                (LayerSpec::MaxPool { kernel, stride }, ActShape::Volume { channels, extents }) => {
                    ActShape::Volume {
                        channels,
                        extents: PoolSpec::new(kernel, stride)
                            .output_extents(extents)
                            .map_err(|e| ctx(e.to_string()))?,
                    }
                }
                (LayerSpec::Elu, s) => s,
                (LayerSpec::Dropout { p }, s) => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout probability {p} outside [0, 1)"
                        )));
                    }
                    s
                }
                (
                    LayerSpec::Pif {
                        patch_size,
                        kernel,
                        filters,
                        overlap,
                    },
                    ActShape::Volume { extents, .. },
                ) => {
                    let grid = make_patch_grid(extents, patch_size)
                        .map_err(|e| match e {
                            Error::Config(m) => Error::Config(format!("layer {i} ({layer}): {m}")),
                            other => other,
                        })?;
                    if kernel == 0 || kernel > patch_size || filters == 0 {
                        return Err(ctx(format!(
                            "needs 1 <= kernel <= patch size and filters >= 1 (k={kernel}, s={patch_size}, f={filters})"
                        )));
                    }
                    let b = patch_size - kernel + 1;
                    let counts = grid.grid_counts();
                    ActShape::Branches {
                        filters,
                        extents: counts.map(|c| c * b),
                        overlap: (overlap && !grid.overlaps().is_empty())
                            .then(|| (grid.overlaps().len(), filters, b)),
                    }
                }
                (LayerSpec::FlattenConcat, s @ (ActShape::Volume { .. } | ActShape::Branches { .. })) => {
                    ActShape::Flat(s.numel())
                }
                (LayerSpec::Linear { out_features }, ActShape::Flat(_)) if out_features > 0 => {
                    ActShape::Flat(out_features)
                }
                (LayerSpec::Sigmoid, ActShape::Flat(1)) if i + 1 == n => ActShape::Flat(1),
                (_, s) => return Err(ctx(format!("cannot follow activation of shape {s}"))),
            };
            shapes.push(next);
        }
        match (self.layers.last(), shapes.last()) {
            (Some(LayerSpec::Sigmoid), Some(ActShape::Flat(1))) => Ok(shapes),
            _ => Err(Error::InvalidShape(format!(
                "model `{}` must end in a single-output linear layer followed by sigmoid",
                self.name
            ))),
        }
    }

    pub fn layer_parameter_counts(&self) -> Result<Vec<LayerCount>> {
        let shapes = self.shapes()?;
        let mut counts = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (count, banks) = match (*layer, shapes[i]) {
                (LayerSpec::Conv { filters, kernel, .. }, ActShape::Volume { channels, .. }) => {
                    (Conv3dSpec::valid(channels, filters, kernel).parameter_count(), None)
                }
                (
                    LayerSpec::Pif {
                        patch_size,
                        kernel,
                        filters,
                        overlap,
                    },
                    ActShape::Volume { channels, extents },
                ) => {
                    let grid = make_patch_grid(extents, patch_size)?;
                    let n_banks = grid.originals().len() + if overlap { grid.overlaps().len() } else { 0 };
                    let per_bank = Conv3dSpec::valid(channels, filters, kernel).parameter_count();
                    (n_banks * per_bank, Some((n_banks, per_bank)))
                }
                (LayerSpec::Linear { out_features }, ActShape::Flat(inp)) => {
                    (inp * out_features + out_features, None)
                }
                _ => (0, None),
            };
            counts.push(LayerCount {
                index: i,
                layer: layer.to_string(),
                output: shapes[i + 1].to_string(),
                count,
                banks,
            });
        }
        Ok(counts)
    }

    /// The `|`-separated layer list accepted by [`ModelSpec::parse_layers`].
    pub fn layers_string(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
        text.split('|').map(str::parse).collect()
    }
}

/// Total learnable scalars of `spec`.
pub fn count_parameters(spec: &ModelSpec) -> Result<usize> {
    Ok(spec.layer_parameter_counts()?.iter().map(|c| c.count).sum())
}

/// Relative parameter-count difference `|a - b| / max(a, b)`.
pub fn parameter_imbalance(a: usize, b: usize) -> f64 {
    let (a, b) = (a as f64, b as f64);
    (a - b).abs() / a.max(b)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv {
        spec: Conv3dSpec,
        weight: Tensor,
        bias: Tensor,
    },
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    Pif(PifLayerState),
}

/// A network: its description plus one parameter set per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
}

/// Forward behavior of stochastic layers.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// Activation flowing between layers on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Single(Var),
    Branches(PifOutput),
}

impl Flow {
    fn single(self, layer: usize) -> Result<Var> {
        match self {
            Flow::Single(v) => Ok(v),
            Flow::Branches(_) => Err(Error::InvalidShape(format!(
                "layer {layer} cannot consume PIF branches"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// Pre-sigmoid output, `(N, 1)`.
    pub logit: Var,
    /// Sigmoid output, `(N, 1)`.
    pub prob: Var,
    /// Parameter variables in [`Model::parameters`] order.
    pub params: Vec<Var>,
    /// `trace[i]` is the input of layer `i`; `trace[layers]` is the output.
    pub trace: Vec<Flow>,
}

const CHECKPOINT_FORMAT: &str = "pifnet-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: ModelSpec,
    params: Vec<Tensor>,
}

impl Model {
    /// He-initialized weights and zero biases.
    pub fn init(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let params = match (*layer, shapes[i]) {
                (
                    LayerSpec::Conv {
                        filters,
                        kernel,
                        stride,
                        padding,
                    },
                    ActShape::Volume { channels, .. },
                ) => {
                    let conv = Conv3dSpec {
                        in_channels: channels,
                        out_channels: filters,
                        kernel_size: kernel,
                        stride,
                        padding,
                    };
                    LayerParams::Conv {
                        spec: conv,
                        weight: he_init(&conv.weight_shape(), rng)?,
                        bias: zero_bias(filters),
                    }
                }
                (LayerSpec::Linear { out_features }, ActShape::Flat(inp)) => LayerParams::Linear {
                    weight: he_init(&[out_features, inp], rng)?,
                    bias: zero_bias(out_features),
                },
                (
                    LayerSpec::Pif {
                        patch_size,
                        kernel,
                        filters,
                        overlap,
                    },
                    ActShape::Volume { channels, extents },
                ) => {
                    let mut grid = make_patch_grid(extents, patch_size)?;
                    if !overlap {
                        grid = grid.without_overlap();
                    }
                    LayerParams::Pif(PifLayerState::new(grid, channels, kernel, filters, rng)?)
                }
                _ => LayerParams::None,
            };
            layers.push(params);
        }
        Ok(Model { spec, layers })
    }

    /// Rebuilds a model from parameters in [`Model::parameters`] order.
    pub fn from_parameters(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        let mut model = Model::init(spec, &mut Rng::new(0))?;
        let expected = model.parameters().len();
        if params.len() != expected {
            return Err(Error::Config(format!(
                "model `{}` has {expected} parameter tensors, {} supplied",
                model.spec.name,
                params.len()
            )));
        }
        for (dst, src) in model.parameters_mut().into_iter().zip(params) {
            if dst.shape() != src.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    expected: dst.shape().to_vec(),
                    actual: src.shape().to_vec(),
                });
            }
            *dst = src;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias, .. } | LayerParams::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::Pif(state) => {
                    for Bank { weight, bias } in state.banks() {
                        out.push(weight);
                        out.push(bias);
                    }
                }
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias, .. } | LayerParams::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::Pif(state) => {
                    for Bank { weight, bias } in state.banks_mut() {
                        out.push(weight);
                        out.push(bias);
                    }
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// Records a forward pass of `input` (`(N, C, D, H, W)`) on `g`.
    pub fn forward(&self, g: &mut Graph, input: Var, mode: &mut Mode<'_>) -> Result<Forward> {
        let shape = g.value(input).shape().to_vec();
        let want = self.spec.input;
        if shape.len() != 5 || shape[1..] != want {
            return Err(Error::ShapeMismatch {
                op: "model input",
                expected: vec![shape.first().copied().unwrap_or(1), want[0], want[1], want[2], want[3]],
                actual: shape,
            });
        }
        let mut params = Vec::new();
        let mut trace = vec![Flow::Single(input)];
        let mut cur = Flow::Single(input);
        let mut logit = None;
        for (i, (layer, lp)) in self.spec.layers.iter().zip(&self.layers).enumerate() {
            cur = match (*layer, lp) {
                (LayerSpec::Conv { .. }, LayerParams::Conv { spec, weight, bias }) => {
                    let (w, b) = (g.param(weight), g.param(bias));
                    params.extend([w, b]);
                    Flow::Single(g.conv3d(cur.single(i)?, w, b, *spec)?)
                }
                (LayerSpec::MaxPool { kernel, stride }, _) => {
                    Flow::Single(g.maxpool3d(cur.single(i)?, PoolSpec::new(kernel, stride))?)
                }
                (LayerSpec::Elu, _) => map_flow(g, cur, |g, v| g.elu(v))?,
                (LayerSpec::Dropout { p }, _) => match mode {
                    Mode::Train(rng) => map_flow(g, cur, |g, v| g.dropout(v, p, Some(&mut **rng)))?,
                    Mode::Eval => cur,
                },
                (LayerSpec::Pif { .. }, LayerParams::Pif(state)) => {
                    let banks = g.pif_params(state);
                    params.extend(banks.iter().flat_map(|&(w, b)| [w, b]));
                    Flow::Branches(g.pif(cur.single(i)?, state, &banks)?)
                }
                (LayerSpec::FlattenConcat, _) => match cur {
                    Flow::Single(v) => Flow::Single(g.flatten(v)?),
                    Flow::Branches(PifOutput { original, overlap }) => {
                        let mut parts = vec![g.flatten(original)?];
                        if let Some(ov) = overlap {
                            parts.push(g.flatten(ov)?);
                        }
                        Flow::Single(g.concat(&parts)?)
                    }
                },
                (LayerSpec::Linear { .. }, LayerParams::Linear { weight, bias }) => {
                    let (w, b) = (g.param(weight), g.param(bias));
                    params.extend([w, b]);
                    Flow::Single(g.linear(cur.single(i)?, w, b)?)
                }
                (LayerSpec::Sigmoid, _) => {
                    let x = cur.single(i)?;
                    logit = Some(x);
                    Flow::Single(g.sigmoid(x)?)
                }
                _ => {
                    return Err(Error::Config(format!(
                        "layer {i} ({layer}) has no matching parameters"
                    )))
                }
            };
            trace.push(cur);
        }
        let prob = cur.single(self.spec.layers.len())?;
        let logit = logit.ok_or_else(|| Error::InvalidShape("model has no sigmoid output".into()))?;
        Ok(Forward {
            logit,
            prob,
            params,
            trace,
        })
    }

    /// Copies gradients from a finished backward pass into the parameter slots.
    pub fn load_grads(&mut self, g: &Graph, vars: &[Var]) -> Result<()> {
        let params = self.parameters_mut();
        if params.len() != vars.len() {
            return Err(Error::Config("parameter/variable count mismatch".into()));
        }
        for (i, (p, &v)) in params.into_iter().zip(vars).enumerate() {
            let grad = g.grad(v).ok_or(Error::MissingGradient(i))?;
            p.set_grad(grad.to_vec())?;
        }
        Ok(())
    }

    /// Sigmoid outputs for a batch, without dropout.
    pub fn predict(&self, input: Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(input);
        let fwd = self.forward(&mut g, x, &mut Mode::Eval)?;
        Ok(g.value(fwd.prob).data().to_vec())
    }

    /// Hex SHA-256 prefix over the spec and every parameter bit pattern.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        for p in self.parameters() {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.parameters().into_iter().cloned().collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.into(),
                reason: format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
            });
        }
        Model::from_parameters(ckpt.spec, ckpt.params)
    }
}

fn map_flow(g: &mut Graph, flow: Flow, mut f: impl FnMut(&mut Graph, Var) -> Result<Var>) -> Result<Flow> {
    Ok(match flow {
        Flow::Single(v) => Flow::Single(f(g, v)?),
        Flow::Branches(PifOutput { original, overlap }) => Flow::Branches(PifOutput {
            original: f(g, original)?,
            overlap: overlap.map(|v| f(g, v)).transpose()?,
        }),
    })
}
