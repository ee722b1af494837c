//! Patch individual filter (PIF) layers.
//!
//! A PIF layer splits each input feature map into a grid of `s × s × s` patches,
//! convolves every patch with its own kernel bank (weights are shared inside a
//! patch, never across patches), and reassembles the per-patch outputs in grid
//! order. A second branch applies separate banks to patches shifted by
//! `floor(s / 2)` on every axis, keeping only shifted patches that fit inside the
//! map; its blocks are stacked in origin order.
//!
//! With `k == s` every patch produces a single voxel per filter, which is a
//! locally connected (unshared) convolution.

use serde::{Deserialize, Serialize};

use crate::autodiff::{crop_volume, uncrop_add, GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::layers::conv::{self, Conv3dSpec, ConvDims};
use crate::layers::init::{he_init, zero_bias};
use crate::rng::Rng;
use crate::tensor::Tensor;

const AXES: [&str; 3] = ["depth", "height", "width"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchKind {
    Original,
    Overlap,
}

/// Partition of a feature map's spatial extent into patches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    extents: [usize; 3],
    patch_size: usize,
    originals: Vec<[usize; 3]>,
    overlaps: Vec<[usize; 3]>,
}

impl PatchGrid {
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Patches per axis in the original tiling.
    pub fn grid_counts(&self) -> [usize; 3] {
        self.extents.map(|e| e / self.patch_size)
    }

    pub fn originals(&self) -> &[[usize; 3]] {
        &self.originals
    }

    pub fn overlaps(&self) -> &[[usize; 3]] {
        &self.overlaps
    }

    pub fn len(&self) -> usize {
        self.originals.len() + self.overlaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All origins in bank order (originals, then overlaps), tagged by kind.
    pub fn origins(&self) -> impl Iterator<Item = ([usize; 3], PatchKind)> + '_ {
        self.originals
            .iter()
            .map(|&o| (o, PatchKind::Original))
            .chain(self.overlaps.iter().map(|&o| (o, PatchKind::Overlap)))
    }

    pub fn origin(&self, patch: usize) -> Option<([usize; 3], PatchKind)> {
        self.origins().nth(patch)
    }

    /// Same tiling with the shifted branch removed.
    pub fn without_overlap(mut self) -> Self {
        self.overlaps.clear();
        self
    }
}

/// Splits `extents` into an exact tiling of `s`-sized patches plus the shifted
/// overlap origins that fit inside the map.
pub fn make_patch_grid(extents: [usize; 3], s: usize) -> Result<PatchGrid> {
    if s == 0 {
        return Err(Error::Config("patch size must be >= 1".into()));
    }
    for (axis, &e) in extents.iter().enumerate() {
        if e == 0 || e % s != 0 {
            return Err(Error::Config(format!(
                "{} extent {e} is not a multiple of patch size {s}",
                AXES[axis]
            )));
        }
    }
    let counts = extents.map(|e| e / s);
    let shift = s / 2;
    let mut originals = Vec::with_capacity(counts.iter().product());
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for l in 0..counts[2] {
                originals.push([i * s, j * s, l * s]);
            }
        }
    }
    // shift >= 1 is needed for a distinct overlap patch
    let overlaps = if shift == 0 {
        Vec::new()
    } else {
        originals
            .iter()
            .map(|o| o.map(|v| v + shift))
            .filter(|o| (0..3).all(|a| o[a] + s <= extents[a]))
            .collect()
    };
    Ok(PatchGrid {
        extents,
        patch_size: s,
        originals,
        overlaps,
    })
}

/// Weights and bias of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-patch kernel banks of a PIF layer, originals first, then overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PifLayerState {
    grid: PatchGrid,
    in_channels: usize,
    kernel_size: usize,
    filters: usize,
    banks: Vec<Bank>,
}

impl PifLayerState {
    pub fn new(
        grid: PatchGrid,
        in_channels: usize,
        kernel_size: usize,
        filters: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let shape = [filters, in_channels, kernel_size, kernel_size, kernel_size];
        let banks = (0..grid.len())
            .map(|_| {
                Ok(Bank {
                    weight: he_init(&shape, rng)?,
                    bias: zero_bias(filters),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_banks(grid, in_channels, kernel_size, filters, banks)
    }

    pub fn from_banks(
        grid: PatchGrid,
        in_channels: usize,
        kernel_size: usize,
        filters: usize,
        banks: Vec<Bank>,
    ) -> Result<Self> {
        if kernel_size == 0 || kernel_size > grid.patch_size {
            return Err(Error::Config(format!(
                "kernel size {kernel_size} must be in 1..={} (the patch size)",
                grid.patch_size
            )));
        }
        if filters == 0 || in_channels == 0 {
            return Err(Error::Config("PIF filters and channels must be >= 1".into()));
        }
        if banks.len() != grid.len() {
            return Err(Error::Config(format!(
                "{} banks given for {} patches",
                banks.len(),
                grid.len()
            )));
        }
        let spec = Conv3dSpec::valid(in_channels, filters, kernel_size);
        for bank in &banks {
            if bank.weight.shape() != spec.weight_shape() || bank.bias.shape() != [filters] {
                return Err(Error::ShapeMismatch {
                    op: "pif bank",
                    expected: spec.weight_shape().to_vec(),
                    actual: bank.weight.shape().to_vec(),
                });
            }
        }
        Ok(PifLayerState {
            grid,
            in_channels,
            kernel_size,
            filters,
            banks,
        })
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn banks(&self) -> &[Bank] {
        &self.banks
    }

    pub fn banks_mut(&mut self) -> &mut [Bank] {
        &mut self.banks
    }

    pub fn has_overlap(&self) -> bool {
        !self.grid.overlaps.is_empty()
    }

    /// Output edge length of one patch: `s - k + 1`.
    pub fn block_size(&self) -> usize {
        self.grid.patch_size - self.kernel_size + 1
    }

    pub fn bank_spec(&self) -> Conv3dSpec {
        Conv3dSpec::valid(self.in_channels, self.filters, self.kernel_size)
    }

    pub fn parameter_count(&self) -> usize {
        self.grid.len() * self.bank_spec().parameter_count()
    }

    pub fn original_layout(&self) -> BranchLayout {
        BranchLayout::Reassembled {
            grid: self.grid.grid_counts(),
        }
    }

    /// `(N, f, G_d·b, G_h·b, G_w·b)`
    pub fn original_shape(&self, batch: usize) -> Vec<usize> {
        self.original_layout()
            .output_shape(batch, self.filters, self.block_size(), self.grid.originals.len())
    }

    /// `(N, n_overlap, f, b, b, b)`, or `None` without an overlap branch.
    pub fn overlap_shape(&self, batch: usize) -> Option<Vec<usize>> {
        self.has_overlap().then(|| {
            BranchLayout::Stacked.output_shape(
                batch,
                self.filters,
                self.block_size(),
                self.grid.overlaps.len(),
            )
        })
    }

    /// Branch, position within the branch, and layout of bank `patch`.
    pub fn locate(&self, patch: usize) -> Result<(PatchKind, usize, BranchLayout)> {
        let n_orig = self.grid.originals.len();
        if patch < n_orig {
            Ok((PatchKind::Original, patch, self.original_layout()))
        } else if patch < self.grid.len() {
            Ok((PatchKind::Overlap, patch - n_orig, BranchLayout::Stacked))
        } else {
            Err(Error::InvalidIndex(format!(
                "patch {patch} out of range (layer has {} patches)",
                self.grid.len()
            )))
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5
            || shape[1] != self.in_channels
            || [shape[2], shape[3], shape[4]] != self.grid.extents
        {
            let e = self.grid.extents;
            return Err(Error::ShapeMismatch {
                op: "pif input",
                expected: vec![shape.first().copied().unwrap_or(1), self.in_channels, e[0], e[1], e[2]],
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn branch(&self, kind: PatchKind, input: Var, bank_vars: &[(Var, Var)]) -> PifBranch {
        let n_orig = self.grid.originals.len();
        let (origins, vars, layout) = match kind {
            PatchKind::Original => (&self.grid.originals, &bank_vars[..n_orig], self.original_layout()),
            PatchKind::Overlap => (&self.grid.overlaps, &bank_vars[n_orig..], BranchLayout::Stacked),
        };
        PifBranch {
            input,
            weights: vars.iter().map(|v| v.0).collect(),
            biases: vars.iter().map(|v| v.1).collect(),
            origins: origins.clone(),
            spec: self.bank_spec(),
            patch_size: self.grid.patch_size,
            layout,
        }
    }
}

/// How the per-patch `(N, f, b, b, b)` blocks of a branch are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchLayout {
    /// Blocks tile a `(N, f, G_d·b, G_h·b, G_w·b)` map in grid order.
    Reassembled { grid: [usize; 3] },
    /// Blocks stacked as `(N, count, f, b, b, b)`.
    Stacked,
}

impl BranchLayout {
    pub fn output_shape(&self, batch: usize, filters: usize, b: usize, count: usize) -> Vec<usize> {
        match self {
            BranchLayout::Reassembled { grid } => {
                vec![batch, filters, grid[0] * b, grid[1] * b, grid[2] * b]
            }
            BranchLayout::Stacked => vec![batch, count, filters, b, b, b],
        }
    }

    /// Flat offsets in the branch output of every element of block `idx`, in
    /// `(N, f, b, b, b)` order.
    pub fn block_offsets(&self, batch: usize, filters: usize, b: usize, count: usize, idx: usize) -> Vec<usize> {
        let b3 = b * b * b;
        let mut offsets = Vec::with_capacity(batch * filters * b3);
        match *self {
            BranchLayout::Reassembled { grid } => {
                let (gi, gj, gl) = (idx / (grid[1] * grid[2]), (idx / grid[2]) % grid[1], idx % grid[2]);
                let full = [grid[0] * b, grid[1] * b, grid[2] * b];
                let plane = full[0] * full[1] * full[2];
                for n in 0..batch {
                    for f in 0..filters {
                        let base = (n * filters + f) * plane;
                        for z in 0..b {
                            for y in 0..b {
                                for x in 0..b {
                                    offsets.push(
                                        base + ((gi * b + z) * full[1] + gj * b + y) * full[2] + gl * b + x,
                                    );
                                }
                            }
                        }
                    }
                }
            }
            BranchLayout::Stacked => {
                for n in 0..batch {
                    let base = ((n * count + idx) * filters) * b3;
                    offsets.extend(base..base + filters * b3);
                }
            }
        }
        offsets
    }
}

/// One branch of a PIF layer recorded on a [`Graph`].
#[derive(Debug)]
pub(crate) struct PifBranch {
    input: Var,
    weights: Vec<Var>,
    biases: Vec<Var>,
    origins: Vec<[usize; 3]>,
    spec: Conv3dSpec,
    patch_size: usize,
    layout: BranchLayout,
}

impl PifBranch {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.input];
        v.extend(&self.weights);
        v.extend(&self.biases);
        v
    }

    fn patch_dims(&self, batch: usize) -> ConvDims {
        let s = self.patch_size;
        ConvDims::resolve(&[batch, self.spec.in_channels, s, s, s], &self.spec)
            .expect("bank fits its patch")
    }

    fn forward(&self, input: &Tensor, banks: &[(&Tensor, &Tensor)]) -> Result<Tensor> {
        let batch = input.shape()[0];
        let dims = self.patch_dims(batch);
        let b = dims.output[0];
        let f = self.spec.out_channels;
        let count = self.origins.len();
        let shape = self.layout.output_shape(batch, f, b, count);
        let mut out = vec![0.0; shape.iter().product()];
        let mut block = vec![0.0; batch * f * b * b * b];
        for (idx, (&origin, (w, bias))) in self.origins.iter().zip(banks).enumerate() {
            let patch = crop_volume(input, origin, [self.patch_size; 3])?;
            conv::forward_raw(&dims, patch.data(), w.data(), bias.data(), &mut block);
            for (&o, &v) in self.layout.block_offsets(batch, f, b, count, idx).iter().zip(&block) {
                out[o] = v;
            }
        }
        let out = Tensor::new(shape, out)?;
        out.check_finite("pif")?;
        Ok(out)
    }

    pub(crate) fn backward(&self, graph: &Graph, g_out: &[f64], sink: &mut GradSink<'_>) -> Result<()> {
        let input = graph.value(self.input);
        let batch = input.shape()[0];
        let dims = self.patch_dims(batch);
        let b = dims.output[0];
        let f = self.spec.out_channels;
        let count = self.origins.len();
        let need_input = graph.needs_grad(self.input);
        let in_shape = input.shape().to_vec();
        for (idx, &origin) in self.origins.iter().enumerate() {
            let patch = crop_volume(input, origin, [self.patch_size; 3])?;
            let g_block: Vec<f64> = self
                .layout
                .block_offsets(batch, f, b, count, idx)
                .iter()
                .map(|&o| g_out[o])
                .collect();
            let grads = conv::backward_raw(
                &dims,
                patch.data(),
                graph.value(self.weights[idx]).data(),
                &g_block,
                need_input,
            );
            sink.add_slice(self.weights[idx], &grads.weight);
            sink.add_slice(self.biases[idx], &grads.bias);
            if let Some(gi) = grads.input {
                sink.add(self.input, |g| {
                    uncrop_add(g, &in_shape, origin, [self.patch_size; 3], &gi)
                });
            }
        }
        Ok(())
    }
}

/// Output of a PIF layer: the reassembled original branch and, when enabled,
/// the stacked overlap branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PifOutput {
    pub original: Var,
    pub overlap: Option<Var>,
}

impl Graph {
    /// Records a PIF layer. `bank_vars` holds `(weight, bias)` per bank in bank
    /// order, typically registered with [`Graph::param`].
    pub fn pif(&mut self, input: Var, state: &PifLayerState, bank_vars: &[(Var, Var)]) -> Result<PifOutput> {
        state.check_input(self.value(input).shape())?;
        if bank_vars.len() != state.banks.len() {
            return Err(Error::Config(format!(
                "{} bank variables for {} banks",
                bank_vars.len(),
                state.banks.len()
            )));
        }
        let original = self.pif_branch(state.branch(PatchKind::Original, input, bank_vars))?;
        let overlap = if state.has_overlap() {
            Some(self.pif_branch(state.branch(PatchKind::Overlap, input, bank_vars))?)
        } else {
            None
        };
        Ok(PifOutput { original, overlap })
    }

    fn pif_branch(&mut self, branch: PifBranch) -> Result<Var> {
        let banks: Vec<(&Tensor, &Tensor)> = branch
            .weights
            .iter()
            .zip(&branch.biases)
            .map(|(&w, &b)| (self.value(w), self.value(b)))
            .collect();
        let out = branch.forward(self.value(branch.input), &banks)?;
        Ok(self.push(out, Op::PifBranch(Box::new(branch))))
    }

    /// Registers every bank of `state` as a parameter.
    pub fn pif_params(&mut self, state: &PifLayerState) -> Vec<(Var, Var)> {
        state
            .banks
            .iter()
            .map(|b| (self.param(&b.weight), self.param(&b.bias)))
            .collect()
    }
}

/// Eager PIF forward pass: `(original branch, overlap branch)`.
pub fn pif_forward(input: &Tensor, state: &PifLayerState) -> Result<(Tensor, Option<Tensor>)> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let banks: Vec<(Var, Var)> = state
        .banks
        .iter()
        .map(|b| (g.constant(b.weight.clone()), g.constant(b.bias.clone())))
        .collect();
    let out = g.pif(x, state, &banks)?;
    Ok((
        g.value(out.original).clone(),
        out.overlap.map(|v| g.value(v).clone()),
    ))
}

/// Flattened `(original ++ overlap)` output mask of bank `patch`.
pub fn patch_output_mask(state: &PifLayerState, batch: usize, patch: usize) -> Result<Vec<bool>> {
    let (kind, idx, layout) = state.locate(patch)?;
    let b = state.block_size();
    let f = state.filters;
    let orig_len: usize = state.original_shape(batch).iter().product();
    let ov_len: usize = state
        .overlap_shape(batch)
        .map(|s| s.iter().product())
        .unwrap_or(0);
    let mut mask = vec![false; orig_len + ov_len];
    let (count, base) = match kind {
        PatchKind::Original => (state.grid.originals.len(), 0),
        PatchKind::Overlap => (state.grid.overlaps.len(), orig_len),
    };
    for o in layout.block_offsets(batch, f, b, count, idx) {
        mask[base + o] = true;
    }
    Ok(mask)
}

/// Perturbs every weight and the bias of bank `patch` by `perturbation` and
/// reports which outputs (original branch, then overlap branch, flattened)
/// changed on `input`.
pub fn pif_locality_probe(
    state: &PifLayerState,
    input: &Tensor,
    patch: usize,
    perturbation: f64,
) -> Result<Vec<bool>> {
    state.locate(patch)?;
    let flat = |(o, ov): (Tensor, Option<Tensor>)| {
        let mut v = o.into_data();
        if let Some(ov) = ov {
            v.extend(ov.into_data());
        }
        v
    };
    let before = flat(pif_forward(input, state)?);
    let mut perturbed = state.clone();
    let bank = &mut perturbed.banks[patch];
    bank.weight.data_mut().iter_mut().for_each(|w| *w += perturbation);
    bank.bias.data_mut().iter_mut().for_each(|b| *b += perturbation);
    let after = flat(pif_forward(input, &perturbed)?);
    Ok(before.iter().zip(&after).map(|(a, b)| a != b).collect())
}
