#![allow(dead_code)]

use pifnet::data::synth::site_mean;
use pifnet::data::{generate_dataset, select, split_subjects, Site, Split, SplitFractions, SynthSpec, VolumeRecord};
use pifnet::layers::conv::{conv3d, Conv3dSpec};
use pifnet::training::balanced_accuracy;
use pifnet::model::{LayerSpec, Model, ModelSpec};
use pifnet::pif::{make_patch_grid, PatchKind, PifLayerState};
use pifnet::{ElementwiseOp, Graph, Rng, Tensor, Var};

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// He-initialized model with every bias tensor zeroed.
pub fn bias_free(spec: ModelSpec, seed: u64) -> Model {
    let mut m = Model::init(spec, &mut Rng::new(seed)).unwrap();
    for (i, p) in m.parameters_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    m
}

/// Small network with a conv, a pool and a PIF layer ahead of the head.
pub fn small_pif_spec() -> ModelSpec {
    ModelSpec::new(
        "small-pif",
        [2, 14, 14, 14],
        vec![
            LayerSpec::conv(3, 3),
            LayerSpec::Elu,
            LayerSpec::pool(3, 3),
            LayerSpec::Dropout { p: 0.3 },
            LayerSpec::pif(2, 2, 2),
            LayerSpec::Elu,
            LayerSpec::FlattenConcat,
            LayerSpec::Linear { out_features: 5 },
            LayerSpec::Elu,
            LayerSpec::Linear { out_features: 1 },
            LayerSpec::Sigmoid,
        ],
    )
}

/// Input box `[lo, hi)` per axis that can influence output box `[lo, hi)` of
/// layers `0..upto`, walking window arithmetic backwards.
pub fn receptive_box(spec: &ModelSpec, upto: usize, mut lo: [i64; 3], mut hi: [i64; 3]) -> ([i64; 3], [i64; 3]) {
    for layer in spec.layers[..upto].iter().rev() {
        let (k, s, p) = match *layer {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => (kernel as i64, stride as i64, padding as i64),
            LayerSpec::MaxPool { kernel, stride } => (kernel as i64, stride as i64, 0),
            _ => continue,
        };
        for a in 0..3 {
            lo[a] = lo[a] * s - p;
            hi[a] = (hi[a] - 1) * s - p + k;
        }
    }
    (lo, hi)
}

pub fn conv_spec(c: usize, o: usize, k: usize, stride: usize, padding: usize) -> Conv3dSpec {
    Conv3dSpec {
        in_channels: c,
        out_channels: o,
        kernel_size: k,
        stride,
        padding,
    }
}

/// Random PIF case: extents ≤ 16 per axis, s ∈ {2, 4, 8}, k ≤ s, channels ≤ 4.
pub fn random_pif_case(rng: &mut Rng) -> (Tensor, PifLayerState) {
    let s = [2usize, 4, 8][rng.int_inclusive(0, 2) as usize];
    let extents = [0; 3].map(|_| s * rng.int_inclusive(1, (16 / s) as i64) as usize);
    let k = rng.int_inclusive(1, s as i64) as usize;
    let c = rng.int_inclusive(1, 4) as usize;
    let f = rng.int_inclusive(1, 3) as usize;
    let n = rng.int_inclusive(1, 2) as usize;
    let grid = make_patch_grid(extents, s).unwrap();
    let mut state = PifLayerState::new(grid, c, k, f, rng).unwrap();
    for bank in state.banks_mut() {
        bank.bias = random_tensor(&[f], rng);
    }
    let input = random_tensor(&[n, c, extents[0], extents[1], extents[2]], rng);
    (input, state)
}

fn crop(input: &Tensor, origin: [usize; 3], s: usize) -> Tensor {
    let sh = input.shape();
    let (n, c) = (sh[0], sh[1]);
    let mut data = Vec::with_capacity(n * c * s * s * s);
    for ni in 0..n {
        for ci in 0..c {
            for z in 0..s {
                for y in 0..s {
                    for x in 0..s {
                        data.push(input.at(&[ni, ci, origin[0] + z, origin[1] + y, origin[2] + x]));
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, s, s, s], data).unwrap()
}

/// Slice each patch, convolve it with its own bank, stitch the blocks back.
pub fn pif_oracle_forward(input: &Tensor, state: &PifLayerState) -> (Tensor, Option<Tensor>) {
    let grid = state.grid();
    let s = grid.patch_size();
    let (f, b) = (state.filters(), state.block_size());
    let n = input.shape()[0];
    let g = grid.grid_counts();
    let spec = Conv3dSpec::valid(state.in_channels(), f, state.kernel_size());
    let n_ov = grid.overlaps().len();
    let mut original = Tensor::zeros(&[n, f, g[0] * b, g[1] * b, g[2] * b]);
    let mut overlap = Tensor::zeros(&[n, n_ov.max(1), f, b, b, b]);
    for (p, (origin, kind)) in grid.origins().enumerate() {
        let bank = &state.banks()[p];
        let block = conv3d(&crop(input, origin, s), &spec, &bank.weight, &bank.bias).unwrap();
        for ni in 0..n {
            for fi in 0..f {
                for z in 0..b {
                    for y in 0..b {
                        for x in 0..b {
                            let v = block.at(&[ni, fi, z, y, x]);
                            let off = match kind {
                                PatchKind::Original => {
                                    let gi = [origin[0] / s, origin[1] / s, origin[2] / s];
                                    original.offset(&[ni, fi, gi[0] * b + z, gi[1] * b + y, gi[2] * b + x])
                                }
                                PatchKind::Overlap => {
                                    overlap.offset(&[ni, p - grid.originals().len(), fi, z, y, x])
                                }
                            };
                            match kind {
                                PatchKind::Original => original.data_mut()[off] = v,
                                PatchKind::Overlap => overlap.data_mut()[off] = v,
                            }
                        }
                    }
                }
            }
        }
    }
    (original, (n_ov > 0).then_some(overlap))
}

/// Gradients of `Σ co·original + Σ cv·overlap` by direct summation:
/// `(d input, [(d weight, d bias)] per bank)`.
pub fn pif_oracle_backward(
    input: &Tensor,
    state: &PifLayerState,
    co: &Tensor,
    cv: Option<&Tensor>,
) -> (Tensor, Vec<(Tensor, Tensor)>) {
    let grid = state.grid();
    let s = grid.patch_size();
    let (f, b, k, c) = (state.filters(), state.block_size(), state.kernel_size(), state.in_channels());
    let n = input.shape()[0];
    let mut gx = Tensor::zeros(input.shape());
    let mut banks = Vec::new();
    for (p, (origin, kind)) in grid.origins().enumerate() {
        let bank = &state.banks()[p];
        let mut gw = Tensor::zeros(bank.weight.shape());
        let mut gb = Tensor::zeros(&[f]);
        for ni in 0..n {
            for fi in 0..f {
                for z in 0..b {
                    for y in 0..b {
                        for x in 0..b {
                            let coef = match kind {
                                PatchKind::Original => co.at(&[ni, fi, origin[0] / s * b + z, origin[1] / s * b + y, origin[2] / s * b + x]),
                                PatchKind::Overlap => cv.unwrap().at(&[ni, p - grid.originals().len(), fi, z, y, x]),
                            };
                            gb.data_mut()[fi] += coef;
                            for ci in 0..c {
                                for a in 0..k {
                                    for bb in 0..k {
                                        for d in 0..k {
                                            let xi = [ni, ci, origin[0] + z + a, origin[1] + y + bb, origin[2] + x + d];
                                            let wi = [fi, ci, a, bb, d];
                                            let wo = gw.offset(&wi);
                                            gw.data_mut()[wo] += coef * input.at(&xi);
                                            let xo = gx.offset(&xi);
                                            gx.data_mut()[xo] += coef * bank.weight.at(&wi);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        banks.push((gw, gb));
    }
    (gx, banks)
}

/// Library gradients of the same weighted sum via the tape.
pub fn pif_tape_backward(
    input: &Tensor,
    state: &PifLayerState,
    co: &Tensor,
    cv: Option<&Tensor>,
) -> (Tensor, Vec<(Tensor, Tensor)>) {
    let mut g = Graph::new();
    let x = g.param(input);
    let banks = g.pif_params(state);
    let out = g.pif(x, state, &banks).unwrap();
    let co_v = g.constant(co.clone());
    let m = g.elementwise(ElementwiseOp::Mul, out.original, co_v).unwrap();
    let mut loss = g.sum(m).unwrap();
    if let (Some(ov), Some(cv)) = (out.overlap, cv) {
        let cv_v = g.constant(cv.clone());
        let m = g.elementwise(ElementwiseOp::Mul, ov, cv_v).unwrap();
        let s2 = g.sum(m).unwrap();
        loss = g.elementwise(ElementwiseOp::Add, loss, s2).unwrap();
    }
    g.backward(loss).unwrap();
    let grad = |v: Var, shape: &[usize]| Tensor::new(shape.to_vec(), g.grad(v).unwrap().to_vec()).unwrap();
    let gx = grad(x, input.shape());
    let gb = banks
        .iter()
        .zip(state.banks())
        .map(|(&(w, b), bank)| (grad(w, bank.weight.shape()), grad(b, bank.bias.shape())))
        .collect();
    (gx, gb)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative error between tape gradients and central differences of
/// the scalar built by `build`, probing up to `probes` entries per input.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Graph, &[Var]) -> Var,
    h: f64,
    probes: usize,
    rng: &mut Rng,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let picks: Vec<usize> = if t.numel() <= probes {
            (0..t.numel()).collect()
        } else {
            (0..probes).map(|_| rng.int_inclusive(0, t.numel() as i64 - 1) as usize).collect()
        };
        for j in picks {
            let mut ts = inputs.to_vec();
            ts[i].data_mut()[j] += h;
            let up = eval(&ts);
            ts[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&ts);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Scalar `Σ c·v` with fixed coefficients, so every output gets a distinct weight.
pub fn weighted_sum(g: &mut Graph, v: Var, coef: &Tensor) -> Var {
    let c = g.constant(coef.clone());
    let m = g.elementwise(ElementwiseOp::Mul, v, c).unwrap();
    g.sum(m).unwrap()
}

/// 300 desk-scale volumes split by subject into 200 train / 50 val / 50 test.
pub fn desk_records(spec: &SynthSpec, seed: u64) -> Vec<VolumeRecord> {
    let mut records = generate_dataset(spec, seed).unwrap();
    let fractions = SplitFractions::new(1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0).unwrap();
    split_subjects(&mut records, fractions, seed).unwrap();
    records
}

/// Balanced accuracy on the test split of a threshold on the signed site
/// means, with the threshold placed midway between the train class means.
pub fn oracle_separability(records: &[VolumeRecord], sites: &[Site]) -> f64 {
    let feature = |r: &VolumeRecord| -> f64 {
        sites
            .iter()
            .map(|s| s.amplitude.signum() * site_mean(&r.volume, s))
            .sum()
    };
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for r in select(records, Split::Train) {
        sums[r.label as usize] += feature(r);
        counts[r.label as usize] += 1;
    }
    let threshold = (sums[0] / counts[0] as f64 + sums[1] / counts[1] as f64) / 2.0;
    let test = select(records, Split::Test);
    let scores: Vec<f64> = test
        .iter()
        .map(|r| if feature(r) > threshold { 1.0 } else { 0.0 })
        .collect();
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    balanced_accuracy(&scores, &labels).unwrap()
}
