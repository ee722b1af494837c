mod common;

use common::*;
use pifnet::layers::conv::Conv3dSpec;
use pifnet::pif::{make_patch_grid, Bank, PifLayerState};
use pifnet::{Graph, Rng, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 10;

fn assert_close(name: &str, instance: u64, err: f64) {
    assert!(err < TOL, "{name} instance {instance}: relative error {err:e}");
}

/// Entries of magnitude at least 0.05 so kinks stay further than `h` away.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let t = random_tensor(shape, rng);
    t.map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

#[test]
fn conv3d_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(1000 + i);
        let c = rng.int_inclusive(1, 3) as usize;
        let o = rng.int_inclusive(1, 3) as usize;
        let k = rng.int_inclusive(1, 3) as usize;
        let stride = rng.int_inclusive(1, 2) as usize;
        let padding = rng.int_inclusive(0, 1) as usize;
        let spec = conv_spec(c, o, k, stride, padding);
        let e = rng.int_inclusive(k as i64, 6) as usize;
        let x = random_tensor(&[2, c, e, e + 1, e], &mut rng);
        let w = random_tensor(&spec.weight_shape(), &mut rng);
        let b = random_tensor(&[o], &mut rng);
        let out_shape = pifnet::layers::conv::conv3d(&x, &spec, &w, &b).unwrap().shape().to_vec();
        let coef = random_tensor(&out_shape, &mut rng);
        let build = move |g: &mut Graph, v: &[Var]| {
            let y = g.conv3d(v[0], v[1], v[2], spec).unwrap();
            weighted_sum(g, y, &coef)
        };
        assert_close("conv3d", i, grad_check(&[x, w, b], &build, H, 40, &mut rng));
    }
}

#[test]
fn linear_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(2000 + i);
        let n = rng.int_inclusive(1, 4) as usize;
        let f = rng.int_inclusive(1, 12) as usize;
        let o = rng.int_inclusive(1, 5) as usize;
        let x = random_tensor(&[n, f], &mut rng);
        let w = random_tensor(&[o, f], &mut rng);
        let b = random_tensor(&[o], &mut rng);
        let coef = random_tensor(&[n, o], &mut rng);
        let build = move |g: &mut Graph, v: &[Var]| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, &coef)
        };
        assert_close("linear", i, grad_check(&[x, w, b], &build, H, 40, &mut rng));
    }
}

#[test]
fn elu_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(3000 + i);
        let x = away_from_zero(&[3, 17], &mut rng);
        let coef = random_tensor(&[3, 17], &mut rng);
        let build = move |g: &mut Graph, v: &[Var]| {
            let y = g.elu(v[0]).unwrap();
            weighted_sum(g, y, &coef)
        };
        assert_close("elu", i, grad_check(&[x], &build, H, 64, &mut rng));
    }
}

#[test]
fn sigmoid_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(4000 + i);
        let x = random_tensor(&[4, 9], &mut rng).map(|v| 3.0 * v);
        let coef = random_tensor(&[4, 9], &mut rng);
        let build = move |g: &mut Graph, v: &[Var]| {
            let y = g.sigmoid(v[0]).unwrap();
            weighted_sum(g, y, &coef)
        };
        assert_close("sigmoid", i, grad_check(&[x], &build, H, 64, &mut rng));
    }
}

#[test]
fn bce_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(5000 + i);
        let n = rng.int_inclusive(1, 8) as usize;
        let p = uniform_tensor(&[n, 1], 0.05, 0.95, &mut rng);
        let labels: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        let build = move |g: &mut Graph, v: &[Var]| g.bce(v[0], &labels).unwrap();
        assert_close("bce", i, grad_check(&[p], &build, H, 64, &mut rng));
    }
}

#[test]
fn pif_gradients() {
    for i in 0..INSTANCES {
        let mut rng = Rng::new(6000 + i);
        let (x, state) = random_pif_case(&mut rng);
        let grid = state.grid().clone();
        let (c, k, f) = (state.in_channels(), state.kernel_size(), state.filters());
        let nb = state.banks().len();
        let (o, ov) = pifnet::pif::pif_forward(&x, &state).unwrap();
        let co = random_tensor(o.shape(), &mut rng);
        let cv = ov.map(|t| random_tensor(t.shape(), &mut rng));
        let mut inputs = vec![x];
        for bank in state.banks() {
            inputs.push(bank.weight.clone());
            inputs.push(bank.bias.clone());
        }
        let build = move |g: &mut Graph, v: &[Var]| {
            let banks: Vec<Bank> = (0..nb)
                .map(|p| Bank {
                    weight: g.value(v[1 + 2 * p]).clone(),
                    bias: g.value(v[2 + 2 * p]).clone(),
                })
                .collect();
            let st = PifLayerState::from_banks(grid.clone(), c, k, f, banks).unwrap();
            let bank_vars: Vec<(Var, Var)> = (0..nb).map(|p| (v[1 + 2 * p], v[2 + 2 * p])).collect();
            let out = g.pif(v[0], &st, &bank_vars).unwrap();
            let mut loss = weighted_sum(g, out.original, &co);
            if let (Some(ov), Some(cv)) = (out.overlap, cv.as_ref()) {
                let s = weighted_sum(g, ov, cv);
                loss = g.elementwise(pifnet::ElementwiseOp::Add, loss, s).unwrap();
            }
            loss
        };
        assert_close("pif", i, grad_check(&inputs, &build, H, 12, &mut rng));
    }
}

#[test]
fn composed_network_gradients() {
    let mut rng = Rng::new(7000);
    let grid = make_patch_grid([4, 4, 4], 2).unwrap();
    let spec = Conv3dSpec::valid(1, 2, 3);
    let x = random_tensor(&[2, 1, 6, 6, 6], &mut rng);
    let w = random_tensor(&spec.weight_shape(), &mut rng).map(|v| 0.5 * v);
    let b = random_tensor(&[2], &mut rng);
    let state = PifLayerState::new(grid.clone(), 2, 2, 1, &mut rng).unwrap();
    let nb = state.banks().len();
    let mut inputs = vec![x, w, b];
    for bank in state.banks() {
        inputs.push(bank.weight.clone());
        inputs.push(bank.bias.clone());
    }
    // 8 original blocks plus 1 overlap block, one filter, 1³ each
    let feat = nb;
    inputs.push(random_tensor(&[1, feat], &mut rng).map(|v| 0.3 * v));
    inputs.push(Tensor::zeros(&[1]));
    let build = move |g: &mut Graph, v: &[Var]| {
        let h = g.conv3d(v[0], v[1], v[2], spec).unwrap();
        let h = g.elu(h).unwrap();
        let banks: Vec<Bank> = (0..nb)
            .map(|p| Bank {
                weight: g.value(v[3 + 2 * p]).clone(),
                bias: g.value(v[4 + 2 * p]).clone(),
            })
            .collect();
        let st = PifLayerState::from_banks(grid.clone(), 2, 2, 1, banks).unwrap();
        let bank_vars: Vec<(Var, Var)> = (0..nb).map(|p| (v[3 + 2 * p], v[4 + 2 * p])).collect();
        let out = g.pif(h, &st, &bank_vars).unwrap();
        let a = g.flatten(out.original).unwrap();
        let b = g.flatten(out.overlap.unwrap()).unwrap();
        let flat = g.concat(&[a, b]).unwrap();
        let z = g.linear(flat, v[v.len() - 2], v[v.len() - 1]).unwrap();
        let p = g.sigmoid(z).unwrap();
        g.bce(p, &[1.0, 0.0]).unwrap()
    };
    let err = grad_check(&inputs, &build, H, 10, &mut rng);
    assert!(err < TOL, "relative error {err:e}");
}
