use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x W^T + b` for `x: (N, F)`, `W: (O, F)`, `b: (O)`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = match input.shape() {
        [n, f] => (*n, *f),
        s => {
            return Err(Error::InvalidShape(format!("linear expects (N, F) input, got {s:?}")));
        }
    };
    let o = match weight.shape() {
        [o, wf] if *wf == f => *o,
        s => {
            return Err(Error::ShapeMismatch {
                op: "linear weight",
                expected: vec![0, f],
                actual: s.to_vec(),
            })
        }
    };
    if bias.shape() != [o] {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            expected: vec![o],
            actual: bias.shape().to_vec(),
        });
    }
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(n * o);
    for row in x.chunks_exact(f) {
        for (j, wrow) in w.chunks_exact(f).enumerate() {
            let dot: f64 = row.iter().zip(wrow).map(|(a, b)| a * b).sum();
            out.push(dot + b[j]);
        }
    }
    let out = Tensor::new(vec![n, o], out)?;
    out.check_finite("linear")?;
    Ok(out)
}

pub(crate) struct LinearGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward_raw(input: &Tensor, weight: &Tensor, grad_out: &[f64], need_input: bool) -> LinearGrads {
    let f = input.shape()[1];
    let o = weight.shape()[0];
    let (x, w) = (input.data(), weight.data());
    let mut g_in = need_input.then(|| vec![0.0; x.len()]);
    let mut g_w = vec![0.0; w.len()];
    let mut g_b = vec![0.0; o];
    for (r, row) in x.chunks_exact(f).enumerate() {
        let go = &grad_out[r * o..][..o];
        for j in 0..o {
            let g = go[j];
            g_b[j] += g;
            let gw = &mut g_w[j * f..][..f];
            for (a, &xv) in gw.iter_mut().zip(row) {
                *a += g * xv;
            }
            if let Some(gi) = g_in.as_mut() {
                let gi = &mut gi[r * f..][..f];
                for (a, &wv) in gi.iter_mut().zip(&w[j * f..][..f]) {
                    *a += g * wv;
                }
            }
        }
    }
    LinearGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    }
}

impl Graph {
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }
}
