//! ELU (alpha = 1), logistic sigmoid and inverted dropout.

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[inline]
pub fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Derivative at input `x` given the output `y = elu(x)`.
#[inline]
pub(crate) fn elu_derivative(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(input: &Tensor) -> Tensor {
    input.map(elu_scalar)
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Draws an inverted-dropout mask: each element kept with probability `1 - p`
/// and scaled by `1 / (1 - p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_probability(p)?;
    let scale = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { scale })
        .collect())
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

pub fn dropout(input: &Tensor, p: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    check_probability(p)?;
    if !training {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.numel(), p, rng)?;
    Ok(apply_mask(input, &mask))
}

pub fn apply_mask(input: &Tensor, mask: &[f64]) -> Tensor {
    let data = input.data().iter().zip(mask).map(|(x, m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data).expect("mask matches input")
}

impl Graph {
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = elu(self.value(a));
        out.check_finite("elu")?;
        Ok(self.push(out, Op::Elu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = sigmoid(self.value(a));
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    /// Inverted dropout. With `rng == None` (evaluation) the input passes through
    /// unchanged and no node is recorded.
    pub fn dropout(&mut self, input: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
        check_probability(p)?;
        let Some(rng) = rng else {
            return Ok(input);
        };
        let mask = dropout_mask(self.value(input).numel(), p, rng)?;
        self.dropout_with_mask(input, mask)
    }

    pub fn dropout_with_mask(&mut self, input: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.numel() {
            return Err(Error::ShapeMismatch {
                op: "dropout mask",
                expected: vec![x.numel()],
                actual: vec![mask.len()],
            });
        }
        let out = apply_mask(x, &mask);
        Ok(self.push(out, Op::Dropout { input, mask }))
    }
}
