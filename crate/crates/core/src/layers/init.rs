use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fan-in of a weight tensor: every axis except the first (output) axis.
pub fn fan_in(shape: &[usize]) -> Result<usize> {
    match shape {
        [_, rest @ ..] if !rest.is_empty() => Ok(rest.iter().product()),
        _ => Err(Error::InvalidShape(format!(
            "cannot derive fan-in from shape {shape:?}"
        ))),
    }
}

/// He-normal initialization: zero-mean Gaussian with variance `2 / fan_in`.
pub fn he_init(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in(shape)? as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn zero_bias(len: usize) -> Tensor {
    Tensor::zeros(&[len])
}
