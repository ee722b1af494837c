use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-12;

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        Some(y) => Err(Error::Data(format!("label {y} is not in {{0, 1}}"))),
        None => Ok(()),
    }
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross entropy over the batch.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_labels(labels)?;
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "bce",
            expected: vec![labels.len()],
            actual: vec![predictions.len()],
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    let loss = total / labels.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("bce"));
    }
    Ok(loss)
}

/// d(mean loss)/dp for one item; zero where the clamp is active.
#[inline]
pub(crate) fn bce_derivative(p: f64, y: f64, n: usize) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        return 0.0;
    }
    (-y / p + (1.0 - y) / (1.0 - p)) / n as f64
}

impl Graph {
    pub fn bce(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let loss = bce_loss(self.value(pred).data(), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
            },
        ))
    }
}
