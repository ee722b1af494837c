//! Balanced accuracy and early stopping.

use crate::error::{Error, Result};

/// Probabilities at or above this value are predicted as class 1.
pub const THRESHOLD: f64 = 0.5;

/// Mean of sensitivity and specificity of thresholded probabilities.
pub fn balanced_accuracy(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "balanced accuracy",
            expected: vec![labels.len()],
            actual: vec![probabilities.len()],
        });
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&p, &y) in probabilities.iter().zip(labels) {
        if y > 1 {
            return Err(Error::Data(format!("label {y} is not 0 or 1")));
        }
        let predicted = u8::from(p >= THRESHOLD);
        totals[y as usize] += 1;
        hits[y as usize] += usize::from(predicted == y);
    }
    if let Some(missing) = totals.iter().position(|&t| t == 0) {
        return Err(Error::Data(format!(
            "balanced accuracy needs both classes; class {missing} is absent"
        )));
    }
    let tpr = hits[1] as f64 / totals[1] as f64;
    let tnr = hits[0] as f64 / totals[0] as f64;
    Ok((tpr + tnr) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Streaming early-stopping state; epochs are counted from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epoch: 0,
        })
    }

    /// Records one epoch's validation score. Only strict improvements reset
    /// the counter.
    pub fn update(&mut self, score: f64) -> Decision {
        self.epoch += 1;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = self.epoch;
        }
        if self.epoch - self.best_epoch >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn improved(&self) -> bool {
        self.best_epoch == self.epoch
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Replays `history` and reports whether training should stop after its last
/// epoch.
pub fn early_stopping_check(history: &[f64], patience: usize) -> Result<Decision> {
    if history.is_empty() {
        return Err(Error::Data("early stopping needs at least one epoch".into()));
    }
    let mut es = EarlyStopping::new(patience)?;
    let mut decision = Decision::Continue;
    for &score in history {
        decision = es.update(score);
    }
    Ok(decision)
}

/// Epoch (1-based) at which a run over `history` ends, or `None` if it runs
/// through every entry.
pub fn stop_epoch(history: &[f64], patience: usize) -> Result<Option<usize>> {
    let mut es = EarlyStopping::new(patience)?;
    Ok(history
        .iter()
        .position(|&s| es.update(s) == Decision::Stop)
        .map(|i| i + 1))
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
