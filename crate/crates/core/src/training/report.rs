//! Run logs and their text renderings.
//!
//! The per-run TSV has one header line and one row per run with columns
//! `model, seed, best_epoch, stop_epoch, best_val_bacc, test_bacc, test_loss,
//! checksum`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bacc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub model: String,
    pub seed: u64,
    pub best_epoch: usize,
    /// Epoch at which training ended.
    pub stop_epoch: usize,
    pub best_val_bacc: f64,
    pub test_loss: f64,
    pub test_bacc: f64,
    pub test_reads: usize,
    pub checksum: String,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub parameters: usize,
    pub batch_size: usize,
    pub mean_bacc: f64,
    pub std_bacc: f64,
    pub mean_stop: f64,
    pub std_stop: f64,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: ModelReport,
    pub pif: ModelReport,
    /// `|a - b| / max(a, b)` of the parameter counts.
    pub imbalance: f64,
    pub balanced: bool,
}

pub const TSV_HEADER: &str = "model\tseed\tbest_epoch\tstop_epoch\tbest_val_bacc\ttest_bacc\ttest_loss\tchecksum";

pub fn tsv_row(r: &RunEntry) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
        r.model, r.seed, r.best_epoch, r.stop_epoch, r.best_val_bacc, r.test_bacc, r.test_loss, r.checksum
    )
}

impl ExperimentReport {
    /// Balanced accuracy (std) and mean early-stopping epoch (std) per model.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let repeats = self.baseline.runs.len();
        writeln!(out, "{:<24} {:>10} {:>22} {:>20}", "model", "params", "bal. acc. % (std)", "early stop (std)").unwrap();
        for m in [&self.baseline, &self.pif] {
            writeln!(
                out,
                "{:<24} {:>10} {:>22} {:>20}",
                m.name,
                m.parameters,
                format!("{:.2} ({:.2})", 100.0 * m.mean_bacc, 100.0 * m.std_bacc),
                format!("{:.1} ({:.1})", m.mean_stop, m.std_stop),
            )
            .unwrap();
        }
        writeln!(
            out,
            "repeats: {repeats}; parameter imbalance {:.1}% ({})",
            100.0 * self.imbalance,
            if self.balanced { "balanced" } else { "unbalanced" }
        )
        .unwrap();
        out
    }

    pub fn tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for r in self.baseline.runs.iter().chain(&self.pif.runs) {
            out.push_str(&tsv_row(r));
            out.push('\n');
        }
        out
    }
}
