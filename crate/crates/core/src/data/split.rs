//! Subject-level train/validation/test assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::VolumeRecord;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

/// Fractions of subjects per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub test: f64,
    pub val: f64,
    pub train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            test: 0.2,
            val: 0.16,
            train: 0.64,
        }
    }
}

impl SplitFractions {
    pub fn new(test: f64, val: f64, train: f64) -> Result<Self> {
        let f = SplitFractions { test, val, train };
        let parts = [test, val, train];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(f)
    }

    /// Subject counts `[test, val, train]` for `n` subjects, by largest
    /// remainder. Ties in the remainder go to the earlier split.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        // the nudge keeps quotas such as 300 / 6 from flooring to 49
        let quotas = [self.test, self.val, self.train].map(|f| f * n as f64 + 1e-9);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a].fract(), quotas[b].fract());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

/// Assigns every subject, with all of its records, to one split.
///
/// Subjects are sorted by id and then shuffled with `seed`, so the result does
/// not depend on record order.
pub fn split_subjects(records: &mut [VolumeRecord], fractions: SplitFractions, seed: u64) -> Result<()> {
    let fractions = SplitFractions::new(fractions.test, fractions.val, fractions.train)?;
    let mut subjects: Vec<&str> = records
        .iter()
        .map(|r| r.subject.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let wanted = [fractions.test, fractions.val, fractions.train]
        .iter()
        .filter(|f| **f > 0.0)
        .count();
    if subjects.len() < wanted {
        return Err(Error::Data(format!(
            "{} subjects cannot fill {wanted} splits",
            subjects.len()
        )));
    }
    Rng::new(seed).shuffle(&mut subjects);
    let [n_test, n_val, _] = fractions.counts(subjects.len());
    let assignment: BTreeMap<String, Split> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (s.to_string(), split)
        })
        .collect();
    for r in records.iter_mut() {
        r.split = Some(assignment[&r.subject]);
    }
    check_no_leakage(records)
}

/// Fails if a subject appears in more than one split.
pub fn check_no_leakage(records: &[VolumeRecord]) -> Result<()> {
    let mut seen: BTreeMap<&str, Option<Split>> = BTreeMap::new();
    for r in records {
        match seen.insert(&r.subject, r.split) {
            Some(prev) if prev != r.split => {
                return Err(Error::Data(format!(
                    "subject `{}` appears in {} and {}",
                    r.subject,
                    prev.map_or("no split".into(), |s| s.to_string()),
                    r.split.map_or("no split".into(), |s| s.to_string()),
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn records(subjects: &[&str]) -> Vec<VolumeRecord> {
        subjects
            .iter()
            .enumerate()
            .map(|(i, s)| VolumeRecord {
                volume: Tensor::full(&[1, 1, 1, 1], i as f64),
                label: (i % 2) as u8,
                subject: s.to_string(),
                split: None,
            })
            .collect()
    }

    #[test]
    fn ten_subjects_largest_remainder() {
        assert_eq!(SplitFractions::default().counts(10), [2, 2, 6]);
        let names: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let mut recs = records(&names.iter().map(String::as_str).collect::<Vec<_>>());
        split_subjects(&mut recs, SplitFractions::default(), 1).unwrap();
        let count = |s| recs.iter().filter(|r| r.split == Some(s)).count();
        assert_eq!([count(Split::Test), count(Split::Val), count(Split::Train)], [2, 2, 6]);
    }

    #[test]
    fn counts_sum_to_total() {
        let f = SplitFractions::new(1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0).unwrap();
        assert_eq!(f.counts(300), [50, 50, 200]);
        for n in 0..50 {
            assert_eq!(SplitFractions::default().counts(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn subject_records_stay_together() {
        let mut recs = records(&["a", "b", "a", "c", "a", "d", "e"]);
        split_subjects(&mut recs, SplitFractions::default(), 3).unwrap();
        let a: Vec<_> = recs.iter().filter(|r| r.subject == "a").map(|r| r.split).collect();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|s| *s == a[0]));
    }

    #[test]
    fn record_order_does_not_matter() {
        let names = ["p", "q", "r", "s", "t", "u", "v", "w"];
        let mut a = records(&names);
        let mut b = records(&names);
        b.reverse();
        split_subjects(&mut a, SplitFractions::default(), 9).unwrap();
        split_subjects(&mut b, SplitFractions::default(), 9).unwrap();
        for r in &a {
            let other = b.iter().find(|x| x.subject == r.subject).unwrap();
            assert_eq!(r.split, other.split);
        }
    }

    #[test]
    fn too_few_subjects() {
        let mut recs = records(&["a", "b", "a"]);
        assert!(split_subjects(&mut recs, SplitFractions::default(), 0).is_err());
        assert!(SplitFractions::new(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn leakage_detected() {
        let mut recs = records(&["a", "a"]);
        recs[0].split = Some(Split::Train);
        recs[1].split = Some(Split::Test);
        assert!(check_no_leakage(&recs).is_err());
    }
}
