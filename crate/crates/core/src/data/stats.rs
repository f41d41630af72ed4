use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Additive smoothing applied to label counts before forming priors.
pub const PRIOR_SMOOTHING: f64 = 1e-3;

/// Label composition of one client shard.
///
/// A label is *majority* if its count is at least the shard's average count
/// per label (`|shard| / |C|`), *minority* if it is present but below that
/// average, and *missing* if absent.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub counts: Vec<usize>,
    /// Smoothed prior estimate; strictly positive and sums to one.
    pub gamma: Vec<f64>,
    pub majority: BTreeSet<usize>,
    pub minority: BTreeSet<usize>,
    pub missing: BTreeSet<usize>,
}

impl LabelStats {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyShard);
        }
        let classes = counts.len();
        let avg = total as f64 / classes as f64;
        let denom = total as f64 + PRIOR_SMOOTHING * classes as f64;
        let gamma = counts
            .iter()
            .map(|&c| (c as f64 + PRIOR_SMOOTHING) / denom)
            .collect();
        let mut majority = BTreeSet::new();
        let mut minority = BTreeSet::new();
        let mut missing = BTreeSet::new();
        for (label, &c) in counts.iter().enumerate() {
            if c == 0 {
                missing.insert(label);
            } else if c as f64 >= avg {
                majority.insert(label);
            } else {
                minority.insert(label);
            }
        }
        Ok(Self {
            counts,
            gamma,
            majority,
            minority,
            missing,
        })
    }

    /// Stats with a uniform prior and no missing labels; reduces the
    /// calibrated objective to plain cross-entropy.
    pub fn uniform(classes: usize) -> Self {
        Self::from_counts(vec![1; classes]).expect("non-empty")
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn label_stats(ds: &Dataset, shard: &[usize]) -> Result<LabelStats> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    let mut counts = vec![0; ds.num_classes()];
    for &i in shard {
        let label = *ds
            .labels()
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range")))?;
        counts[label] += 1;
    }
    LabelStats::from_counts(counts)
}
