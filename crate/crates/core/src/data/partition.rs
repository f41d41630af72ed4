//! Label-skewed splitting of a dataset into disjoint client shards.
//!
//! Two schemes are supported:
//!
//! * **Quantity** (`cnum:k`): every client holds exactly `k` distinct labels.
//!   Labels are shuffled and dealt to clients in consecutive blocks of `k`
//!   (wrapping around the shuffled order), so every label has at least one
//!   holder when `n_clients * k >= |C|`. Each label's samples are shuffled and
//!   split into equal parts among its holders; the first `count % holders`
//!   holders receive one extra sample.
//! * **Dirichlet** (`dir:alpha`): for each label a proportion vector
//!   `p ~ Dir_N(alpha)` is drawn and client `i` receives a contiguous slice
//!   of `floor(p_i * count)` shuffled samples. Leftover samples go to the
//!   client with the largest proportion. Empty shards are repaired by moving
//!   one sample at a time from the largest shard.
//!
//! `iid` is the quantity scheme with `k = |C|`.
//!
//! Shards are returned with sorted indices.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{rng_for, TAG_PARTITION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Quantity { k: usize },
    Dirichlet { alpha: f64 },
    Iid,
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionScheme::Quantity { k } => write!(f, "cnum:{k}"),
            PartitionScheme::Dirichlet { alpha } => write!(f, "dir:{alpha}"),
            PartitionScheme::Iid => f.write_str("iid"),
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad partition descriptor {s:?}"));
        let s = s.trim();
        if s == "iid" {
            return Ok(PartitionScheme::Iid);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "cnum" => {
                let k: usize = arg.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(PartitionScheme::Quantity { k })
            }
            "dir" => {
                let alpha: f64 = arg.parse().map_err(|_| bad())?;
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(bad());
                }
                Ok(PartitionScheme::Dirichlet { alpha })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub shards: Vec<Vec<usize>>,
    pub seed: u64,
    pub scheme: PartitionScheme,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// Sample counts per `[client][label]`.
    pub fn allocation(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.shards
            .iter()
            .map(|shard| {
                let mut counts = vec![0; ds.num_classes()];
                for &i in shard {
                    counts[ds.labels()[i]] += 1;
                }
                counts
            })
            .collect()
    }

    /// Share of each label's samples held by each client, `[client][label]`,
    /// in percent. Labels absent from the dataset get 0.
    pub fn allocation_percent(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        let totals = ds.label_counts();
        self.allocation(ds)
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(&totals)
                    .map(|(&c, &t)| if t == 0 { 0.0 } else { 100.0 * c as f64 / t as f64 })
                    .collect()
            })
            .collect()
    }

    /// Checks disjointness, exhaustiveness and non-emptiness against a
    /// dataset of `n` samples.
    pub fn verify(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (client, shard) in self.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::InfeasiblePartition(format!("client {client} has an empty shard")));
            }
            for &i in shard {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InfeasiblePartition(format!(
                        "sample {i} is out of range or allocated twice"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InfeasiblePartition("some samples are unallocated".into()));
        }
        Ok(())
    }
}

pub fn partition(ds: &Dataset, n_clients: usize, scheme: PartitionScheme, seed: u64) -> Result<PartitionPlan> {
    match scheme {
        PartitionScheme::Quantity { k } => partition_quantity(ds, n_clients, k, seed),
        PartitionScheme::Dirichlet { alpha } => partition_dirichlet(ds, n_clients, alpha, seed),
        PartitionScheme::Iid => {
            let mut plan = partition_quantity(ds, n_clients, ds.num_classes(), seed)?;
            plan.scheme = PartitionScheme::Iid;
            Ok(plan)
        }
    }
}

fn indices_by_label(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut by_label = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_label[l].push(i);
    }
    by_label
}

pub fn partition_quantity(ds: &Dataset, n_clients: usize, k: usize, seed: u64) -> Result<PartitionPlan> {
    let classes = ds.num_classes();
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be positive".into()));
    }
    if k == 0 || k > classes {
        return Err(Error::InfeasiblePartition(format!(
            "k={k} must be in 1..={classes}"
        )));
    }
    if n_clients * k < classes {
        return Err(Error::InfeasiblePartition(format!(
            "{n_clients} clients x {k} labels cannot cover {classes} labels"
        )));
    }
    let mut rng = rng_for(seed, &[TAG_PARTITION]);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);

    let mut holders = vec![Vec::new(); classes];
    for client in 0..n_clients {
        for slot in 0..k {
            holders[order[(client * k + slot) % classes]].push(client);
        }
    }

    let mut shards = vec![Vec::new(); n_clients];
    for (label, mut idx) in indices_by_label(ds).into_iter().enumerate() {
        let h = holders[label].len();
        if idx.len() < h {
            return Err(Error::InfeasiblePartition(format!(
                "label {label} has {} samples for {h} holders",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let base = idx.len() / h;
        let extra = idx.len() % h;
        let mut start = 0;
        for (j, &client) in holders[label].iter().enumerate() {
            let take = base + usize::from(j < extra);
            shards[client].extend_from_slice(&idx[start..start + take]);
            start += take;
        }
    }
    finish(shards, seed, PartitionScheme::Quantity { k })
}

/// Draws from a symmetric Dirichlet via normalized Gamma variates.
fn sample_dirichlet<R: Rng + ?Sized>(gamma: &Gamma<f64>, n: usize, rng: &mut R) -> Vec<f64> {
    for _ in 0..64 {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
    // every draw underflowed: all mass on one client, as alpha -> 0
    let mut p = vec![0.0; n];
    p[rng.random_range(0..n)] = 1.0;
    p
}

pub fn partition_dirichlet(ds: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    if n_clients == 0 || n_clients > ds.len() {
        return Err(Error::InfeasiblePartition(format!(
            "{n_clients} clients for {} samples",
            ds.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng_for(seed, &[TAG_PARTITION]);
    let mut shards = vec![Vec::new(); n_clients];
    for mut idx in indices_by_label(ds) {
        let p = sample_dirichlet(&gamma, n_clients, &mut rng);
        idx.shuffle(&mut rng);
        let count = idx.len();
        let mut take: Vec<usize> = p.iter().map(|&pi| (pi * count as f64).floor() as usize).collect();
        let assigned: usize = take.iter().sum();
        let top = argmax(&p);
        take[top] += count - assigned;
        let mut start = 0;
        for (client, &t) in take.iter().enumerate() {
            shards[client].extend_from_slice(&idx[start..start + t]);
            start += t;
        }
    }
    repair_empty(&mut shards);
    finish(shards, seed, PartitionScheme::Dirichlet { alpha })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn repair_empty(shards: &mut [Vec<usize>]) {
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let mut donor = 0;
        for (i, s) in shards.iter().enumerate() {
            if s.len() > shards[donor].len() {
                donor = i;
            }
        }
        let moved = shards[donor].pop().expect("n_clients <= n_samples");
        shards[empty].push(moved);
    }
}

fn finish(mut shards: Vec<Vec<usize>>, seed: u64, scheme: PartitionScheme) -> Result<PartitionPlan> {
    for s in &mut shards {
        s.sort_unstable();
    }
    if let Some(c) = shards.iter().position(Vec::is_empty) {
        return Err(Error::InfeasiblePartition(format!("client {c} received no samples")));
    }
    Ok(PartitionPlan { shards, seed, scheme })
}
