//! Time-difference distributions over k-hop neighborhoods and class drift.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{BfsScratch, ClassId, TemporalGraph, Timestamp};

/// Multiset of non-negative time deltas, stored as a histogram.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TimeDiffHistogram {
    k: usize,
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl TimeDiffHistogram {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, delta: u64) -> u64 {
        self.counts.get(&delta).copied().unwrap_or(0)
    }

    /// `(delta, multiplicity)` pairs in ascending delta order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&d, &c)| (d, c))
    }

    pub fn add(&mut self, delta: u64, times: u64) {
        if times > 0 {
            *self.counts.entry(delta).or_insert(0) += times;
            self.total += times;
        }
    }

    fn merge(mut self, other: TimeDiffHistogram) -> TimeDiffHistogram {
        for (d, c) in other.counts {
            self.add(d, c);
        }
        self
    }

    pub fn max_delta(&self) -> Option<u64> {
        self.counts.keys().next_back().copied()
    }

    /// Nearest-rank percentile: the smallest delta `d` such that at least
    /// `p · total` occurrences are `<= d`.
    pub fn percentile(&self, p: f64) -> Result<u64> {
        if self.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 1]")));
        }
        // Rank in 1..=total; the epsilon keeps exact products such as
        // 0.7 * 10 from rounding up a rank.
        let rank = ((p * self.total as f64) - 1e-9).ceil().max(1.0) as u64;
        let mut cumulative = 0;
        for (&d, &c) in &self.counts {
            cumulative += c;
            if cumulative >= rank {
                return Ok(d);
            }
        }
        Ok(self.max_delta().expect("non-empty"))
    }
}

/// For every node `u` and every `v` within `k` hops with
/// `time(v) <= time(u)`, records `time(u) - time(v)` once.
pub fn time_diff_distribution(g: &TemporalGraph, k: usize) -> Result<TimeDiffHistogram> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = g.num_nodes();
    let chunk = 256;
    let hist = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut scratch = BfsScratch::new(n);
            let mut local: BTreeMap<u64, u64> = BTreeMap::new();
            for u in c * chunk..((c + 1) * chunk).min(n) {
                let tu = g.time(u);
                for &v in scratch.k_hop(g, u, k) {
                    let tv = g.time(v);
                    if tv <= tu {
                        *local.entry((tu - tv) as u64).or_insert(0) += 1;
                    }
                }
            }
            let mut h = TimeDiffHistogram::new(k);
            for (d, cnt) in local {
                h.add(d, cnt);
            }
            h
        })
        .reduce(|| TimeDiffHistogram::new(k), TimeDiffHistogram::merge);
    Ok(hist)
}

/// History sizes at the 25/50/75/100th percentiles of the distribution.
pub fn quartile_history_sizes(h: &TimeDiffHistogram) -> Result<[u64; 4]> {
    Ok([
        h.percentile(0.25)?,
        h.percentile(0.5)?,
        h.percentile(0.75)?,
        h.percentile(1.0)?,
    ])
}

/// Empirical class probabilities.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassDistribution {
    probs: BTreeMap<ClassId, f64>,
}

impl ClassDistribution {
    pub fn from_probabilities(probs: BTreeMap<ClassId, f64>) -> Result<Self> {
        let sum: f64 = probs.values().sum();
        if probs.values().any(|&p| p.is_nan() || p < 0.0) || (!probs.is_empty() && (sum - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must be non-negative and sum to 1 (got {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn prob(&self, y: ClassId) -> f64 {
        self.probs.get(&y).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.probs.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn class_distribution(labels: &[ClassId]) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &y in labels {
        *counts.entry(y).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    Ok(ClassDistribution {
        probs: counts
            .into_iter()
            .map(|(y, c)| (y, c as f64 / n))
            .collect(),
    })
}

/// Total variation distance over the union of both supports.
pub fn drift_magnitude(prev: &ClassDistribution, cur: &ClassDistribution) -> f64 {
    let mut support: Vec<ClassId> = prev.support().chain(cur.support()).collect();
    support.sort_unstable();
    support.dedup();
    0.5 * support
        .into_iter()
        .map(|y| (prev.prob(y) - cur.prob(y)).abs())
        .sum::<f64>()
}

/// Drift between the class distributions of consecutive timestamps, as
/// `(t, sigma_{t_prev, t})` for every timestamp after the first.
pub fn drift_series(g: &TemporalGraph) -> Result<Vec<(Timestamp, f64)>> {
    let mut by_time: BTreeMap<Timestamp, Vec<ClassId>> = BTreeMap::new();
    for u in 0..g.num_nodes() {
        by_time.entry(g.time(u)).or_default().push(g.label(u));
    }
    let dists = by_time
        .into_iter()
        .map(|(t, ys)| Ok((t, class_distribution(&ys)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(dists
        .windows(2)
        .map(|w| (w[1].0, drift_magnitude(&w[0].1, &w[1].1)))
        .collect())
}
