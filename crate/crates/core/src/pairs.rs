//! Pair-level test results shared by the BEI and CIG audits.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::fdr::benjamini_hochberg;

/// Direction of the randomization test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Large positive statistic counts as evidence of entanglement.
    #[default]
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStatistic {
    pub model_1: String,
    pub model_2: String,
    /// Model indices in the audited dataset, `i < j`.
    pub i: usize,
    pub j: usize,
    pub score: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    /// Monte Carlo replicates, or the number of enumerated sign vectors in exact mode.
    pub replicates: u64,
    /// Seed of this pair's random stream.
    pub seed: u64,
    pub exact: bool,
    /// The null distribution was empty (no tasks or no co-failure events).
    pub degenerate: bool,
    /// Co-failure events entering the statistic (CIG only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<usize>,
    /// Score divided by the event count, a diagnostic only (CIG only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_event: Option<f64>,
}

impl PairStatistic {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_adjusted < alpha
    }
}

/// Fill `p_adjusted` across the family, by Benjamini–Hochberg or as a copy of `p_raw`.
pub fn adjust_family(stats: &mut [PairStatistic], bh: bool) {
    if bh {
        let raw: Vec<f64> = stats.iter().map(|s| s.p_raw).collect();
        for (s, adj) in stats.iter_mut().zip(benjamini_hochberg(&raw)) {
            s.p_adjusted = adj;
        }
    } else {
        for s in stats.iter_mut() {
            s.p_adjusted = s.p_raw;
        }
    }
}

/// Score descending, then pair order.
pub fn score_order(a: &PairStatistic, b: &PairStatistic) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then((a.i, a.j).cmp(&(b.i, b.j)))
}

pub fn rank_by_score(stats: &mut [PairStatistic]) {
    stats.sort_by(score_order);
}

/// All unordered pairs `(i, j)` with `i < j`.
pub fn unordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts() {
        assert_eq!(unordered_pairs(2), vec![(0, 1)]);
        assert_eq!(unordered_pairs(4).len(), 6);
        assert!(unordered_pairs(1).is_empty());
    }
}
