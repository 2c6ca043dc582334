//! Easiness-weighted behavioral entanglement index (BEI) and its sign-flip test.
//!
//! For a pair `(i, j)` the task contribution is `a_t * R_it * R_jt`; the index is
//! the mean contribution. Under conditional independence given difficulty the
//! contributions are centred at zero, so the null distribution is built by
//! flipping their signs at random.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::{DifficultyProfile, ResidualMatrix};
use crate::ingest::ResponseDataset;
use crate::pairs::{adjust_family, rank_by_score, unordered_pairs, Alternative, PairStatistic};
use crate::streams::{pair_seed, rng_from_seed, StreamTag};

/// Largest task count for which exhaustive enumeration is used in [`TestMode::Auto`].
pub const EXACT_MAX_TASKS: usize = 20;

pub const DEFAULT_REPLICATES: u64 = 10_000;

// Replicate sums within this fraction of sum|xi| of the observed sum count as ties.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum BeiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("replicate count must be at least 1")]
    NoReplicates,
    #[error("exact enumeration needs at most {max} tasks, got {actual}", max = EXACT_MAX_TASKS)]
    TooManyTasksForExact { actual: usize },
}

/// Per-task contributions `xi_t = a_t * R_it * R_jt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairContribution {
    pub values: Vec<f64>,
}

impl PairContribution {
    pub fn new(ri: &[f64], rj: &[f64], easiness: &[f64]) -> Result<Self, BeiError> {
        if ri.len() != rj.len() || ri.len() != easiness.len() {
            return Err(BeiError::DimensionMismatch(format!(
                "residuals {} and {}, easiness {}",
                ri.len(),
                rj.len(),
                easiness.len()
            )));
        }
        if ri.is_empty() {
            return Err(BeiError::EmptyInput);
        }
        let values = ri
            .iter()
            .zip(rj)
            .zip(easiness)
            .map(|((&x, &y), &a)| a * (x * y))
            .collect();
        Ok(PairContribution { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn compute_bei(ri: &[f64], rj: &[f64], easiness: &[f64]) -> Result<f64, BeiError> {
    Ok(PairContribution::new(ri, rj, easiness)?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    /// Exact when `T <= EXACT_MAX_TASKS`, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignFlipResult {
    pub p_value: f64,
    pub exact: bool,
    /// `B` for Monte Carlo, `2^T` for exact enumeration.
    pub replicates: u64,
}

/// One-sided (or two-sided) sign-flip p-value of the mean contribution.
///
/// Monte Carlo uses `(1 + #{S* >= S}) / (1 + B)`; exact mode counts sign vectors
/// over all `2^T`. Replicates tying the observed value count as exceeding it.
pub fn signflip_pvalue<R: RngCore>(
    contrib: &PairContribution,
    replicates: u64,
    mode: TestMode,
    alternative: Alternative,
    rng: &mut R,
) -> Result<SignFlipResult, BeiError> {
    if contrib.is_empty() {
        return Err(BeiError::EmptyInput);
    }
    let exact = match mode {
        TestMode::Exact => {
            if contrib.len() > EXACT_MAX_TASKS {
                return Err(BeiError::TooManyTasksForExact {
                    actual: contrib.len(),
                });
            }
            true
        }
        TestMode::Auto => contrib.len() <= EXACT_MAX_TASKS,
        TestMode::MonteCarlo => false,
    };
    if exact {
        return Ok(exact_signflip(&contrib.values, alternative));
    }
    if replicates == 0 {
        return Err(BeiError::NoReplicates);
    }
    let xi = &contrib.values;
    let observed: f64 = xi.iter().sum();
    let threshold = threshold(xi, observed, alternative);
    let mut hits = 0u64;
    for _ in 0..replicates {
        let s = random_signed_sum(xi, rng);
        if exceeds(s, threshold, alternative) {
            hits += 1;
        }
    }
    Ok(SignFlipResult {
        p_value: (1 + hits) as f64 / (1 + replicates) as f64,
        exact: false,
        replicates,
    })
}

fn threshold(xi: &[f64], observed: f64, alternative: Alternative) -> f64 {
    let tol = TIE_TOLERANCE * xi.iter().map(|v| v.abs()).sum::<f64>();
    match alternative {
        Alternative::Greater => observed - tol,
        Alternative::TwoSided => observed.abs() - tol,
    }
}

fn exceeds(sum: f64, threshold: f64, alternative: Alternative) -> bool {
    match alternative {
        Alternative::Greater => sum >= threshold,
        Alternative::TwoSided => sum.abs() >= threshold,
    }
}

fn random_signed_sum<R: RngCore>(xi: &[f64], rng: &mut R) -> f64 {
    let mut sum = 0.0;
    for chunk in xi.chunks(64) {
        let bits = rng.next_u64();
        for (k, &v) in chunk.iter().enumerate() {
            // bit set -> negative sign
            let sign = 1.0 - 2.0 * ((bits >> k) & 1) as f64;
            sum += sign * v;
        }
    }
    sum
}

/// Enumerate all sign vectors in Gray-code order, updating the sum one flip at a time.
fn exact_signflip(xi: &[f64], alternative: Alternative) -> SignFlipResult {
    let n = xi.len();
    let total = 1u64 << n;
    let observed: f64 = xi.iter().sum();
    let threshold = threshold(xi, observed, alternative);
    let mut negative = vec![false; n];
    let mut sum = observed;
    let mut hits = u64::from(exceeds(sum, threshold, alternative));
    for k in 1..total {
        let bit = k.trailing_zeros() as usize;
        negative[bit] = !negative[bit];
        if negative[bit] {
            sum -= 2.0 * xi[bit];
        } else {
            sum += 2.0 * xi[bit];
        }
        if exceeds(sum, threshold, alternative) {
            hits += 1;
        }
    }
    SignFlipResult {
        p_value: hits as f64 / total as f64,
        exact: true,
        replicates: total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub replicates: u64,
    pub seed: u64,
    pub mode: TestMode,
    pub alternative: Alternative,
    /// Benjamini–Hochberg across the pair family; otherwise `p_adjusted = p_raw`.
    pub bh: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            mode: TestMode::Auto,
            alternative: Alternative::Greater,
            bh: true,
        }
    }
}

/// Test one pair with its own deterministic random stream.
pub fn bei_pair(
    residuals: &ResidualMatrix,
    profile: &DifficultyProfile,
    i: usize,
    j: usize,
    cfg: &AuditConfig,
) -> Result<(f64, SignFlipResult, u64), BeiError> {
    let contrib = PairContribution::new(residuals.model(i), residuals.model(j), &profile.easiness)?;
    let seed = pair_seed(cfg.seed, StreamTag::Bei, i, j);
    let mut rng = rng_from_seed(seed);
    let test = signflip_pvalue(&contrib, cfg.replicates, cfg.mode, cfg.alternative, &mut rng)?;
    Ok((contrib.mean(), test, seed))
}

/// BEI and sign-flip p-value for every unordered model pair, ranked by score.
pub fn bei_audit(
    ds: &ResponseDataset,
    residuals: &ResidualMatrix,
    profile: &DifficultyProfile,
    cfg: &AuditConfig,
) -> Result<Vec<PairStatistic>, BeiError> {
    if residuals.n_models() != ds.n_models() || residuals.n_tasks() != profile.len() {
        return Err(BeiError::DimensionMismatch(format!(
            "{} models / {} tasks in residuals, {} models / {} tasks in profile",
            residuals.n_models(),
            residuals.n_tasks(),
            ds.n_models(),
            profile.len()
        )));
    }
    let mut stats = unordered_pairs(ds.n_models())
        .into_par_iter()
        .map(|(i, j)| {
            let (score, test, seed) = bei_pair(residuals, profile, i, j, cfg)?;
            Ok(PairStatistic {
                model_1: ds.models()[i].clone(),
                model_2: ds.models()[j].clone(),
                i,
                j,
                score,
                p_raw: test.p_value,
                p_adjusted: test.p_value,
                replicates: test.replicates,
                seed,
                exact: test.exact,
                degenerate: false,
                events: None,
                per_event: None,
            })
        })
        .collect::<Result<Vec<_>, BeiError>>()?;
    adjust_family(&mut stats, cfg.bh);
    rank_by_score(&mut stats);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: enumerate sign vectors by bitmask and recompute each mean.
    fn brute_force_p(xi: &[f64]) -> f64 {
        let n = xi.len();
        let observed = xi.iter().sum::<f64>() / n as f64;
        let mut hits = 0;
        for mask in 0..(1u32 << n) {
            let mean = xi
                .iter()
                .enumerate()
                .map(|(t, &v)| if mask >> t & 1 == 1 { -v } else { v })
                .sum::<f64>()
                / n as f64;
            if mean >= observed - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    fn exact(xi: &[f64]) -> f64 {
        let contrib = PairContribution { values: xi.to_vec() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        signflip_pvalue(&contrib, 1, TestMode::Exact, Alternative::Greater, &mut rng)
            .unwrap()
            .p_value
    }

    #[test]
    fn bei_hand_values() {
        assert_eq!(compute_bei(&[0.0, 0.0], &[0.3, -0.9], &[0.2, 0.7]).unwrap(), 0.0);
        let v = compute_bei(&[0.5, -0.5], &[0.5, 0.5], &[1.0, 0.5]).unwrap();
        assert!((v - 0.0625).abs() < 1e-12);
        let v = compute_bei(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 1.0]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bei_errors() {
        assert_eq!(compute_bei(&[], &[], &[]), Err(BeiError::EmptyInput));
        assert!(matches!(
            compute_bei(&[0.1], &[0.1, 0.2], &[1.0]),
            Err(BeiError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_contributions_give_unit_p() {
        assert_eq!(exact(&[0.0; 5]), 1.0);
        let contrib = PairContribution { values: vec![0.0; 30] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = signflip_pvalue(&contrib, 500, TestMode::Auto, Alternative::Greater, &mut rng)
            .unwrap();
        assert!(!r.exact);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn exact_hand_enumerations() {
        assert_eq!(exact(&[0.3]), 0.5);
        assert_eq!(exact(&[0.3, 0.1]), 0.25);
    }

    #[test]
    fn exact_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = 1 + (rng.next_u32() % 12) as usize;
            let xi: Vec<f64> = (0..n)
                .map(|_| (rng.next_u32() as f64 / u32::MAX as f64) * 2.0 - 1.0)
                .collect();
            assert_eq!(exact(&xi), brute_force_p(&xi), "{xi:?}");
        }
    }

    #[test]
    fn two_sided_exact() {
        let contrib = PairContribution { values: vec![0.3, 0.1] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = signflip_pvalue(&contrib, 1, TestMode::Exact, Alternative::TwoSided, &mut rng)
            .unwrap();
        // |sums| = {0.4, 0.2, 0.2, 0.4}; observed 0.4
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn exact_mode_rejects_long_inputs() {
        let contrib = PairContribution { values: vec![0.1; 21] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            signflip_pvalue(&contrib, 10, TestMode::Exact, Alternative::Greater, &mut rng),
            Err(BeiError::TooManyTasksForExact { actual: 21 })
        ));
    }

    #[test]
    fn monte_carlo_floor_is_add_one() {
        let contrib = PairContribution { values: vec![1.0; 40] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = signflip_pvalue(&contrib, 999, TestMode::MonteCarlo, Alternative::Greater, &mut rng)
            .unwrap();
        assert!(r.p_value >= 1.0 / 1000.0);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn monte_carlo_tracks_exact() {
        let mut gen = ChaCha8Rng::seed_from_u64(17);
        let b = 20_000;
        let mut misses = 0;
        for case in 0..30 {
            let n = 2 + (gen.next_u32() % 11) as usize;
            let xi: Vec<f64> = (0..n)
                .map(|_| (gen.next_u32() as f64 / u32::MAX as f64) * 2.0 - 0.8)
                .collect();
            let p_exact = brute_force_p(&xi);
            let contrib = PairContribution { values: xi };
            let mut rng = ChaCha8Rng::seed_from_u64(case);
            let p_mc = signflip_pvalue(&contrib, b, TestMode::MonteCarlo, Alternative::Greater, &mut rng)
                .unwrap()
                .p_value;
            let bound = 3.0 * (p_exact * (1.0 - p_exact) / b as f64).sqrt() + 1.0 / b as f64;
            if (p_mc - p_exact).abs() > bound {
                misses += 1;
            }
        }
        assert!(misses <= 1, "{misses} cases outside 3 sigma");
    }

    proptest! {
        #[test]
        fn bei_is_symmetric(
            rows in prop::collection::vec((-0.99f64..0.99, -0.99f64..0.99, 0.0f64..=1.0), 1..50)
        ) {
            let ri: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let rj: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let a: Vec<f64> = rows.iter().map(|r| r.2).collect();
            prop_assert_eq!(compute_bei(&ri, &rj, &a).unwrap(), compute_bei(&rj, &ri, &a).unwrap());
            let contrib = PairContribution::new(&ri, &rj, &a).unwrap();
            for (x, &e) in contrib.values.iter().zip(&a) {
                prop_assert!(x.abs() <= e);
            }
        }

        #[test]
        fn p_value_is_valid(xi in prop::collection::vec(-1.0f64..1.0, 1..16)) {
            let p = exact(&xi);
            prop_assert!(p > 0.0 && p <= 1.0);
            // the all-plus vector always ties the observation
            prop_assert!(p >= 1.0 / (1u64 << xi.len()) as f64);
        }
    }
}
