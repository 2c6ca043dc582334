//! Directional collisions and cumulative information gain (CIG).
//!
//! On tasks where both models of a pair fail, a collision is both picking the
//! same distractor. The chance of that under independent choices is
//! `c = sum_k p_k^2`, with `p_k` the population's empirical distractor
//! frequencies. Each co-failure adds `-ln(c) * (Z - c)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bei::AuditConfig;
use crate::ingest::ResponseDataset;
use crate::pairs::{adjust_family, score_order, unordered_pairs, Alternative, PairStatistic};
use crate::streams::{pair_seed, rng_from_seed, StreamTag};

/// Surprisal weights use the natural logarithm.
pub const LOG_BASE: &str = "e";

const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum CigError {
    #[error("distractor profile is empty")]
    EmptyProfile,
    #[error("collision order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("replicate count must be at least 1")]
    NoReplicates,
    #[error("model index {0} out of range")]
    UnknownModel(usize),
}

/// Empirical distractor frequencies among failing selections on one task.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistractorProfile {
    /// Option index -> selection probability.
    pub probs: BTreeMap<usize, f64>,
    /// Failing responses that named a distractor.
    pub failing: usize,
}

impl DistractorProfile {
    pub fn from_selections(selections: &[usize]) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &k in selections {
            *counts.entry(k).or_default() += 1;
        }
        let n = selections.len() as f64;
        DistractorProfile {
            probs: counts
                .into_iter()
                .map(|(k, c)| (k, c as f64 / n))
                .collect(),
            failing: selections.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Profile of task `t` over all failing models. Abstentions carry no distractor.
pub fn distractor_profile(ds: &ResponseDataset, t: usize) -> DistractorProfile {
    let picks: Vec<usize> = (0..ds.n_models())
        .filter_map(|m| ds.distractor(t, m))
        .collect();
    DistractorProfile::from_selections(&picks)
}

pub fn distractor_profiles(ds: &ResponseDataset) -> Vec<DistractorProfile> {
    (0..ds.n_tasks()).map(|t| distractor_profile(ds, t)).collect()
}

/// `sum_k p_k^n`: probability that `n` independent failures pick the same distractor.
pub fn null_collision_prob(profile: &DistractorProfile, n: usize) -> Result<f64, CigError> {
    if profile.is_empty() {
        return Err(CigError::EmptyProfile);
    }
    if n < 2 {
        return Err(CigError::InvalidOrder(n));
    }
    let c: f64 = profile.probs.values().map(|p| p.powi(n as i32)).sum();
    Ok(c.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    #[serde(skip)]
    pub task: usize,
    pub task_id: String,
    pub z: bool,
    pub c_null: f64,
    pub weight: f64,
    pub contribution: f64,
}

impl CollisionEvent {
    pub fn new(task: usize, task_id: String, z: bool, c_null: f64) -> Self {
        let weight = surprisal(c_null);
        CollisionEvent {
            task,
            task_id,
            z,
            c_null,
            weight,
            contribution: weight * (f64::from(u8::from(z)) - c_null),
        }
    }
}

/// `-ln(c)`, exactly zero at `c = 1`.
pub fn surprisal(c: f64) -> f64 {
    if c >= 1.0 {
        0.0
    } else {
        -c.ln()
    }
}

/// CIG of pair `(i, j)` with its co-failure events.
///
/// Co-failures where either model abstained are skipped.
pub fn compute_cig(
    ds: &ResponseDataset,
    profiles: &[DistractorProfile],
    i: usize,
    j: usize,
) -> Result<(f64, Vec<CollisionEvent>), CigError> {
    for m in [i, j] {
        if m >= ds.n_models() {
            return Err(CigError::UnknownModel(m));
        }
    }
    let mut events = Vec::new();
    for (t, profile) in profiles.iter().enumerate() {
        let (Some(si), Some(sj)) = (ds.distractor(t, i), ds.distractor(t, j)) else {
            continue;
        };
        let c = null_collision_prob(profile, 2)?;
        events.push(CollisionEvent::new(t, ds.tasks()[t].id.clone(), si == sj, c));
    }
    let score = events.iter().map(|e| e.contribution).sum();
    Ok((score, events))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CigTest {
    pub p_value: f64,
    /// No co-failure events: the statistic is identically zero.
    pub degenerate: bool,
}

/// Monte Carlo p-value with collisions redrawn as `Z* ~ Bernoulli(c_null)` per event.
pub fn cig_pvalue<R: RngCore>(
    events: &[CollisionEvent],
    replicates: u64,
    alternative: Alternative,
    rng: &mut R,
) -> Result<CigTest, CigError> {
    if replicates == 0 {
        return Err(CigError::NoReplicates);
    }
    if events.is_empty() {
        return Ok(CigTest {
            p_value: 1.0,
            degenerate: true,
        });
    }
    let observed: f64 = events.iter().map(|e| e.contribution).sum();
    // events with c = 1 have zero weight and never move the statistic
    let active: Vec<(f64, f64)> = events
        .iter()
        .filter(|e| e.weight > 0.0)
        .map(|e| (e.c_null, e.weight))
        .collect();
    let scale: f64 = active.iter().map(|(_, w)| w).sum();
    let tol = TIE_TOLERANCE * scale.max(f64::MIN_POSITIVE);
    let mut hits = 0u64;
    for _ in 0..replicates {
        let sim: f64 = active
            .iter()
            .map(|&(c, w)| {
                let z = if rng.random::<f64>() < c { 1.0 } else { 0.0 };
                w * (z - c)
            })
            .sum();
        let hit = match alternative {
            Alternative::Greater => sim >= observed - tol,
            Alternative::TwoSided => sim.abs() >= observed.abs() - tol,
        };
        if hit {
            hits += 1;
        }
    }
    Ok(CigTest {
        p_value: (1 + hits) as f64 / (1 + replicates) as f64,
        degenerate: false,
    })
}

/// One pair's CIG statistic, tested on its own random stream.
pub fn cig_pair(
    ds: &ResponseDataset,
    profiles: &[DistractorProfile],
    i: usize,
    j: usize,
    cfg: &AuditConfig,
) -> Result<(PairStatistic, Vec<CollisionEvent>), CigError> {
    let (score, events) = compute_cig(ds, profiles, i, j)?;
    let seed = pair_seed(cfg.seed, StreamTag::Cig, i, j);
    let mut rng = rng_from_seed(seed);
    let test = cig_pvalue(&events, cfg.replicates, cfg.alternative, &mut rng)?;
    let n_events = events.len();
    let stat = PairStatistic {
        model_1: ds.models()[i].clone(),
        model_2: ds.models()[j].clone(),
        i,
        j,
        score,
        p_raw: test.p_value,
        p_adjusted: test.p_value,
        replicates: cfg.replicates,
        seed,
        exact: false,
        degenerate: test.degenerate,
        events: Some(n_events),
        per_event: (n_events > 0).then(|| score / n_events as f64),
    };
    Ok((stat, events))
}

/// CIG and Monte Carlo p-value for every unordered pair, ranked by score.
pub fn cig_audit(ds: &ResponseDataset, cfg: &AuditConfig) -> Result<Vec<PairStatistic>, CigError> {
    Ok(cig_audit_with_events(ds, cfg)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Like [`cig_audit`], keeping each pair's event trail.
pub fn cig_audit_with_events(
    ds: &ResponseDataset,
    cfg: &AuditConfig,
) -> Result<Vec<(PairStatistic, Vec<CollisionEvent>)>, CigError> {
    let profiles = distractor_profiles(ds);
    let mut results = unordered_pairs(ds.n_models())
        .into_par_iter()
        .map(|(i, j)| cig_pair(ds, &profiles, i, j, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats: Vec<PairStatistic> = results.iter().map(|(s, _)| s.clone()).collect();
    adjust_family(&mut stats, cfg.bh);
    for ((s, _), adjusted) in results.iter_mut().zip(stats) {
        *s = adjusted;
    }
    results.sort_by(|a, b| score_order(&a.0, &b.0));
    Ok(results)
}

/// Event trail as JSONL, one `{task_id, z, c_null, weight, contribution}` per line.
pub fn write_events_jsonl<W: Write>(events: &[CollisionEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ResponseRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(pairs: &[(usize, f64)]) -> DistractorProfile {
        DistractorProfile {
            probs: pairs.iter().copied().collect(),
            failing: 0,
        }
    }

    #[test]
    fn profile_frequencies() {
        let p = DistractorProfile::from_selections(&[1, 1, 2]);
        assert!((p.probs[&1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.probs[&2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(DistractorProfile::from_selections(&[1]).probs[&1], 1.0);
        assert!(DistractorProfile::from_selections(&[]).is_empty());
    }

    #[test]
    fn null_collision_hand_values() {
        assert_eq!(null_collision_prob(&profile(&[(1, 1.0)]), 2).unwrap(), 1.0);
        let c = null_collision_prob(&DistractorProfile::from_selections(&[1, 1, 2]), 2).unwrap();
        assert!((c - 5.0 / 9.0).abs() < 1e-12);
        let uniform = profile(&[(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)]);
        assert!((null_collision_prob(&uniform, 2).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(
            null_collision_prob(&DistractorProfile::default(), 2),
            Err(CigError::EmptyProfile)
        );
        assert_eq!(
            null_collision_prob(&uniform, 1),
            Err(CigError::InvalidOrder(1))
        );
    }

    #[test]
    fn event_contributions() {
        let e = CollisionEvent::new(0, "t".into(), true, 0.5);
        assert!((e.contribution - 0.346574).abs() < 1e-6);
        assert!((e.contribution - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
        for z in [true, false] {
            let e = CollisionEvent::new(0, "t".into(), z, 1.0);
            assert_eq!(e.weight, 0.0);
            assert_eq!(e.contribution, 0.0);
        }
    }

    fn grid(rows: &[&[Option<&str>]]) -> ResponseDataset {
        // rows[t][m]: Some(label) or None for abstain; correct option is "a"
        let mut recs = Vec::new();
        for (t, row) in rows.iter().enumerate() {
            for (m, sel) in row.iter().enumerate() {
                recs.push((
                    0,
                    ResponseRecord {
                        task_id: format!("t{t}"),
                        model_id: format!("m{m}"),
                        options: ["a", "b", "c", "d"].map(String::from).to_vec(),
                        correct_option: "a".into(),
                        selected_option: sel.map(String::from),
                    },
                ));
            }
        }
        ResponseDataset::from_records(recs).unwrap()
    }

    #[test]
    fn no_co_failure_means_zero() {
        let ds = grid(&[&[Some("a"), Some("b")], &[Some("c"), Some("a")]]);
        let (score, events) = compute_cig(&ds, &distractor_profiles(&ds), 0, 1).unwrap();
        assert_eq!(score, 0.0);
        assert!(events.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let test = cig_pvalue(&events, 100, Alternative::Greater, &mut rng).unwrap();
        assert_eq!(test.p_value, 1.0);
        assert!(test.degenerate);
    }

    #[test]
    fn abstaining_co_failures_are_skipped() {
        let ds = grid(&[
            &[Some("b"), None, Some("c")],
            &[Some("b"), Some("b"), Some("c")],
        ]);
        let profiles = distractor_profiles(&ds);
        assert_eq!(profiles[0].failing, 2);
        let (score, events) = compute_cig(&ds, &profiles, 0, 1).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].task_id, "t1");
        assert!(events[0].z);
        // profile {b: 2/3, c: 1/3}
        let c = 5.0 / 9.0;
        assert!((events[0].c_null - c).abs() < 1e-12);
        assert!((score + c.ln() * (1.0 - c)).abs() < 1e-12);
    }

    #[test]
    fn cig_is_symmetric() {
        let ds = grid(&[
            &[Some("b"), Some("b"), Some("c")],
            &[Some("d"), Some("c"), Some("c")],
            &[Some("b"), Some("c"), Some("d")],
        ]);
        let profiles = distractor_profiles(&ds);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let a = compute_cig(&ds, &profiles, i, j).unwrap().0;
            let b = compute_cig(&ds, &profiles, j, i).unwrap().0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_event_two_point_null() {
        let events = vec![CollisionEvent::new(0, "t".into(), true, 0.5)];
        let b = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = cig_pvalue(&events, b, Alternative::Greater, &mut rng).unwrap().p_value;
        assert!((p - 0.5).abs() <= 3.0 * (0.25 / b as f64).sqrt() + 1.0 / b as f64);
    }

    #[test]
    fn rare_maximal_collisions_are_significant() {
        let events: Vec<_> = (0..5)
            .map(|t| CollisionEvent::new(t, format!("t{t}"), true, 0.2))
            .collect();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = cig_pvalue(&events, 10_000, Alternative::Greater, &mut rng)
                .unwrap()
                .p_value;
            assert!(p <= 0.01, "seed {seed}: p {p}");
        }
    }

    #[test]
    fn contributions_respect_per_event_bounds() {
        for c in [0.05, 0.2, 0.5, 0.9, 1.0] {
            let w = surprisal(c);
            for z in [true, false] {
                let e = CollisionEvent::new(0, "t".into(), z, c);
                assert!(e.contribution >= -w * c - 1e-15);
                assert!(e.contribution <= w * (1.0 - c) + 1e-15);
            }
        }
    }
}
