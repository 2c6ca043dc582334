//! De-entangled verifier weighting and aggregation of verifier verdicts.
//!
//! Pair entanglement blends min–max normalised BEI and CIG. A verifier's
//! weight for a given target is a softmax over
//! `kappa * ln(q) - eta1 * delta_in - eta2 * delta_tar`, where `q` is its
//! competence, `delta_in` its mean entanglement with the rest of the pool and
//! `delta_tar` its entanglement with the target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::JudgmentDataset;
use crate::pairs::PairStatistic;

/// Competence floor applied before taking the logarithm.
pub const COMPETENCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("BEI and CIG cover different pairs: {0}")]
    PairSetMismatch(String),
    #[error("lambda1 must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("pool needs at least two verifiers to define internal dependence")]
    SingletonPool,
    #[error("empty verifier pool for target `{0}`")]
    EmptyPool(String),
    #[error("target `{0}` is also in the verifier pool")]
    TargetInPool(String),
    #[error("no entanglement entry for pair `{0}` / `{1}`")]
    UnknownPair(String, String),
    #[error("verifier `{verifier}` has no verdict on target `{target}`, task `{task}`")]
    MissingVerdict {
        verifier: String,
        target: String,
        task: String,
    },
    #[error("verifiers disagree on the truth of target `{target}`, task `{task}`")]
    InconsistentTruth { target: String, task: String },
    #[error("verifier `{0}` has no calibration records")]
    NoCalibration(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

/// Normalised per-pair components and their blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEntanglement {
    pub bei: f64,
    pub cig: f64,
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRange {
    pub min: f64,
    pub max: f64,
    /// All pairs share one value; every normalised score is then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntanglementConfig {
    pub lambda1: f64,
    /// Significance level for admitting a pair score.
    pub alpha: f64,
    /// When false, scores enter regardless of their adjusted p-value.
    pub significant_only: bool,
}

impl Default for EntanglementConfig {
    fn default() -> Self {
        EntanglementConfig {
            lambda1: 0.5,
            alpha: 0.05,
            significant_only: true,
        }
    }
}

/// Symmetric pair entanglement `E(i, j)`; the diagonal is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementMatrix {
    pub lambda1: f64,
    pub normalization: String,
    pub bei_range: MetricRange,
    pub cig_range: MetricRange,
    pairs: BTreeMap<String, BTreeMap<String, PairEntanglement>>,
}

impl EntanglementMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<PairEntanglement> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.pairs.get(lo)?.get(hi).copied()
    }

    pub fn e(&self, a: &str, b: &str) -> Option<f64> {
        self.get(a, b).map(|p| p.e)
    }

    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn pair_key(s: &PairStatistic) -> (String, String) {
    if s.model_1 <= s.model_2 {
        (s.model_1.clone(), s.model_2.clone())
    } else {
        (s.model_2.clone(), s.model_1.clone())
    }
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> MetricRange {
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    MetricRange {
        min,
        max,
        degenerate: max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater),
    }
}

fn normalize(x: f64, range: &MetricRange) -> f64 {
    if range.degenerate {
        0.0
    } else {
        ((x - range.min) / (range.max - range.min)).clamp(0.0, 1.0)
    }
}

pub fn blend(bei: f64, cig: f64, lambda1: f64) -> f64 {
    lambda1 * bei + (1.0 - lambda1) * cig
}

/// Build `E` from audited BEI and CIG pair families.
///
/// Each metric is min–max normalised over the whole family. With
/// `significant_only`, a pair whose adjusted p-value is not below `alpha`
/// contributes 0 for that metric.
pub fn pair_entanglement(
    bei: &[PairStatistic],
    cig: &[PairStatistic],
    cfg: &EntanglementConfig,
) -> Result<EntanglementMatrix, EnsembleError> {
    if !(0.0..=1.0).contains(&cfg.lambda1) {
        return Err(EnsembleError::InvalidLambda(cfg.lambda1));
    }
    let bei_by_pair: BTreeMap<_, _> = bei.iter().map(|s| (pair_key(s), s)).collect();
    let cig_by_pair: BTreeMap<_, _> = cig.iter().map(|s| (pair_key(s), s)).collect();
    if bei_by_pair.len() != cig_by_pair.len() {
        return Err(EnsembleError::PairSetMismatch(format!(
            "{} BEI pairs vs {} CIG pairs",
            bei_by_pair.len(),
            cig_by_pair.len()
        )));
    }
    if let Some((a, b)) = bei_by_pair.keys().find(|k| !cig_by_pair.contains_key(*k)) {
        return Err(EnsembleError::PairSetMismatch(format!("{a} / {b} has no CIG score")));
    }

    let bei_range = min_max(bei.iter().map(|s| s.score));
    let cig_range = min_max(cig.iter().map(|s| s.score));
    let admitted = |s: &PairStatistic| !cfg.significant_only || s.significant(cfg.alpha);

    let mut pairs: BTreeMap<String, BTreeMap<String, PairEntanglement>> = BTreeMap::new();
    for (key, b) in &bei_by_pair {
        let c = cig_by_pair[key];
        let bn = if admitted(b) { normalize(b.score, &bei_range) } else { 0.0 };
        let cn = if admitted(c) { normalize(c.score, &cig_range) } else { 0.0 };
        pairs.entry(key.0.clone()).or_default().insert(
            key.1.clone(),
            PairEntanglement {
                bei: bn,
                cig: cn,
                e: blend(bn, cn, cfg.lambda1),
            },
        );
    }
    Ok(EntanglementMatrix {
        lambda1: cfg.lambda1,
        normalization: "min_max".into(),
        bei_range,
        cig_range,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub delta_in: f64,
    pub delta_tar: f64,
}

/// Internal and target dependence of each verifier in `verifiers`.
pub fn dependency_penalties(
    e: &EntanglementMatrix,
    verifiers: &[String],
    target: &str,
) -> Result<Vec<Penalty>, EnsembleError> {
    if verifiers.len() < 2 {
        return Err(EnsembleError::SingletonPool);
    }
    if verifiers.iter().any(|v| v == target) {
        return Err(EnsembleError::TargetInPool(target.into()));
    }
    let lookup = |a: &str, b: &str| {
        e.e(a, b)
            .ok_or_else(|| EnsembleError::UnknownPair(a.into(), b.into()))
    };
    verifiers
        .iter()
        .map(|v| {
            let mut sum = 0.0;
            for other in verifiers.iter().filter(|o| *o != v) {
                sum += lookup(v, other)?;
            }
            Ok(Penalty {
                delta_in: sum / (verifiers.len() - 1) as f64,
                delta_tar: lookup(v, target)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub kappa: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 0.5,
            kappa: 1.0,
            eta1: 1.0,
            eta2: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(EnsembleError::InvalidLambda(self.lambda1));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(EnsembleError::InvalidHyperparameter(format!("kappa = {}", self.kappa)));
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnsembleError::InvalidHyperparameter(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Softmax of `kappa * ln(q) - eta1 * delta_in - eta2 * delta_tar`.
pub fn verifier_weights(
    q: &[f64],
    delta_in: &[f64],
    delta_tar: &[f64],
    kappa: f64,
    eta1: f64,
    eta2: f64,
) -> Vec<f64> {
    assert!(
        q.len() == delta_in.len() && q.len() == delta_tar.len(),
        "weight inputs differ in length"
    );
    let logits: Vec<f64> = q
        .iter()
        .zip(delta_in)
        .zip(delta_tar)
        .map(|((&qm, &din), &dtar)| {
            kappa * qm.clamp(COMPETENCE_FLOOR, 1.0).ln() - eta1 * din - eta2 * dtar
        })
        .collect();
    softmax(&logits)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

/// Verdict accuracy of each verifier on a calibration set, floored at [`COMPETENCE_FLOOR`].
pub fn competence(
    calibration: &JudgmentDataset,
    verifiers: &[String],
) -> Result<Vec<f64>, EnsembleError> {
    verifiers
        .iter()
        .map(|v| {
            let (mut n, mut right) = (0usize, 0usize);
            for r in calibration.records().iter().filter(|r| &r.judge_id == v) {
                n += 1;
                right += usize::from(r.verdict == r.truth);
            }
            if n == 0 {
                return Err(EnsembleError::NoCalibration(v.clone()));
            }
            Ok((right as f64 / n as f64).clamp(COMPETENCE_FLOOR, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Majority,
    AccuracyReweight,
    EntangleReweight,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Majority,
        Strategy::AccuracyReweight,
        Strategy::EntangleReweight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Majority => "majority",
            Strategy::AccuracyReweight => "accuracy_reweight",
            Strategy::EntangleReweight => "entangle_reweight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub target: String,
    pub verifier: String,
    pub q: f64,
    pub delta_in: f64,
    pub delta_tar: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub strategy: Strategy,
    pub rows: Vec<WeightRow>,
}

impl WeightTable {
    /// `(verifier, weight)` pairs for one target, in pool order.
    pub fn pool(&self, target: &str) -> Vec<(&str, f64)> {
        self.rows
            .iter()
            .filter(|r| r.target == target)
            .map(|r| (r.verifier.as_str(), r.weight))
            .collect()
    }

    pub fn targets(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for r in &self.rows {
            if !seen.contains(&r.target) {
                seen.push(r.target.clone());
            }
        }
        seen
    }
}

/// Verifier weights per target for one strategy.
///
/// The pool for a target is every verifier other than the target itself.
/// Penalties are reported for every strategy but only enter
/// `EntangleReweight`; `AccuracyReweight` uses `eta1 = eta2 = 0` and
/// `Majority` uses equal weights.
pub fn build_weights(
    e: &EntanglementMatrix,
    verifiers: &[String],
    competence: &[f64],
    targets: &[String],
    hp: &Hyperparams,
    strategy: Strategy,
) -> Result<WeightTable, EnsembleError> {
    hp.validate()?;
    assert_eq!(verifiers.len(), competence.len(), "one competence per verifier");
    let mut rows = Vec::new();
    for target in targets {
        let (pool, q): (Vec<String>, Vec<f64>) = verifiers
            .iter()
            .zip(competence)
            .filter(|(v, _)| *v != target)
            .map(|(v, &q)| (v.clone(), q))
            .unzip();
        if pool.is_empty() {
            return Err(EnsembleError::EmptyPool(target.clone()));
        }
        let penalties = match dependency_penalties(e, &pool, target) {
            Ok(p) => p,
            Err(EnsembleError::SingletonPool) if strategy != Strategy::EntangleReweight => {
                vec![
                    Penalty {
                        delta_in: 0.0,
                        delta_tar: e.e(&pool[0], target).unwrap_or(0.0),
                    };
                    1
                ]
            }
            Err(err) => return Err(err),
        };
        let d_in: Vec<f64> = penalties.iter().map(|p| p.delta_in).collect();
        let d_tar: Vec<f64> = penalties.iter().map(|p| p.delta_tar).collect();
        let weights = match strategy {
            Strategy::Majority => vec![1.0 / pool.len() as f64; pool.len()],
            Strategy::AccuracyReweight => verifier_weights(&q, &d_in, &d_tar, hp.kappa, 0.0, 0.0),
            Strategy::EntangleReweight => {
                verifier_weights(&q, &d_in, &d_tar, hp.kappa, hp.eta1, hp.eta2)
            }
        };
        for (k, v) in pool.iter().enumerate() {
            rows.push(WeightRow {
                target: target.clone(),
                verifier: v.clone(),
                q: q[k],
                delta_in: d_in[k],
                delta_tar: d_tar[k],
                weight: weights[k],
            });
        }
    }
    Ok(WeightTable { strategy, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub target: String,
    pub task: String,
    pub score: f64,
    pub accept: bool,
    pub truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` without any accepted answer.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    pub fn from_decisions(decisions: &[Decision]) -> Metrics {
        let (mut tp, mut fp, mut fneg, mut right) = (0usize, 0usize, 0usize, 0usize);
        for d in decisions {
            match (d.accept, d.truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
            right += usize::from(d.accept == d.truth);
        }
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Metrics {
            accuracy: if decisions.is_empty() {
                0.0
            } else {
                right as f64 / decisions.len() as f64
            },
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOutcome {
    pub strategy: Strategy,
    pub decisions: Vec<Decision>,
    pub metrics: Metrics,
    /// Accuracy minus the majority-vote accuracy, when compared.
    pub delta_accuracy: Option<f64>,
}

/// Accept iff the weighted endorsement strictly exceeds one half.
pub fn decide(verdicts: &[bool], weights: &[f64]) -> (f64, bool) {
    let score: f64 = verdicts
        .iter()
        .zip(weights)
        .filter(|(v, _)| **v)
        .map(|(_, w)| w)
        .sum();
    (score, score > 0.5)
}

/// Weighted vote on every judged (target, task) and its accuracy, precision and F1.
pub fn aggregate_and_evaluate(
    js: &JudgmentDataset,
    weights: &WeightTable,
) -> Result<AggregationOutcome, EnsembleError> {
    let tasks = js.tasks();
    let mut decisions = Vec::new();
    for target in weights.targets() {
        let pool = weights.pool(&target);
        if pool.is_empty() {
            return Err(EnsembleError::EmptyPool(target));
        }
        let pool_weights: Vec<f64> = pool.iter().map(|(_, w)| *w).collect();
        for task in &tasks {
            let judged = pool
                .iter()
                .any(|(v, _)| js.get(v, &target, task).is_some());
            if !judged {
                continue;
            }
            let mut verdicts = Vec::with_capacity(pool.len());
            let mut truth = None;
            for (v, _) in &pool {
                let rec = js.get(v, &target, task).ok_or_else(|| EnsembleError::MissingVerdict {
                    verifier: (*v).to_string(),
                    target: target.clone(),
                    task: task.clone(),
                })?;
                match truth {
                    None => truth = Some(rec.correct()),
                    Some(t) if t != rec.correct() => {
                        return Err(EnsembleError::InconsistentTruth {
                            target: target.clone(),
                            task: task.clone(),
                        })
                    }
                    Some(_) => {}
                }
                verdicts.push(rec.endorsed());
            }
            let (score, accept) = decide(&verdicts, &pool_weights);
            decisions.push(Decision {
                target: target.clone(),
                task: task.clone(),
                score,
                accept,
                truth: truth.unwrap_or(false),
            });
        }
    }
    let metrics = Metrics::from_decisions(&decisions);
    Ok(AggregationOutcome {
        strategy: weights.strategy,
        decisions,
        metrics,
        delta_accuracy: None,
    })
}

/// Everything needed to weight a verifier pool.
#[derive(Debug, Clone)]
pub struct EnsembleInputs<'a> {
    pub bei: &'a [PairStatistic],
    pub cig: &'a [PairStatistic],
    pub alpha: f64,
    pub significant_only: bool,
    pub verifiers: &'a [String],
    pub competence: &'a [f64],
    pub targets: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub hyperparams: Hyperparams,
    pub outcomes: Vec<AggregationOutcome>,
    pub weights: Vec<WeightTable>,
}

/// Run all three strategies and fill each one's accuracy gain over majority vote.
pub fn compare_strategies(
    js: &JudgmentDataset,
    inputs: &EnsembleInputs<'_>,
    hp: &Hyperparams,
) -> Result<StrategyComparison, EnsembleError> {
    let e = pair_entanglement(
        inputs.bei,
        inputs.cig,
        &EntanglementConfig {
            lambda1: hp.lambda1,
            alpha: inputs.alpha,
            significant_only: inputs.significant_only,
        },
    )?;
    let mut outcomes = Vec::new();
    let mut weights = Vec::new();
    for strategy in Strategy::ALL {
        let table = build_weights(
            &e,
            inputs.verifiers,
            inputs.competence,
            inputs.targets,
            hp,
            strategy,
        )?;
        outcomes.push(aggregate_and_evaluate(js, &table)?);
        weights.push(table);
    }
    let baseline = outcomes[0].metrics.accuracy;
    for o in &mut outcomes {
        o.delta_accuracy = Some(o.metrics.accuracy - baseline);
    }
    Ok(StrategyComparison {
        hyperparams: *hp,
        outcomes,
        weights,
    })
}

/// Candidate values scanned by [`grid_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub lambda1: Vec<f64>,
    pub kappa: Vec<f64>,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            lambda1: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            kappa: vec![0.5, 1.0, 2.0],
            eta1: vec![0.0, 0.5, 1.0, 2.0],
            eta2: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

/// Hyperparameters maximising entangle-reweight accuracy on a held-out judgment set.
///
/// Ties go to the candidate closest to the defaults, then to grid order.
pub fn grid_search(
    held_out: &JudgmentDataset,
    inputs: &EnsembleInputs<'_>,
    grid: &HyperGrid,
) -> Result<(Hyperparams, f64), EnsembleError> {
    let defaults = Hyperparams::default();
    let distance = |h: &Hyperparams| {
        (h.lambda1 - defaults.lambda1).abs()
            + (h.kappa - defaults.kappa).abs()
            + (h.eta1 - defaults.eta1).abs()
            + (h.eta2 - defaults.eta2).abs()
    };
    let mut best: Option<(Hyperparams, f64)> = None;
    for &lambda1 in &grid.lambda1 {
        let e = pair_entanglement(
            inputs.bei,
            inputs.cig,
            &EntanglementConfig {
                lambda1,
                alpha: inputs.alpha,
                significant_only: inputs.significant_only,
            },
        )?;
        for &kappa in &grid.kappa {
            for &eta1 in &grid.eta1 {
                for &eta2 in &grid.eta2 {
                    let hp = Hyperparams {
                        lambda1,
                        kappa,
                        eta1,
                        eta2,
                    };
                    let table = build_weights(
                        &e,
                        inputs.verifiers,
                        inputs.competence,
                        inputs.targets,
                        &hp,
                        Strategy::EntangleReweight,
                    )?;
                    let acc = aggregate_and_evaluate(held_out, &table)?.metrics.accuracy;
                    let better = match &best {
                        None => true,
                        Some((b, b_acc)) => {
                            acc > *b_acc || (acc == *b_acc && distance(&hp) < distance(b))
                        }
                    };
                    if better {
                        best = Some((hp, acc));
                    }
                }
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}
