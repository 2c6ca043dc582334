//! Judge over-endorsement bias and its association with entanglement.
//!
//! A judge's bias toward a model is the gap between its global precision
//! `P(correct | endorsed)` and its precision restricted to that model's answers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::ingest::JudgmentDataset;
use crate::rank::midranks;

/// Largest sample size for which Spearman's p-value is computed by full permutation.
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

/// Minimum number of (judge, model) pairs for a correlation.
pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("judge `{judge}` endorsed nothing")]
    NoEndorsements { judge: String },
    #[error("judge `{judge}` endorsed no answers of model `{model}`")]
    NoModelEndorsements { judge: String, model: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {MIN_PAIRS} observations, got {0}")]
    TooFewObservations(usize),
    #[error("input has no rank variance")]
    ConstantInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionDeviation {
    pub judge: String,
    pub model: String,
    pub global_precision: f64,
    pub model_precision: f64,
    /// Global minus model-specific precision; positive means over-endorsement.
    pub delta: f64,
    pub global_endorsements: usize,
    pub model_endorsements: usize,
}

pub fn delta_precision(
    js: &JudgmentDataset,
    judge: &str,
    model: &str,
) -> Result<PrecisionDeviation, BiasError> {
    let (mut global_n, mut global_tp, mut model_n, mut model_tp) = (0usize, 0usize, 0usize, 0usize);
    for r in js.records().iter().filter(|r| r.judge_id == judge && r.endorsed()) {
        global_n += 1;
        global_tp += usize::from(r.correct());
        if r.model_id == model {
            model_n += 1;
            model_tp += usize::from(r.correct());
        }
    }
    if global_n == 0 {
        return Err(BiasError::NoEndorsements {
            judge: judge.into(),
        });
    }
    if model_n == 0 {
        return Err(BiasError::NoModelEndorsements {
            judge: judge.into(),
            model: model.into(),
        });
    }
    let global_precision = global_tp as f64 / global_n as f64;
    let model_precision = model_tp as f64 / model_n as f64;
    Ok(PrecisionDeviation {
        judge: judge.into(),
        model: model.into(),
        global_precision,
        model_precision,
        delta: global_precision - model_precision,
        global_endorsements: global_n,
        model_endorsements: model_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    TApproximation,
    ExactPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    /// One-sided, alternative `rho > 0`.
    pub p_greater: f64,
    pub n: usize,
    pub method: CorrelationMethod,
}

/// Spearman rank correlation with mid-rank ties.
///
/// p-values come from full permutation for `n <= 10` and from the t
/// approximation with `n - 2` degrees of freedom otherwise.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<AssociationResult, BiasError> {
    if xs.len() != ys.len() {
        return Err(BiasError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < MIN_PAIRS {
        return Err(BiasError::TooFewObservations(n));
    }
    let rx = centered(midranks(xs));
    let ry = centered(midranks(ys));
    let sxx: f64 = rx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| v * v).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(BiasError::ConstantInput);
    }
    let norm = (sxx * syy).sqrt();
    let rho = (dot(&rx, &ry) / norm).clamp(-1.0, 1.0);

    if n <= EXACT_SPEARMAN_MAX_N {
        let (two, greater) = permutation_pvalues(&rx, &ry, norm, rho);
        return Ok(AssociationResult {
            rho,
            p_value: two,
            p_greater: greater,
            n,
            method: CorrelationMethod::ExactPermutation,
        });
    }

    let df = (n - 2) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let (p_value, p_greater) = if 1.0 - rho.abs() < 1e-15 {
        (0.0, if rho > 0.0 { 0.0 } else { 1.0 })
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        ((2.0 * dist.cdf(-t.abs())).min(1.0), dist.cdf(-t))
    };
    Ok(AssociationResult {
        rho,
        p_value,
        p_greater,
        n,
        method: CorrelationMethod::TApproximation,
    })
}

fn centered(v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.into_iter().map(|x| x - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exhaustive permutation of `ry` against `rx` (Heap's algorithm).
fn permutation_pvalues(rx: &[f64], ry: &[f64], norm: f64, rho: f64) -> (f64, f64) {
    const EPS: f64 = 1e-12;
    let n = ry.len();
    let mut perm = ry.to_vec();
    let mut c = vec![0usize; n];
    let (mut total, mut two, mut greater) = (0u64, 0u64, 0u64);
    let mut tally = |perm: &[f64]| {
        let r = dot(rx, perm) / norm;
        total += 1;
        if r.abs() >= rho.abs() - EPS {
            two += 1;
        }
        if r >= rho - EPS {
            greater += 1;
        }
    };
    tally(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            tally(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (two as f64 / total as f64, greater as f64 / total as f64)
}

/// Significance annotation: `***` < 0.001, `**` < 0.01, `*` < 0.05, `·` < 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "·"
    } else {
        ""
    }
}

/// Symmetric pair scores keyed by model id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScores {
    scores: BTreeMap<(String, String), f64>,
}

impl PairScores {
    pub fn insert(&mut self, a: &str, b: &str, score: f64) {
        self.scores.insert(key(a, b), score);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.scores.get(&key(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl<'a> FromIterator<(&'a str, &'a str, f64)> for PairScores {
    fn from_iter<I: IntoIterator<Item = (&'a str, &'a str, f64)>>(iter: I) -> Self {
        let mut s = PairScores::default();
        for (a, b, v) in iter {
            s.insert(a, b, v);
        }
        s
    }
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub judge: String,
    pub model: String,
    pub delta_prec: Option<f64>,
    pub bei: Option<f64>,
    pub cig: Option<f64>,
    /// Why the row is excluded from correlations, if it is.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    /// Judge id, or `"*"` for the pooled correlation.
    pub judge: String,
    /// `bei` or `cig`.
    pub metric: String,
    pub n: usize,
    pub association: Option<AssociationResult>,
    pub stars: String,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub rows: Vec<BiasRow>,
    pub correlations: Vec<CorrelationSummary>,
}

/// ΔPrecision for every (judge, answering model) pair, and per-judge Spearman
/// correlations of ΔPrecision with BEI and CIG.
///
/// A judge's own answers are not scored. `pooled` adds one correlation over all rows.
pub fn bias_report(
    js: &JudgmentDataset,
    bei: &PairScores,
    cig: &PairScores,
    pooled: bool,
) -> BiasReport {
    let mut rows = Vec::new();
    let judges = js.judges();
    let models = js.models();
    for judge in &judges {
        for model in models.iter().filter(|m| *m != judge) {
            let judged = js
                .records()
                .iter()
                .any(|r| &r.judge_id == judge && &r.model_id == model);
            if !judged {
                continue;
            }
            let (delta_prec, flag) = match delta_precision(js, judge, model) {
                Ok(d) => (Some(d.delta), None),
                Err(BiasError::NoModelEndorsements { .. }) => {
                    (None, Some("NoModelEndorsements".to_string()))
                }
                Err(BiasError::NoEndorsements { .. }) => (None, Some("NoEndorsements".to_string())),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(BiasRow {
                judge: judge.clone(),
                model: model.clone(),
                delta_prec,
                bei: bei.get(judge, model),
                cig: cig.get(judge, model),
                flag,
            });
        }
    }

    let mut correlations = Vec::new();
    let groups: Vec<(String, Vec<&BiasRow>)> = judges
        .iter()
        .map(|j| (j.clone(), rows.iter().filter(|r| &r.judge == j).collect()))
        .chain(pooled.then(|| ("*".to_string(), rows.iter().collect())))
        .collect();
    for (judge, group) in groups {
        for metric in ["bei", "cig"] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = group
                .iter()
                .filter_map(|r| {
                    let score = if metric == "bei" { r.bei } else { r.cig };
                    Some((score?, r.delta_prec?))
                })
                .unzip();
            let n = xs.len();
            let (association, flag) = if n < MIN_PAIRS {
                (None, Some("InsufficientPairs".to_string()))
            } else {
                match spearman(&xs, &ys) {
                    Ok(a) => (Some(a), None),
                    Err(BiasError::ConstantInput) => (None, Some("ConstantInput".to_string())),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            let stars = association
                .as_ref()
                .map(|a| significance_stars(a.p_value).to_string())
                .unwrap_or_default();
            correlations.push(CorrelationSummary {
                judge: judge.clone(),
                metric: metric.to_string(),
                n,
                association,
                stars,
                flag,
            });
        }
    }
    BiasReport { rows, correlations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::JudgmentRecord;
    use proptest::prelude::*;

    fn judgments(rows: &[(&str, &str, u8, u8)]) -> JudgmentDataset {
        // (judge, model, verdict, truth); task ids are generated
        JudgmentDataset::from_records(rows.iter().enumerate().map(|(k, &(j, m, v, t))| {
            (
                k + 1,
                JudgmentRecord {
                    task_id: format!("t{k}"),
                    judge_id: j.into(),
                    model_id: m.into(),
                    verdict: v,
                    truth: t,
                    reasoning_quality: None,
                },
            )
        }))
        .unwrap()
    }

    #[test]
    fn delta_precision_by_counting() {
        // 10 endorsements, 8 correct; 4 of them on M, 2 correct
        let mut rows = vec![("J", "M", 1, 1), ("J", "M", 1, 1), ("J", "M", 1, 0), ("J", "M", 1, 0)];
        rows.extend(std::iter::repeat_n(("J", "N", 1, 1), 6));
        rows.push(("J", "N", 0, 0));
        let d = delta_precision(&judgments(&rows), "J", "M").unwrap();
        assert!((d.global_precision - 0.8).abs() < 1e-15);
        assert!((d.model_precision - 0.5).abs() < 1e-15);
        assert!((d.delta - 0.3).abs() < 1e-12);
        assert_eq!((d.global_endorsements, d.model_endorsements), (10, 4));
    }

    #[test]
    fn delta_is_zero_when_precisions_agree() {
        let js = judgments(&[("J", "M", 1, 1), ("J", "M", 1, 0), ("J", "N", 1, 1), ("J", "N", 1, 0)]);
        assert_eq!(delta_precision(&js, "J", "M").unwrap().delta, 0.0);
    }

    #[test]
    fn missing_endorsements_are_errors() {
        let js = judgments(&[("J", "M", 0, 1), ("J", "N", 1, 1), ("K", "M", 0, 0)]);
        assert!(matches!(
            delta_precision(&js, "J", "M"),
            Err(BiasError::NoModelEndorsements { .. })
        ));
        assert!(matches!(
            delta_precision(&js, "K", "M"),
            Err(BiasError::NoEndorsements { .. })
        ));
    }

    #[test]
    fn spearman_hand_values() {
        let r = spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r.rho - 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((r.rho + 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.rho - 0.8).abs() < 1e-12);
        assert_eq!(r.method, CorrelationMethod::ExactPermutation);
        // identity plus three adjacent swaps reach rho >= 0.8; mirrored on the negative side
        assert!((r.p_value - 8.0 / 24.0).abs() < 1e-12);
        assert!((r.p_greater - 4.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(BiasError::TooFewObservations(2)));
        assert_eq!(spearman(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(BiasError::ConstantInput));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0]), Err(BiasError::LengthMismatch(3, 1)));
    }

    #[test]
    fn t_approximation_matches_reference() {
        // scipy.stats.spearmanr on these 12 points: rho = 0.8741258741, p = 2.0071307e-4
        let xs: Vec<f64> = (1..=12).map(f64::from).collect();
        let ys = [2.0, 1.0, 4.0, 3.0, 7.0, 5.0, 6.0, 12.0, 8.0, 11.0, 9.0, 10.0];
        let r = spearman(&xs, &ys).unwrap();
        assert_eq!(r.method, CorrelationMethod::TApproximation);
        let d2: f64 = xs.iter().zip(ys).map(|(x, y)| (x - y).powi(2)).sum();
        let classic = 1.0 - 6.0 * d2 / (12.0 * (144.0 - 1.0));
        assert!((r.rho - classic).abs() < 1e-12);
        let t = r.rho * (10.0 / (1.0 - r.rho * r.rho)).sqrt();
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 10.0).unwrap().cdf(t));
        assert!((r.p_value - p).abs() < 1e-12);
        assert!((r.rho - 0.874_125_874_125_874_2).abs() < 1e-12);
        assert!((r.p_value - 2.007_130_733_242_319e-4).abs() < 1e-9);
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.004), "**");
        assert_eq!(significance_stars(0.03), "*");
        assert_eq!(significance_stars(0.07), "·");
        assert_eq!(significance_stars(0.5), "");
    }

    #[test]
    fn report_flags_missing_and_correlates() {
        let mut rows = Vec::new();
        // judge J over models A..C with increasing false endorsements
        for (m, wrong) in [("A", 0), ("B", 1), ("C", 2)] {
            for _ in 0..4 {
                rows.push(("J", m, 1, 1));
            }
            for _ in 0..wrong {
                rows.push(("J", m, 1, 0));
            }
        }
        rows.push(("J", "D", 0, 1));
        let js = judgments(&rows);
        let bei: PairScores = [("J", "A", 0.1), ("J", "B", 0.2), ("J", "C", 0.3), ("J", "D", 0.4)]
            .into_iter()
            .collect();
        let report = bias_report(&js, &bei, &PairScores::default(), false);
        let d = report.rows.iter().find(|r| r.model == "D").unwrap();
        assert_eq!(d.flag.as_deref(), Some("NoModelEndorsements"));
        assert_eq!(d.delta_prec, None);
        let bei_corr = &report.correlations[0];
        assert_eq!(bei_corr.metric, "bei");
        assert_eq!(bei_corr.n, 3);
        assert!((bei_corr.association.as_ref().unwrap().rho - 1.0).abs() < 1e-12);
        let cig_corr = &report.correlations[1];
        assert_eq!(cig_corr.flag.as_deref(), Some("InsufficientPairs"));
    }

    proptest! {
        #[test]
        fn spearman_rank_invariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let fx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
            match (spearman(&xs, &ys), spearman(&fx, &ys)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.rho - b.rho).abs() < 1e-12);
                    prop_assert!(a.rho.abs() <= 1.0);
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn delta_ignores_record_order(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rows = vec![
                ("J", "M", 1, 1), ("J", "M", 1, 0), ("J", "N", 1, 1),
                ("J", "N", 0, 0), ("J", "M", 1, 1), ("J", "N", 1, 0),
            ];
            let a = delta_precision(&judgments(&rows), "J", "M").unwrap();
            rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = delta_precision(&judgments(&rows), "J", "M").unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
