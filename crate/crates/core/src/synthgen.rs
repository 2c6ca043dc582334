//! Synthetic response and judgment datasets with known planted structure.
//!
//! Each model fails task `t` when its private uniform draw falls below
//! `sigmoid(alpha_m + beta_m * u_t)`. A planted pair shares one uniform draw
//! with probability `rho_fail`, which couples their failures without changing
//! either marginal. When both members of a pair fail, the second copies the
//! first's distractor with probability `rho_dir`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::sigmoid;
use crate::ingest::{IngestError, JudgmentDataset, JudgmentRecord, ResponseDataset, ResponseRecord};
use crate::streams::{rng_from_seed, splitmix64};

const MAX_OPTIONS: usize = 26;
const JUDGMENT_STREAM: u64 = 0x6a75_6467_6d65_6e74;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub first: usize,
    pub second: usize,
    #[serde(default)]
    pub rho_fail: f64,
    #[serde(default)]
    pub rho_dir: f64,
}

impl PlantedPair {
    pub fn strength(&self) -> f64 {
        self.rho_fail.max(self.rho_dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// Model indices acting as judges. A judge never grades its own answers.
    pub judges: Vec<usize>,
    pub p_tp: f64,
    pub p_fp: f64,
    /// False-endorsement inflation per unit of planted pair strength.
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_models: usize,
    pub n_tasks: usize,
    pub n_options: usize,
    /// Per-model logistic intercepts; empty selects the default spread.
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Per-model logistic slopes; empty selects [`DEFAULT_BETA`] for every model.
    #[serde(default)]
    pub beta: Vec<f64>,
    /// Latent difficulty is drawn uniformly from `[lo, hi]`.
    #[serde(default = "unit_interval")]
    pub difficulty_range: (f64, f64),
    #[serde(default)]
    pub planted: Vec<PlantedPair>,
    /// Concentration of the per-task distractor attractiveness draw.
    #[serde(default = "one")]
    pub concentration: f64,
    /// Probability that a failing model abstains instead of picking a distractor.
    #[serde(default)]
    pub abstain_rate: f64,
    #[serde(default)]
    pub judges: Option<JudgeConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn unit_interval() -> (f64, f64) {
    (0.0, 1.0)
}

fn one() -> f64 {
    1.0
}

pub const DEFAULT_BETA: f64 = 8.0;

impl SynthConfig {
    pub fn new(n_models: usize, n_tasks: usize, n_options: usize, seed: u64) -> Self {
        SynthConfig {
            n_models,
            n_tasks,
            n_options,
            alpha: Vec::new(),
            beta: Vec::new(),
            difficulty_range: unit_interval(),
            planted: Vec::new(),
            concentration: 1.0,
            abstain_rate: 0.0,
            judges: None,
            seed,
        }
    }

    /// Intercepts spread evenly over `[-5, -3]`, so failure rates sit near one half.
    pub fn alphas(&self) -> Vec<f64> {
        if !self.alpha.is_empty() {
            return self.alpha.clone();
        }
        let m = self.n_models;
        (0..m)
            .map(|k| {
                let frac = if m > 1 { k as f64 / (m - 1) as f64 } else { 0.5 };
                -5.0 + 2.0 * frac
            })
            .collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.beta.is_empty() {
            vec![DEFAULT_BETA; self.n_models]
        } else {
            self.beta.clone()
        }
    }

    pub fn model_id(&self, m: usize) -> String {
        format!("m{m:02}")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.n_models < 2 {
            return bad(format!("need at least 2 models, got {}", self.n_models));
        }
        if self.n_tasks == 0 {
            return bad("need at least one task".into());
        }
        if !(2..=MAX_OPTIONS).contains(&self.n_options) {
            return bad(format!("options per task must be in 2..={MAX_OPTIONS}, got {}", self.n_options));
        }
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if !v.is_empty() && v.len() != self.n_models {
                return bad(format!("{name} has {} entries for {} models", v.len(), self.n_models));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} contains a non-finite value"));
            }
        }
        let (lo, hi) = self.difficulty_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("difficulty range ({lo}, {hi}) is not an interval"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(0.0..=1.0).contains(&self.abstain_rate) {
            return bad(format!("abstain rate {} outside [0, 1]", self.abstain_rate));
        }
        for p in &self.planted {
            if p.first >= self.n_models || p.second >= self.n_models || p.first == p.second {
                return bad(format!("planted pair ({}, {}) is not a valid model pair", p.first, p.second));
            }
            if !(0.0..=1.0).contains(&p.rho_fail) || !(0.0..=1.0).contains(&p.rho_dir) {
                return bad(format!("planted pair ({}, {}) has rho outside [0, 1]", p.first, p.second));
            }
        }
        if let Some(j) = &self.judges {
            if j.judges.iter().any(|&m| m >= self.n_models) {
                return bad("judge index out of range".into());
            }
            if !(0.0..=1.0).contains(&j.p_tp) || !(0.0..=1.0).contains(&j.p_fp) {
                return bad("judge rates must lie in [0, 1]".into());
            }
            if !(j.coupling >= 0.0 && j.coupling.is_finite()) {
                return bad(format!("judge coupling must be non-negative, got {}", j.coupling));
            }
        }
        Ok(())
    }

    /// Largest planted strength between two models, 0 when unpaired.
    pub fn pair_strength(&self, a: usize, b: usize) -> f64 {
        self.planted
            .iter()
            .filter(|p| (p.first, p.second) == (a, b) || (p.first, p.second) == (b, a))
            .map(PlantedPair::strength)
            .fold(0.0, f64::max)
    }
}

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub models: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub planted: Vec<PlantedPair>,
    /// Latent difficulty per task.
    pub difficulty: Vec<f64>,
    /// Per-task distractor weights, keyed by option label.
    pub attractiveness: Vec<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judges: Option<JudgeConfig>,
}

fn option_label(k: usize) -> String {
    char::from(b'A' + k as u8).to_string()
}

fn task_id(t: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(4);
    format!("t{t:0width$}")
}

/// Draw a response grid from `cfg`. Deterministic in `cfg.seed`.
pub fn generate_responses(cfg: &SynthConfig) -> Result<(ResponseDataset, SynthTruth), SynthError> {
    cfg.validate()?;
    let (m, k) = (cfg.n_models, cfg.n_options);
    let alphas = cfg.alphas();
    let betas = cfg.betas();
    let labels: Vec<String> = (0..k).map(option_label).collect();
    let models: Vec<String> = (0..m).map(|i| cfg.model_id(i)).collect();
    let gamma = Gamma::new(cfg.concentration, 1.0)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut rng = rng_from_seed(cfg.seed);

    let mut records = Vec::with_capacity(cfg.n_tasks * m);
    let mut difficulty = Vec::with_capacity(cfg.n_tasks);
    let mut attractiveness = Vec::with_capacity(cfg.n_tasks);
    let (lo, hi) = cfg.difficulty_range;

    for t in 0..cfg.n_tasks {
        let u = lo + (hi - lo) * rng.random::<f64>();
        let correct = rng.random_range(0..k);
        let distractors: Vec<usize> = (0..k).filter(|&o| o != correct).collect();
        let mut weights: Vec<f64> = distractors.iter().map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            weights = vec![1.0 / distractors.len() as f64; distractors.len()];
        }

        let mut draws: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        for p in &cfg.planted {
            if p.rho_fail > 0.0 && rng.random::<f64>() < p.rho_fail {
                draws[p.second] = draws[p.first];
            }
        }
        let failed: Vec<bool> = (0..m)
            .map(|i| draws[i] < sigmoid(alphas[i] + betas[i] * u))
            .collect();

        let mut selected: Vec<Option<usize>> = vec![Some(correct); m];
        for i in 0..m {
            if !failed[i] {
                continue;
            }
            if cfg.abstain_rate > 0.0 && rng.random::<f64>() < cfg.abstain_rate {
                selected[i] = None;
                continue;
            }
            selected[i] = Some(distractors[sample_index(&weights, rng.random::<f64>())]);
        }
        for p in &cfg.planted {
            if p.rho_dir > 0.0 && failed[p.first] && failed[p.second] {
                let copy = rng.random::<f64>() < p.rho_dir;
                if copy && selected[p.first].is_some() && selected[p.second].is_some() {
                    selected[p.second] = selected[p.first];
                }
            }
        }

        let id = task_id(t, cfg.n_tasks);
        for (i, model) in models.iter().enumerate() {
            records.push(ResponseRecord {
                task_id: id.clone(),
                model_id: model.clone(),
                options: labels.clone(),
                correct_option: labels[correct].clone(),
                selected_option: selected[i].map(|o| labels[o].clone()),
            });
        }
        difficulty.push(u);
        attractiveness.push(
            distractors
                .iter()
                .zip(&weights)
                .map(|(&o, &w)| (labels[o].clone(), w))
                .collect(),
        );
    }

    let ds = ResponseDataset::from_records(records.into_iter().enumerate().map(|(n, r)| (n + 1, r)))?;
    let truth = SynthTruth {
        seed: cfg.seed,
        models,
        alpha: alphas,
        beta: betas,
        planted: cfg.planted.clone(),
        difficulty,
        attractiveness,
        judges: cfg.judges.clone(),
    };
    Ok((ds, truth))
}

fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Judge every non-judge answer in `responses` with the configured judges.
///
/// Correct answers are endorsed with probability `p_tp`; incorrect ones with
/// `p_fp + coupling * strength(judge, model)`, capped at 1.
pub fn generate_judgments(
    cfg: &SynthConfig,
    responses: &ResponseDataset,
) -> Result<JudgmentDataset, SynthError> {
    cfg.validate()?;
    let jc = cfg
        .judges
        .as_ref()
        .ok_or_else(|| SynthError::InvalidConfig("no judges configured".into()))?;
    if responses.n_models() != cfg.n_models {
        return Err(SynthError::InvalidConfig(format!(
            "responses have {} models, config {}",
            responses.n_models(),
            cfg.n_models
        )));
    }
    let mut rng: ChaCha8Rng = rng_from_seed(splitmix64(cfg.seed ^ JUDGMENT_STREAM));
    let mut records = Vec::new();
    for &judge in &jc.judges {
        for m in (0..responses.n_models()).filter(|&m| m != judge) {
            let fp = (jc.p_fp + jc.coupling * cfg.pair_strength(judge, m)).min(1.0);
            for (t, task) in responses.tasks().iter().enumerate() {
                let correct = !responses.failed(t, m);
                let rate = if correct { jc.p_tp } else { fp };
                let verdict = rng.random::<f64>() < rate;
                records.push(JudgmentRecord {
                    task_id: task.id.clone(),
                    judge_id: responses.models()[judge].clone(),
                    model_id: responses.models()[m].clone(),
                    verdict: u8::from(verdict),
                    truth: u8::from(correct),
                    reasoning_quality: None,
                });
            }
        }
    }
    Ok(JudgmentDataset::from_records(
        records.into_iter().enumerate().map(|(n, r)| (n + 1, r)),
    )?)
}

/// Split judgments into (even-position tasks, odd-position tasks) by task order in `responses`.
pub fn split_by_task_parity(
    judgments: &JudgmentDataset,
    responses: &ResponseDataset,
) -> (JudgmentDataset, JudgmentDataset) {
    let position: BTreeMap<&str, usize> = responses
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let even = |id: &str| position.get(id).is_some_and(|p| p % 2 == 0);
    (
        judgments.filter_tasks(even),
        judgments.filter_tasks(|id| !even(id)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Six independent models, no coupling.
    Null,
    /// One co-failure pair.
    BeiPair,
    /// One same-distractor pair.
    CigPair,
    /// Co-failure coupling with independent distractor choice.
    Level1Only,
    /// One judge coupled to the other models with graded strength.
    JudgePanel,
    /// A target with two entangled verifiers and one independent verifier.
    VerifierClique,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Null,
        Preset::BeiPair,
        Preset::CigPair,
        Preset::Level1Only,
        Preset::JudgePanel,
        Preset::VerifierClique,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Null => "null",
            Preset::BeiPair => "bei-pair",
            Preset::CigPair => "cig-pair",
            Preset::Level1Only => "level-1-only",
            Preset::JudgePanel => "judge-panel",
            Preset::VerifierClique => "verifier-clique",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn config(self, seed: u64) -> SynthConfig {
        let pair = |rho_fail, rho_dir| PlantedPair {
            first: 0,
            second: 1,
            rho_fail,
            rho_dir,
        };
        match self {
            Preset::Null => SynthConfig::new(6, 500, 4, seed),
            Preset::BeiPair => SynthConfig {
                planted: vec![pair(0.5, 0.0)],
                ..SynthConfig::new(6, 1000, 4, seed)
            },
            Preset::CigPair => SynthConfig {
                planted: vec![pair(0.0, 0.6)],
                ..SynthConfig::new(6, 1000, 4, seed)
            },
            Preset::Level1Only => SynthConfig {
                planted: vec![pair(0.5, 0.0)],
                ..SynthConfig::new(6, 1000, 4, seed)
            },
            Preset::JudgePanel => {
                let n = 12;
                let planted = (1..n)
                    .map(|m| {
                        let rho = 0.6 * (m - 1) as f64 / (n - 2) as f64;
                        PlantedPair {
                            first: 0,
                            second: m,
                            rho_fail: rho,
                            rho_dir: rho,
                        }
                    })
                    .filter(|p| p.strength() > 0.0)
                    .collect();
                SynthConfig {
                    planted,
                    judges: Some(JudgeConfig {
                        judges: vec![0],
                        p_tp: 0.9,
                        p_fp: 0.1,
                        coupling: 1.0,
                    }),
                    ..SynthConfig::new(n, 1000, 4, seed)
                }
            }
            Preset::VerifierClique => {
                let clique = |first, second| PlantedPair {
                    first,
                    second,
                    rho_fail: 0.5,
                    rho_dir: 0.6,
                };
                SynthConfig {
                    planted: vec![clique(0, 1), clique(0, 2), clique(1, 2)],
                    judges: Some(JudgeConfig {
                        judges: vec![1, 2, 3],
                        p_tp: 0.9,
                        p_fp: 0.2,
                        coupling: 1.0,
                    }),
                    ..SynthConfig::new(8, 600, 4, seed)
                }
            }
        }
    }
}
