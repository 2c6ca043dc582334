//! Task difficulty, per-model difficulty-response calibration, and residuals.
//!
//! Difficulty is the population failure rate of a task. Each model's failure
//! probability is modelled as `sigmoid(alpha + beta * d)` and fitted by
//! ridge-penalised IRLS. Residuals are observed failure minus that fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ResponseDataset;
use crate::rank::midranks;

/// Lower clamp for predicted failure probabilities; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("calibration needs at least 2 tasks, got {0}")]
    InsufficientTasks(usize),
    #[error("dataset has no models")]
    NoModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    /// Per-task fraction of models failing.
    pub difficulty: Vec<f64>,
    /// `1 - difficulty`.
    pub easiness: Vec<f64>,
}

impl DifficultyProfile {
    pub fn len(&self) -> usize {
        self.difficulty.len()
    }

    pub fn is_empty(&self) -> bool {
        self.difficulty.is_empty()
    }
}

pub fn compute_difficulty(ds: &ResponseDataset) -> DifficultyProfile {
    let m = ds.n_models() as f64;
    let difficulty: Vec<f64> = (0..ds.n_tasks())
        .map(|t| (0..ds.n_models()).filter(|&j| ds.failed(t, j)).count() as f64 / m)
        .collect();
    let easiness = difficulty.iter().map(|d| 1.0 - d).collect();
    DifficultyProfile {
        difficulty,
        easiness,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// L2 penalty on the slope. The intercept is not penalised.
    pub ridge: f64,
    pub max_iter: usize,
    /// Convergence threshold on the gradient norm of the penalised log-likelihood.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ridge: 1e-6,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Logistic difficulty-response fit for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub alpha: f64,
    pub beta: f64,
    /// Rank AUC of fitted probabilities against failures. `None` when one class is empty.
    pub auc: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// All labels identical; the fit is a clamped constant.
    pub degenerate: bool,
}

impl ModelFit {
    pub fn predict(&self, d: f64) -> f64 {
        clamp_prob(sigmoid(self.alpha + self.beta * d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub fits: Vec<ModelFit>,
}

impl CalibrationModel {
    pub fn predict(&self, model: usize, d: f64) -> f64 {
        self.fits[model].predict(d)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Penalised Bernoulli log-likelihood, `sum(y*eta - log(1+e^eta)) - ridge/2 * beta^2`.
fn penalized_loglik(x: &[f64], y: &[bool], alpha: f64, beta: f64, ridge: f64) -> f64 {
    let ll: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = alpha + beta * xi;
            let log1pexp = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            if yi {
                eta - log1pexp
            } else {
                -log1pexp
            }
        })
        .sum();
    ll - 0.5 * ridge * beta * beta
}

/// Fit `P(y) = sigmoid(alpha + beta * x)` by Newton/IRLS with step halving.
pub fn fit_logistic(x: &[f64], y: &[bool], cfg: &FitConfig) -> Result<ModelFit, DifficultyError> {
    if x.len() != y.len() {
        return Err(DifficultyError::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(DifficultyError::InsufficientTasks(x.len()));
    }

    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        let p = if positives == 0 {
            PROB_CLAMP
        } else {
            1.0 - PROB_CLAMP
        };
        return Ok(ModelFit {
            alpha: logit(p),
            beta: 0.0,
            auc: None,
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let rate = positives as f64 / y.len() as f64;
    let (mut alpha, mut beta) = (logit(rate), 0.0);
    let mut ll = penalized_loglik(x, y, alpha, beta, cfg.ridge);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        // gradient and negative Hessian of the penalised log-likelihood
        let (mut g0, mut g1) = (0.0, -cfg.ridge * beta);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, cfg.ridge);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(alpha + beta * xi);
            let r = f64::from(u8::from(yi)) - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        if g0.hypot(g1) < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let det = h00 * h11 - h01 * h01;
        let (step0, step1) = if det.abs() > f64::MIN_POSITIVE && det.is_finite() {
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        } else {
            // singular curvature: fall back to a scaled gradient step
            (g0 / h00.max(1e-12), g1 / h11.max(1e-12))
        };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let (a, b) = (alpha + scale * step0, beta + scale * step1);
            let cand = penalized_loglik(x, y, a, b, cfg.ridge);
            if cand.is_finite() && cand >= ll - 1e-12 * ll.abs().max(1.0) {
                alpha = a;
                beta = b;
                ll = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let scores: Vec<f64> = x
        .iter()
        .map(|&xi| clamp_prob(sigmoid(alpha + beta * xi)))
        .collect();
    Ok(ModelFit {
        alpha,
        beta,
        auc: roc_auc(&scores, y),
        iterations,
        converged,
        degenerate: false,
    })
}

/// Rank-based ROC AUC (Mann-Whitney), ties counted as one half.
///
/// Returns `None` when either class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let n_pos_f = n_pos as f64;
    Some((rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Fit one logistic curve per model against task difficulty.
pub fn fit_calibration(
    ds: &ResponseDataset,
    profile: &DifficultyProfile,
    cfg: &FitConfig,
) -> Result<CalibrationModel, DifficultyError> {
    if ds.n_models() == 0 {
        return Err(DifficultyError::NoModels);
    }
    if profile.len() != ds.n_tasks() {
        return Err(DifficultyError::DimensionMismatch {
            expected: ds.n_tasks(),
            actual: profile.len(),
        });
    }
    let fits = (0..ds.n_models())
        .into_par_iter()
        .map(|m| fit_logistic(&profile.difficulty, &ds.failures(m), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CalibrationModel { fits })
}

/// Task × model residuals `Y - p_m(d_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    n_models: usize,
    // model-major: values[m * n_tasks + t]
    values: Vec<f64>,
}

impl ResidualMatrix {
    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_tasks(&self) -> usize {
        self.values.len().checked_div(self.n_models).unwrap_or(0)
    }

    pub fn get(&self, task: usize, model: usize) -> f64 {
        self.model(model)[task]
    }

    /// All residuals of one model, indexed by task.
    pub fn model(&self, model: usize) -> &[f64] {
        let t = self.n_tasks();
        &self.values[model * t..(model + 1) * t]
    }
}

pub fn compute_residuals(
    ds: &ResponseDataset,
    cal: &CalibrationModel,
    profile: &DifficultyProfile,
) -> Result<ResidualMatrix, DifficultyError> {
    if cal.fits.len() != ds.n_models() {
        return Err(DifficultyError::DimensionMismatch {
            expected: ds.n_models(),
            actual: cal.fits.len(),
        });
    }
    if profile.len() != ds.n_tasks() {
        return Err(DifficultyError::DimensionMismatch {
            expected: ds.n_tasks(),
            actual: profile.len(),
        });
    }
    let mut values = Vec::with_capacity(ds.n_models() * ds.n_tasks());
    for (m, fit) in cal.fits.iter().enumerate() {
        for (t, &d) in profile.difficulty.iter().enumerate() {
            values.push(residual(ds.failed(t, m), fit.predict(d)));
        }
    }
    Ok(ResidualMatrix {
        n_models: ds.n_models(),
        values,
    })
}

pub fn residual(failed: bool, predicted: f64) -> f64 {
    f64::from(u8::from(failed)) - predicted
}
