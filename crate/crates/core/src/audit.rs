//! End-to-end pair audit of a response dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bei::{bei_audit, AuditConfig, BeiError};
use crate::cig::{cig_audit_with_events, CigError, CollisionEvent};
use crate::difficulty::{
    compute_difficulty, compute_residuals, fit_calibration, CalibrationModel, DifficultyError,
    DifficultyProfile, FitConfig,
};
use crate::ingest::ResponseDataset;
use crate::pairs::PairStatistic;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error(transparent)]
    Bei(#[from] BeiError),
    #[error(transparent)]
    Cig(#[from] CigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Bei,
    Cig,
    #[default]
    Both,
}

impl Level {
    pub fn includes_bei(self) -> bool {
        matches!(self, Level::Bei | Level::Both)
    }

    pub fn includes_cig(self) -> bool {
        matches!(self, Level::Cig | Level::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Bei => "bei",
            Level::Cig => "cig",
            Level::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub profile: DifficultyProfile,
    pub calibration: CalibrationModel,
    pub bei: Option<Vec<PairStatistic>>,
    pub cig: Option<Vec<(PairStatistic, Vec<CollisionEvent>)>>,
}

impl AuditOutcome {
    pub fn cig_stats(&self) -> Option<Vec<PairStatistic>> {
        self.cig
            .as_ref()
            .map(|rows| rows.iter().map(|(s, _)| s.clone()).collect())
    }
}

/// Difficulty, per-model calibration and the requested pair families.
///
/// Calibration is always fitted since its AUCs are reported at every level.
pub fn run_audit(
    ds: &ResponseDataset,
    level: Level,
    cfg: &AuditConfig,
    fit: &FitConfig,
) -> Result<AuditOutcome, AuditError> {
    let profile = compute_difficulty(ds);
    let calibration = fit_calibration(ds, &profile, fit)?;
    let bei = if level.includes_bei() {
        let residuals = compute_residuals(ds, &calibration, &profile)?;
        Some(bei_audit(ds, &residuals, &profile, cfg)?)
    } else {
        None
    };
    let cig = if level.includes_cig() {
        Some(cig_audit_with_events(ds, cfg)?)
    } else {
        None
    };
    Ok(AuditOutcome {
        profile,
        calibration,
        bei,
        cig,
    })
}
