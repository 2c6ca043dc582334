//! Audit report: JSON contract, Markdown tables and CSV rows.

use std::fmt::Write as _;
use std::io::Write;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use entangle_core::audit::{AuditOutcome, Level};
use entangle_core::bei::AuditConfig;
use entangle_core::bias::PairScores;
use entangle_core::cig::LOG_BASE;
use entangle_core::ingest::ResponseDataset;
use entangle_core::pairs::{Alternative, PairStatistic};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of raw input bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub dataset_hash: String,
    pub n_models: usize,
    pub n_tasks: usize,
    pub seed: u64,
    pub replicates: u64,
    pub alpha: f64,
    pub bh: bool,
    pub alternative: Alternative,
    pub level: Level,
    pub log_base: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub model: String,
    pub alpha: f64,
    pub beta: f64,
    pub auc: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: Metadata,
    pub calibration: Vec<CalibrationRow>,
    #[serde(default)]
    pub bei: Option<Vec<PairStatistic>>,
    #[serde(default)]
    pub cig: Option<Vec<PairStatistic>>,
}

impl AuditReport {
    pub fn new(
        ds: &ResponseDataset,
        dataset_hash: String,
        outcome: &AuditOutcome,
        cfg: &AuditConfig,
        alpha: f64,
        level: Level,
    ) -> Self {
        let calibration = ds
            .models()
            .iter()
            .zip(&outcome.calibration.fits)
            .map(|(model, fit)| CalibrationRow {
                model: model.clone(),
                alpha: fit.alpha,
                beta: fit.beta,
                auc: fit.auc,
                iterations: fit.iterations,
                converged: fit.converged,
                degenerate: fit.degenerate,
            })
            .collect();
        AuditReport {
            metadata: Metadata {
                version: VERSION.into(),
                dataset_hash,
                n_models: ds.n_models(),
                n_tasks: ds.n_tasks(),
                seed: cfg.seed,
                replicates: cfg.replicates,
                alpha,
                bh: cfg.bh,
                alternative: cfg.alternative,
                level,
                log_base: LOG_BASE.into(),
            },
            calibration,
            bei: outcome.bei.clone(),
            cig: outcome.cig_stats(),
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
    }

    pub fn bei_scores(&self) -> Result<PairScores> {
        match &self.bei {
            Some(rows) => Ok(scores(rows)),
            None => bail!("report has no BEI table; rerun the audit with --level bei or both"),
        }
    }

    pub fn cig_scores(&self) -> Result<PairScores> {
        match &self.cig {
            Some(rows) => Ok(scores(rows)),
            None => bail!("report has no CIG table; rerun the audit with --level cig or both"),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_markdown(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "# Entanglement audit\n");
        let _ = writeln!(
            out,
            "- dataset: `{}` ({} models, {} tasks)\n- seed: {}, replicates: {}, alpha: {}, BH: {}, alternative: {}\n",
            m.dataset_hash,
            m.n_models,
            m.n_tasks,
            m.seed,
            m.replicates,
            m.alpha,
            if m.bh { "on" } else { "off" },
            match m.alternative {
                Alternative::Greater => "greater",
                Alternative::TwoSided => "two-sided",
            }
        );
        if let Some(rows) = &self.bei {
            out.push_str("## BEI\n\n");
            out.push_str(&pair_table("BEI", rows, 4));
            out.push('\n');
        }
        if let Some(rows) = &self.cig {
            out.push_str("## CIG\n\n");
            out.push_str(&pair_table("CIG", rows, 2));
            out.push('\n');
        }
        out.push_str("## Calibration\n\n| Model | alpha | beta | AUC | converged |\n|---|---|---|---|---|\n");
        for r in &self.calibration {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {:.4} | {} | {} |",
                r.model,
                r.alpha,
                r.beta,
                r.auc.map_or("-".to_string(), |a| format!("{a:.4}")),
                r.converged
            );
        }
        out
    }

    /// One row per (metric, pair).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "metric", "model_1", "model_2", "score", "p_raw", "p_adjusted", "significant", "events",
        ])?;
        for (metric, rows) in [("bei", &self.bei), ("cig", &self.cig)] {
            for s in rows.iter().flatten() {
                w.write_record([
                    metric.to_string(),
                    s.model_1.clone(),
                    s.model_2.clone(),
                    s.score.to_string(),
                    s.p_raw.to_string(),
                    s.p_adjusted.to_string(),
                    s.significant(self.metadata.alpha).to_string(),
                    s.events.map_or(String::new(), |e| e.to_string()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn scores(rows: &[PairStatistic]) -> PairScores {
    rows.iter()
        .map(|s| (s.model_1.as_str(), s.model_2.as_str(), s.score))
        .collect()
}

/// Scientific notation with two decimals and a two-digit exponent, e.g. `1.00E-04`.
pub fn format_p(p: f64) -> String {
    let s = format!("{p:.2E}");
    match s.split_once('E') {
        Some((mantissa, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ("-", d),
                None => ("+", exp),
            };
            format!("{mantissa}E{sign}{digits:0>2}")
        }
        None => s,
    }
}

fn pair_table(metric: &str, rows: &[PairStatistic], decimals: usize) -> String {
    let mut out = format!("| Model 1 | Model 2 | {metric} | p-value | p (BH) |\n|---|---|---|---|---|\n");
    for s in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.*} | {} | {} |",
            s.model_1,
            s.model_2,
            decimals,
            s.score,
            format_p(s.p_raw),
            format_p(s.p_adjusted)
        );
    }
    out
}

/// A row read back from a Markdown pair table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub model_1: String,
    pub model_2: String,
    pub score: f64,
    pub p_value: f64,
}

/// Parse `| Model 1 | Model 2 | score | p-value | ... |` rows, skipping header and rule lines.
pub fn parse_pair_table(text: &str) -> Result<Vec<PairRow>> {
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| l.starts_with('|')) {
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        if cells.len() < 4 || cells[0].starts_with("---") || cells[0] == "Model 1" {
            continue;
        }
        let number = |c: &str| {
            c.parse::<f64>()
                .with_context(|| format!("`{c}` is not a number in row `{line}`"))
        };
        rows.push(PairRow {
            model_1: cells[0].to_string(),
            model_2: cells[1].to_string(),
            score: number(cells[2])?,
            p_value: number(cells[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_formatting() {
        assert_eq!(format_p(1.0 / 10_001.0), "1.00E-04");
        assert_eq!(format_p(0.0024), "2.40E-03");
        assert_eq!(format_p(1.0), "1.00E+00");
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
