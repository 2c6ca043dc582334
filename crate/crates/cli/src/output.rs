//! Rendering of bias and ensemble results.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use entangle_core::bias::BiasReport;
use entangle_core::ensemble::{Hyperparams, Metrics, StrategyComparison, WeightRow};

use crate::report::format_p;

/// Write to `path`, or to standard output when `None`.
pub fn emit(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

pub fn bias_markdown(report: &BiasReport) -> String {
    let mut out = String::from("# Judge bias\n\n## Precision gap\n\n| Judge | Model | ΔPrec | BEI | CIG | flag |\n|---|---|---|---|---|---|\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.judge,
            r.model,
            opt(r.delta_prec, 4),
            opt(r.bei, 4),
            opt(r.cig, 2),
            r.flag.as_deref().unwrap_or("")
        );
    }
    out.push_str("\n## Spearman correlation with ΔPrec\n\n| Judge | Metric | n | rho | p-value | p (greater) | |\n|---|---|---|---|---|---|---|\n");
    for c in &report.correlations {
        let (rho, p, pg) = match &c.association {
            Some(a) => (format!("{:.3}", a.rho), format_p(a.p_value), format_p(a.p_greater)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let note = match &c.flag {
            Some(f) => f.as_str(),
            None => c.stars.as_str(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            c.judge, c.metric, c.n, rho, p, pg, note
        );
    }
    out
}

fn blank(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `strategy,acc,f1,precision,delta_acc`, one row per strategy.
pub fn metrics_csv(cmp: &StrategyComparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "acc", "f1", "precision", "delta_acc"])?;
    for o in &cmp.outcomes {
        w.write_record([
            o.strategy.name().to_string(),
            o.metrics.accuracy.to_string(),
            blank(o.metrics.f1),
            blank(o.metrics.precision),
            blank(o.delta_accuracy),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn metrics_markdown(cmp: &StrategyComparison) -> String {
    let hp = &cmp.hyperparams;
    let mut out =
        String::from("| Verifier aggregation | Acc | F1 | Precision | ΔAcc |\n|---|---|---|---|---|\n");
    for o in &cmp.outcomes {
        let delta = match o.delta_accuracy {
            Some(d) if o.strategy.name() != "majority" => format!("{d:+.3}"),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "| {} | {:.3} | {} | {} | {} |",
            o.strategy.name(),
            o.metrics.accuracy,
            opt(o.metrics.f1, 3),
            opt(o.metrics.precision, 3),
            delta
        );
    }
    let _ = writeln!(
        out,
        "\nlambda1 = {}, kappa = {}, eta1 = {}, eta2 = {}",
        hp.lambda1, hp.kappa, hp.eta1, hp.eta2
    );
    out
}

#[derive(Debug, Serialize)]
pub struct StrategyMetrics<'a> {
    pub strategy: &'a str,
    #[serde(flatten)]
    pub metrics: &'a Metrics,
    pub delta_acc: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MetricsDocument<'a> {
    pub hyperparams: &'a Hyperparams,
    pub strategies: Vec<StrategyMetrics<'a>>,
    pub weights: Vec<(&'a str, &'a [WeightRow])>,
}

impl<'a> MetricsDocument<'a> {
    pub fn new(cmp: &'a StrategyComparison) -> Self {
        MetricsDocument {
            hyperparams: &cmp.hyperparams,
            strategies: cmp
                .outcomes
                .iter()
                .map(|o| StrategyMetrics {
                    strategy: o.strategy.name(),
                    metrics: &o.metrics,
                    delta_acc: o.delta_accuracy,
                })
                .collect(),
            weights: cmp
                .weights
                .iter()
                .map(|w| (w.strategy.name(), w.rows.as_slice()))
                .collect(),
        }
    }
}

/// `strategy,target,verifier,q,delta_in,delta_tar,weight`.
pub fn weights_csv(cmp: &StrategyComparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "target", "verifier", "q", "delta_in", "delta_tar", "weight"])?;
    for table in &cmp.weights {
        for r in &table.rows {
            w.write_record([
                table.strategy.name().to_string(),
                r.target.clone(),
                r.verifier.clone(),
                r.q.to_string(),
                r.delta_in.to_string(),
                r.delta_tar.to_string(),
                r.weight.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
