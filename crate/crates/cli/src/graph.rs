//! Dependency graph of significantly entangled model pairs.
//!
//! DOT output for a single BEI edge:
//!
//! ```text
//! graph entanglement {
//!   "m00";
//!   "m01";
//!   "m02";
//!   "m00" -- "m01" [metric="bei", weight=0.0446, p_adjusted=1.00E-04];
//! }
//! ```
//!
//! The JSON form of the same graph:
//!
//! ```text
//! {"nodes":["m00","m01","m02"],
//!  "edges":[{"source":"m00","target":"m01","metric":"bei","weight":0.0446,"p_adjusted":0.0001}]}
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::report::{format_p, AuditReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub metric: String,
    pub weight: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

impl DependencyGraph {
    /// Every model is a node; an edge is a pair whose adjusted p-value is below the report's alpha.
    pub fn from_report(report: &AuditReport) -> Self {
        let alpha = report.metadata.alpha;
        let nodes = report.calibration.iter().map(|c| c.model.clone()).collect();
        let mut edges = Vec::new();
        for (metric, rows) in [("bei", &report.bei), ("cig", &report.cig)] {
            for s in rows.iter().flatten().filter(|s| s.significant(alpha)) {
                edges.push(Edge {
                    source: s.model_1.clone(),
                    target: s.model_2.clone(),
                    metric: metric.into(),
                    weight: s.score,
                    p_adjusted: s.p_adjusted,
                });
            }
        }
        DependencyGraph { nodes, edges }
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph entanglement {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  {};", quote(n));
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  {} -- {} [metric=\"{}\", weight={}, p_adjusted={}];",
                quote(&e.source),
                quote(&e.target),
                e.metric,
                e.weight,
                format_p(e.p_adjusted)
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_escapes() {
        assert_eq!(quote("a\"b"), "\"a\\\"b\"");
    }
}
