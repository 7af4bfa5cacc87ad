//! Result documents: a JSON envelope with toolkit name, version and seed, plus
//! a text table renderer for cross-validation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::ensemble::Prop2Report;
use crate::error::Result;
use crate::harness::{CVResult, Method};
use crate::rademacher::{BoundReport, MomentCheck, RademacherEstimate};

pub const TOOLKIT: &str = "ekp";

/// An estimate with every bound that applies to its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub estimate: RademacherEstimate,
    pub exact: Option<RademacherEstimate>,
    pub bounds: Vec<BoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub prop2: Vec<Prop2Report>,
    pub moments: Vec<MomentCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ResultDoc {
    Cv(CVResult),
    Rademacher(ComplexityReport),
    Bound(BoundReport),
    Prop2(Prop2Report),
    Verify(VerifyReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub toolkit: String,
    pub version: String,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub doc: ResultDoc,
}

impl Envelope {
    pub fn new(doc: ResultDoc, seed: Option<u64>) -> Self {
        Envelope {
            toolkit: TOOLKIT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            doc,
        }
    }
}

/// Serialized form: pretty JSON, fields in declaration order, floats in
/// shortest round-trip notation.
pub fn to_text(envelope: &Envelope) -> Result<String> {
    let mut s = serde_json::to_string_pretty(envelope)?;
    s.push('\n');
    Ok(s)
}

pub fn write_result(envelope: &Envelope, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(envelope)?)?;
    Ok(())
}

pub fn read_result(path: impl AsRef<Path>) -> Result<Envelope> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cell(task: Task, mean: f64, std: f64) -> String {
    match task {
        Task::Classification => format!("{:.1}±{:.1}", 100.0 * mean, 100.0 * std),
        Task::Regression => format!("{mean:.3}±{std:.3}"),
    }
}

/// One row per method, one column per result. Classification cells are
/// percentages.
pub fn render_table(results: &[(String, CVResult)]) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for (_, r) in results {
        for m in &r.methods {
            if !methods.contains(&m.method) {
                methods.push(m.method);
            }
        }
    }
    let mut header = vec!["method".to_string()];
    header.extend(results.iter().map(|(label, r)| format!("{label} (N={}, {})", r.n, r.metric)));
    let mut rows = vec![header];
    for m in methods {
        let mut row = vec![m.to_string()];
        for (_, r) in results {
            row.push(r.get(m).map_or("-".into(), |x| cell(r.config.task, x.mean, x.std)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Estimate and bounds as aligned `name  value` lines.
pub fn render_complexity(report: &ComplexityReport) -> String {
    let e = &report.estimate;
    let mut out = String::new();
    let _ = writeln!(out, "m = {}, p = {}, q = {}, r = {}", e.m, e.lambdas.len(), e.q, e.r);
    let _ = writeln!(out, "{:<18}{:.6} ± {:.6} ({} sign vectors)", "estimate", e.value, e.stderr, e.n_sigma);
    if let Some(x) = &report.exact {
        let _ = writeln!(out, "{:<18}{:.6}", "exact", x.value);
    }
    for b in &report.bounds {
        let label = match b.inputs.r {
            Some(r) => format!("{} r={r}", b.theorem.name()),
            None => b.theorem.name().to_string(),
        };
        let flag = if b.vacuous { "  (vacuous)" } else { "" };
        let _ = writeln!(out, "{label:<18}{:.6}{flag}", b.value);
    }
    out
}
