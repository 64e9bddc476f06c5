//! Bound reports and the line-oriented report file.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::eigen::Method;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Theorem {
    #[serde(rename = "dirichlet-1.2")]
    Dirichlet,
    #[serde(rename = "dirichlet-infinite-1.3")]
    DirichletInfinite,
    #[serde(rename = "neumann-1.5")]
    Neumann,
    #[serde(rename = "neumann-bar-5.1")]
    NeumannBar,
    #[serde(rename = "steklov-1.7")]
    Steklov,
    #[serde(rename = "steklov-bar-6.1")]
    SteklovBar,
    #[serde(rename = "closed-graph-remark")]
    ClosedGraph,
}

impl Theorem {
    pub fn tag(self) -> &'static str {
        match self {
            Theorem::Dirichlet => "dirichlet-1.2",
            Theorem::DirichletInfinite => "dirichlet-infinite-1.3",
            Theorem::Neumann => "neumann-1.5",
            Theorem::NeumannBar => "neumann-bar-5.1",
            Theorem::Steklov => "steklov-1.7",
            Theorem::SteklovBar => "steklov-bar-6.1",
            Theorem::ClosedGraph => "closed-graph-remark",
        }
    }
}

/// One two-sided eigenvalue bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub theorem: Theorem,
    pub graph_id: String,
    pub p: f64,
    pub lower: f64,
    pub eigenvalue: f64,
    pub upper: f64,
    pub cheeger_lower: Option<f64>,
    pub cheeger_upper: Option<f64>,
    pub pass: bool,
    /// `min(eigenvalue - lower, upper - eigenvalue)`, relative to the eigenvalue.
    pub margin: f64,
    /// The isocapacitary constant the bracket is built from.
    pub isocapacity: f64,
    /// `upper / lower`.
    pub bracket_ratio: f64,
    pub cheeger_ratio: Option<f64>,
    /// `|α - ᾱ| / α` where both variants exist.
    pub constant_gap: Option<f64>,
    /// Whether `eigenvalue ≤ 2 α` also holds (Steklov only).
    pub factor_two_upper: Option<bool>,
    pub method: Method,
    pub residual: f64,
}

pub fn tolerance(eigenvalue: f64) -> f64 {
    1e-7 * (1.0 + eigenvalue.abs())
}

impl BoundsReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(theorem: Theorem, graph_id: impl Into<String>, p: f64, isocapacity: f64, lower: f64, eigenvalue: f64, upper: f64, method: Method, residual: f64) -> Self {
        let tol = tolerance(eigenvalue);
        let pass = lower - tol <= eigenvalue && eigenvalue <= upper + tol;
        let scale = if eigenvalue.abs() > 0.0 { eigenvalue.abs() } else { 1.0 };
        let margin = (eigenvalue - lower).min(upper - eigenvalue) / scale;
        BoundsReport {
            theorem,
            graph_id: graph_id.into(),
            p,
            lower,
            eigenvalue,
            upper,
            cheeger_lower: None,
            cheeger_upper: None,
            pass,
            margin,
            isocapacity,
            bracket_ratio: upper / lower,
            cheeger_ratio: None,
            constant_gap: None,
            factor_two_upper: None,
            method,
            residual,
        }
    }

    pub fn with_cheeger(mut self, lower: f64, upper: f64) -> Self {
        self.cheeger_lower = Some(lower);
        self.cheeger_upper = Some(upper);
        self.cheeger_ratio = Some(upper / lower);
        self
    }

    fn key(&self) -> (&str, Theorem, f64) {
        (&self.graph_id, self.theorem, self.p)
    }
}

/// Order records by graph id, theorem and exponent.
pub fn sort_reports(reports: &mut [BoundsReport]) {
    reports.sort_by(|a, b| {
        let (ga, ta, pa) = a.key();
        let (gb, tb, pb) = b.key();
        ga.cmp(gb).then(ta.tag().cmp(tb.tag())).then(pa.total_cmp(&pb))
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ReportHeader {
    pub fn new(seed: u64, canonical_config: &str) -> Self {
        let digest = Sha256::digest(canonical_config.as_bytes());
        ReportHeader {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

/// Header line followed by one JSON object per report.
pub fn write_reports<W: Write>(mut out: W, header: &ReportHeader, reports: &[BoundsReport]) -> Result<()> {
    writeln!(out, "{}", to_line(header))?;
    for r in reports {
        writeln!(out, "{}", to_line(r))?;
    }
    Ok(())
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report values serialize")
}
