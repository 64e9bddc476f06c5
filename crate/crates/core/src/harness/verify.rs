//! Two-sided eigenvalue brackets from isocapacitary constants.

use serde::Serialize;

use crate::capacity::{capacity, capacity_to_boundary};
use crate::eigen::{dirichlet_eigenvalue_with, neumann_eigenvalue_with, steklov_eigenvalue_with, EigenOptions, EigenResult};
use crate::energy::Exponent;
use crate::error::Result;
use crate::graph::{truncated_domain, Domain, InfiniteFamily};
use crate::harness::report::{tolerance, BoundsReport, Theorem};
use crate::isocap::{alpha_dirichlet_with, cheeger_closed, cheeger_dirichlet, DomainConstants, IsocapOptions, IsocapResult};

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub eigen: EigenOptions,
    pub isocap: IsocapOptions,
}

/// Which brackets to produce for a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suites {
    pub dirichlet: bool,
    pub neumann: bool,
    pub steklov: bool,
}

impl Suites {
    pub const ALL: Suites = Suites { dirichlet: true, neumann: true, steklov: true };
}

/// `(2^{p-1} / p^p) h^p`, the lower Cheeger-type bound.
fn cheeger_lower(h: f64, p: f64) -> f64 {
    2f64.powf(p - 1.0) / p.powf(p) * h.powf(p)
}

fn warm_start(d: &Domain, w: &IsocapResult, p: Exponent) -> Option<Vec<f64>> {
    let r = match &w.witness_b {
        Some(b) => capacity(d, &w.witness_a, b, p).ok()?,
        None => capacity_to_boundary(d, &w.witness_a, p).ok()?,
    };
    r.potential.map(|f| f.into_values())
}

fn with_warm_starts(d: &Domain, opts: &EigenOptions, witnesses: &[&IsocapResult], p: Exponent) -> EigenOptions {
    let mut o = opts.clone();
    o.warm_starts.extend(witnesses.iter().filter_map(|w| warm_start(d, w, p)));
    o
}

fn report(theorem: Theorem, id: &str, p: Exponent, alpha: f64, upper_factor: f64, eig: &EigenResult) -> BoundsReport {
    BoundsReport::new(theorem, id, p.get(), alpha, alpha / p.lower_constant(), eig.value, upper_factor * alpha, eig.method, eig.residual)
}

/// `α^D / (2^p C_p) ≤ λ ≤ α^D`.
pub fn verify_dirichlet(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions) -> Result<BoundsReport> {
    dirichlet_report(d, p, graph_id, opts, Theorem::Dirichlet)
}

fn dirichlet_report(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions, theorem: Theorem) -> Result<BoundsReport> {
    let alpha = alpha_dirichlet_with(d, p, &opts.isocap)?;
    let eig = dirichlet_eigenvalue_with(d, p, &with_warm_starts(d, &opts.eigen, &[&alpha], p))?;
    let h = cheeger_dirichlet(d)?;
    Ok(report(theorem, graph_id, p, alpha.value, 1.0, &eig).with_cheeger(cheeger_lower(h, p.get()), h))
}

/// `α / (2^p C_p) ≤ μ ≤ 2^{p-1} α` for both the interior constant and its
/// closure variant, or for the closed constant when `δΩ` is empty.
pub fn verify_neumann(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions) -> Result<Vec<BoundsReport>> {
    let c = DomainConstants::new(d, p, &opts.isocap)?;
    neumann_reports(d, p, graph_id, opts, &c)
}

fn neumann_reports(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions, c: &DomainConstants) -> Result<Vec<BoundsReport>> {
    let up = 2f64.powf(p.get() - 1.0);
    let alpha = c.neumann(d)?;
    if d.is_closed() {
        let eig = neumann_eigenvalue_with(d, p, &with_warm_starts(d, &opts.eigen, &[&alpha], p))?;
        let h = cheeger_closed(d.graph())?;
        let r = report(Theorem::ClosedGraph, graph_id, p, alpha.value, up, &eig).with_cheeger(cheeger_lower(h, p.get()), up * h);
        return Ok(vec![r]);
    }
    let bar = c.neumann_bar(d)?;
    let eig = neumann_eigenvalue_with(d, p, &with_warm_starts(d, &opts.eigen, &[&alpha, &bar], p))?;
    let gap = (alpha.value - bar.value).abs() / alpha.value;
    let mut a = report(Theorem::Neumann, graph_id, p, alpha.value, up, &eig);
    let mut b = report(Theorem::NeumannBar, graph_id, p, bar.value, up, &eig);
    a.constant_gap = Some(gap);
    b.constant_gap = Some(gap);
    Ok(vec![a, b])
}

/// `α / (2^p C_p) ≤ σ ≤ 2^{p-1} α` for the boundary constant and its closure
/// variant. The stronger upper bound `σ ≤ 2 α` is recorded, not enforced.
pub fn verify_steklov(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions) -> Result<Vec<BoundsReport>> {
    let c = DomainConstants::new(d, p, &opts.isocap)?;
    steklov_reports(d, p, graph_id, opts, &c)
}

fn steklov_reports(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions, c: &DomainConstants) -> Result<Vec<BoundsReport>> {
    let up = 2f64.powf(p.get() - 1.0);
    let alpha = c.steklov(d)?;
    let bar = c.steklov_bar(d)?;
    let eig = steklov_eigenvalue_with(d, p, &with_warm_starts(d, &opts.eigen, &[&alpha, &bar], p))?;
    let gap = (alpha.value - bar.value).abs() / alpha.value;
    let two = eig.value <= 2.0 * alpha.value + tolerance(eig.value);
    let mut a = report(Theorem::Steklov, graph_id, p, alpha.value, up, &eig);
    let mut b = report(Theorem::SteklovBar, graph_id, p, bar.value, up, &eig);
    a.constant_gap = Some(gap);
    b.constant_gap = Some(gap);
    a.factor_two_upper = Some(two);
    Ok(vec![a, b])
}

/// Every applicable bracket of a domain, sharing one pair table.
pub fn verify_domain(d: &Domain, p: Exponent, graph_id: &str, opts: &VerifyOptions, suites: Suites) -> Result<Vec<BoundsReport>> {
    let mut out = Vec::new();
    let closed = d.is_closed();
    let wants_neumann = suites.neumann && d.interior_count() >= 2;
    let wants_steklov = suites.steklov && d.boundary_count() >= 2;
    if suites.dirichlet && !closed {
        out.push(verify_dirichlet(d, p, graph_id, opts)?);
    }
    if wants_neumann || wants_steklov {
        let c = DomainConstants::new(d, p, &opts.isocap)?;
        if wants_neumann {
            out.extend(neumann_reports(d, p, graph_id, opts, &c)?);
        }
        if wants_steklov {
            out.extend(steklov_reports(d, p, graph_id, opts, &c)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct InfiniteReport {
    pub reports: Vec<BoundsReport>,
    /// `λ(W_i)` non-increasing in the radius, slack 1e-8.
    pub monotone: bool,
}

/// Dirichlet brackets on each truncation `W_i` of an infinite graph.
pub fn verify_infinite(family: InfiniteFamily, p: Exponent, radii: &[usize], opts: &VerifyOptions) -> Result<InfiniteReport> {
    let mut reports = Vec::with_capacity(radii.len());
    for &r in radii {
        let (_, d) = truncated_domain(family, r)?;
        reports.push(dirichlet_report(&d, p, &format!("{family}/r={r:02}"), opts, Theorem::DirichletInfinite)?);
    }
    let monotone = reports.windows(2).all(|w| w[1].eigenvalue <= w[0].eigenvalue + 1e-8);
    Ok(InfiniteReport { reports, monotone })
}
