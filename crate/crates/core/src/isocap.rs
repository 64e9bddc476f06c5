//! Isocapacitary constants by exhaustive subset search, and Cheeger
//! constants for comparison.
//!
//! Capacity does not depend on the measure, so one table of pair
//! capacities over `Ω̄` serves every pair-type constant of a domain: the
//! Neumann and Steklov constants, their closure variants, and the closed
//! constants of the rescaled measures.

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::{capacity, capacity_to_boundary};
use crate::eigen::{p2_eigenfunction, Kind};
use crate::energy::Exponent;
use crate::error::{invalid, Error, Result};
use crate::graph::{truncated_domain, Domain, InfiniteFamily, VertexSubset, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IsocapOptions {
    /// Largest `|Ω|` for subset enumeration.
    pub dirichlet_cap: usize,
    /// Largest host set for pair enumeration.
    pub pair_cap: usize,
    pub heuristic: bool,
}

impl Default for IsocapOptions {
    fn default() -> Self {
        IsocapOptions { dirichlet_cap: 18, pair_cap: 12, heuristic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsocapResult {
    pub value: f64,
    pub witness_a: VertexSubset,
    pub witness_b: Option<VertexSubset>,
    pub capacity_at_witness: f64,
    pub pairs_examined: usize,
    pub exhaustive: bool,
}

const TIE_RTOL: f64 = 1e-12;

/// Pick the smallest ratio; among near-ties the lexicographically smallest witness.
fn reduce<'a>(candidates: impl Iterator<Item = (f64, f64, &'a VertexSubset, Option<&'a VertexSubset>)>) -> Option<(f64, f64, VertexSubset, Option<VertexSubset>, usize)> {
    let all: Vec<_> = candidates.collect();
    let examined = all.len();
    let best = all.iter().map(|c| c.0).filter(|r| r.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let cut = best + TIE_RTOL * best.abs();
    let (ratio, cap, a, b) = all
        .into_iter()
        .filter(|c| c.0 <= cut)
        .min_by(|x, y| x.2.cmp(y.2).then_with(|| x.3.cmp(&y.3)))
        .expect("nonempty");
    Some((ratio, cap, a.clone(), b.cloned(), examined))
}

/// Capacities of all unordered pairs of disjoint nonempty subsets of a host set.
#[derive(Debug, Clone)]
pub struct PairTable {
    host: VertexSubset,
    entries: Vec<PairEntry>,
    exhaustive: bool,
}

#[derive(Debug, Clone)]
struct PairEntry {
    a: VertexSubset,
    b: VertexSubset,
    cap: f64,
}

impl PairTable {
    /// Exhaustive table over `host` (indices into the domain). Each unordered
    /// pair appears once, with the smallest vertex of `A ∪ B` in `A`.
    pub fn exhaustive(d: &Domain, host: &VertexSubset, p: Exponent, opts: &IsocapOptions) -> Result<PairTable> {
        host.check_within(d.len())?;
        let h = host.len();
        if h > opts.pair_cap || h > 40 {
            return Err(Error::SizeLimit { size: h, cap: opts.pair_cap.min(40) });
        }
        let positions = host.members();
        let full: u64 = if h == 0 { 0 } else { (1u64 << h) - 1 };
        let mut pairs = Vec::new();
        let mut a = full;
        while a != 0 {
            let low = a & a.wrapping_neg();
            let allowed = full & !a & !((low << 1) - 1);
            let mut b = allowed;
            while b != 0 {
                pairs.push((a, b));
                b = (b - 1) & allowed;
            }
            a = (a - 1) & full;
        }
        pairs.sort_unstable();
        let pairs: Vec<(VertexSubset, VertexSubset)> = pairs
            .into_iter()
            .map(|(a, b)| (VertexSubset::from_bits(a, positions), VertexSubset::from_bits(b, positions)))
            .collect();
        Self::evaluate(d, host.clone(), pairs, p, true)
    }

    /// Pairs of sublevel and superlevel sets of the p = 2 eigenfunction of `kind`.
    pub fn heuristic(d: &Domain, host: &VertexSubset, kind: Kind, p: Exponent) -> Result<PairTable> {
        host.check_within(d.len())?;
        let (_, u) = p2_eigenfunction(d, kind)?;
        let mut order: Vec<usize> = host.members().to_vec();
        order.sort_by(|&x, &y| u[x].total_cmp(&u[y]).then(x.cmp(&y)));
        let mut pairs = Vec::new();
        for i in 1..order.len() {
            for j in i..order.len() {
                let low: VertexSubset = order[..i].iter().copied().collect();
                let high: VertexSubset = order[j..].iter().copied().collect();
                if low.members()[0] < high.members()[0] {
                    pairs.push((low, high));
                } else {
                    pairs.push((high, low));
                }
            }
        }
        Self::evaluate(d, host.clone(), pairs, p, false)
    }

    fn evaluate(d: &Domain, host: VertexSubset, pairs: Vec<(VertexSubset, VertexSubset)>, p: Exponent, exhaustive: bool) -> Result<PairTable> {
        let caps: Vec<f64> = pairs
            .par_iter()
            .map(|(a, b)| {
                let r = capacity(d, a, b, p)?;
                Ok(r.value.finite().unwrap_or(f64::INFINITY))
            })
            .collect::<Result<_>>()?;
        let entries = pairs.into_iter().zip(caps).map(|((a, b), cap)| PairEntry { a, b, cap }).collect();
        Ok(PairTable { host, entries, exhaustive })
    }

    pub fn host(&self) -> &VertexSubset {
        &self.host
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `inf Cap(A, B) / (ν(A) ∧ ν(B))` over pairs inside `within`, with the
    /// normalizer `ν` given per vertex. Pairs with `ν(A) ∧ ν(B) = 0` are skipped.
    pub fn minimize(&self, within: &VertexSubset, nu: &[f64]) -> Option<IsocapResult> {
        let vol = |s: &VertexSubset| s.iter().map(|x| nu[x]).sum::<f64>();
        let found = reduce(self.entries.iter().filter(|e| e.a.is_subset(within) && e.b.is_subset(within)).map(|e| {
            let den = vol(&e.a).min(vol(&e.b));
            let ratio = if den > 0.0 { e.cap / den } else { f64::INFINITY };
            (ratio, e.cap, &e.a, Some(&e.b))
        }))?;
        let (value, cap, a, b, examined) = found;
        Some(IsocapResult { value, witness_a: a, witness_b: b, capacity_at_witness: cap, pairs_examined: examined, exhaustive: self.exhaustive })
    }

    /// Capacity of a tabulated pair, in either order.
    pub fn lookup(&self, a: &VertexSubset, b: &VertexSubset) -> Option<f64> {
        self.entries.iter().find(|e| (&e.a == a && &e.b == b) || (&e.a == b && &e.b == a)).map(|e| e.cap)
    }
}

/// All pair-type constants of one domain from a single table over `Ω̄`.
#[derive(Debug, Clone)]
pub struct DomainConstants {
    table: PairTable,
}

impl DomainConstants {
    pub fn new(d: &Domain, p: Exponent, opts: &IsocapOptions) -> Result<DomainConstants> {
        let host = d.closure();
        let table = if opts.heuristic {
            let kind = if d.interior_count() >= 2 { Kind::Neumann } else { Kind::Steklov };
            PairTable::heuristic(d, &host, kind, p)?
        } else {
            PairTable::exhaustive(d, &host, p, opts)?
        };
        Ok(DomainConstants { table })
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    pub fn neumann(&self, d: &Domain) -> Result<IsocapResult> {
        need_interior(d)?;
        self.table.minimize(&d.interior(), d.graph().measures()).ok_or_else(no_pair)
    }

    pub fn neumann_bar(&self, d: &Domain) -> Result<IsocapResult> {
        need_interior(d)?;
        let nu = masked(d, true);
        self.table.minimize(&d.closure(), &nu).ok_or_else(no_pair)
    }

    pub fn steklov(&self, d: &Domain) -> Result<IsocapResult> {
        need_boundary(d)?;
        self.table.minimize(&d.boundary(), d.graph().measures()).ok_or_else(no_pair)
    }

    pub fn steklov_bar(&self, d: &Domain) -> Result<IsocapResult> {
        need_boundary(d)?;
        let nu = masked(d, false);
        self.table.minimize(&d.closure(), &nu).ok_or_else(no_pair)
    }

    /// Closed constant of `G_Ω` with measure `m/k` on `Ω` and `m` on `δΩ`.
    pub fn rescaled(&self, d: &Domain, k: u64) -> Result<IsocapResult> {
        if k < 1 {
            return Err(invalid("rescaling factor must be at least 1"));
        }
        let nu: Vec<f64> = (0..d.len())
            .map(|x| if d.is_interior(x) { d.measure(x) / k as f64 } else { d.measure(x) })
            .collect();
        self.table.minimize(&d.closure(), &nu).ok_or_else(no_pair)
    }

    /// The boundary singleton pair minimizing `Cap({x1},{x2}) / (m(x1) ∧ m(x2))`,
    /// an upper bound for every rescaled constant.
    pub fn rescaled_bound(&self, d: &Domain) -> Result<IsocapResult> {
        need_boundary(d)?;
        let singles = reduce(self.table.entries.iter().filter(|e| e.a.len() == 1 && e.b.len() == 1 && !d.is_interior(e.a.members()[0]) && !d.is_interior(e.b.members()[0])).map(|e| {
            let (x, y) = (e.a.members()[0], e.b.members()[0]);
            (e.cap / d.measure(x).min(d.measure(y)), e.cap, &e.a, Some(&e.b))
        }))
        .ok_or_else(no_pair)?;
        let (value, cap, a, b, examined) = singles;
        Ok(IsocapResult { value, witness_a: a, witness_b: b, capacity_at_witness: cap, pairs_examined: examined, exhaustive: self.table.exhaustive })
    }
}

fn masked(d: &Domain, interior: bool) -> Vec<f64> {
    (0..d.len()).map(|x| if d.is_interior(x) == interior { d.measure(x) } else { 0.0 }).collect()
}

fn need_interior(d: &Domain) -> Result<()> {
    if d.interior_count() < 2 {
        return Err(invalid("Neumann constants need at least two interior vertices"));
    }
    Ok(())
}

fn need_boundary(d: &Domain) -> Result<()> {
    if d.boundary_count() < 2 {
        return Err(invalid("Steklov constants need at least two boundary vertices"));
    }
    Ok(())
}

fn no_pair() -> Error {
    Error::Validation("no admissible pair".into())
}

/// `α_p^D(Ω) = inf_{A⊆Ω} Cap_p(A, δΩ) / m(A)`.
pub fn alpha_dirichlet(d: &Domain, p: Exponent) -> Result<IsocapResult> {
    alpha_dirichlet_with(d, p, &IsocapOptions::default())
}

pub fn alpha_dirichlet_with(d: &Domain, p: Exponent, opts: &IsocapOptions) -> Result<IsocapResult> {
    if d.boundary_count() == 0 {
        return Err(invalid("Dirichlet constant needs a nonempty boundary"));
    }
    let interior = d.interior();
    let sets: Vec<VertexSubset> = if opts.heuristic {
        let (_, u) = p2_eigenfunction(d, Kind::Dirichlet)?;
        let mut order = interior.members().to_vec();
        order.sort_by(|&x, &y| u[y].total_cmp(&u[x]).then(x.cmp(&y)));
        (1..=order.len()).map(|i| order[..i].iter().copied().collect()).collect()
    } else {
        let n = interior.len();
        if n > opts.dirichlet_cap || n > 40 {
            return Err(Error::SizeLimit { size: n, cap: opts.dirichlet_cap.min(40) });
        }
        (1u64..(1u64 << n)).map(|bits| VertexSubset::from_bits(bits, interior.members())).collect()
    };
    let caps: Vec<f64> = sets
        .par_iter()
        .map(|a| Ok(capacity_to_boundary(d, a, p)?.value.finite().unwrap_or(f64::INFINITY)))
        .collect::<Result<_>>()?;
    let (value, cap, a, _, examined) = reduce(sets.iter().zip(&caps).map(|(a, &c)| (c / d.volume(a), c, a, None))).ok_or_else(no_pair)?;
    Ok(IsocapResult { value, witness_a: a, witness_b: None, capacity_at_witness: cap, pairs_examined: examined, exhaustive: !opts.heuristic })
}

pub fn alpha_neumann(d: &Domain, p: Exponent) -> Result<IsocapResult> {
    need_interior(d)?;
    let opts = IsocapOptions::default();
    let table = PairTable::exhaustive(d, &d.interior(), p, &opts)?;
    table.minimize(&d.interior(), d.graph().measures()).ok_or_else(no_pair)
}

pub fn alpha_neumann_bar(d: &Domain, p: Exponent) -> Result<IsocapResult> {
    need_interior(d)?;
    DomainConstants::new(d, p, &IsocapOptions::default())?.neumann_bar(d)
}

pub fn alpha_steklov(d: &Domain, p: Exponent) -> Result<IsocapResult> {
    need_boundary(d)?;
    let table = PairTable::exhaustive(d, &d.boundary(), p, &IsocapOptions::default())?;
    table.minimize(&d.boundary(), d.graph().measures()).ok_or_else(no_pair)
}

pub fn alpha_steklov_bar(d: &Domain, p: Exponent) -> Result<IsocapResult> {
    need_boundary(d)?;
    DomainConstants::new(d, p, &IsocapOptions::default())?.steklov_bar(d)
}

/// `α_p(G) = inf Cap_p(A, B) / (m(A) ∧ m(B))` over pairs of vertex sets of a closed graph.
pub fn alpha_closed(g: &WeightedGraph, p: Exponent) -> Result<IsocapResult> {
    alpha_closed_with(g, p, &IsocapOptions::default())
}

pub fn alpha_closed_with(g: &WeightedGraph, p: Exponent, opts: &IsocapOptions) -> Result<IsocapResult> {
    if g.len() < 2 {
        return Err(invalid("closed constant needs at least two vertices"));
    }
    if !g.is_connected() {
        return Err(Error::DomainDisconnected);
    }
    let d = Domain::closed(g)?;
    let table = if opts.heuristic {
        PairTable::heuristic(&d, &d.closure(), Kind::Neumann, p)?
    } else {
        PairTable::exhaustive(&d, &d.closure(), p, opts)?
    };
    table.minimize(&d.closure(), g.measures()).ok_or_else(no_pair)
}

/// `α_p^D` on growing balls of an infinite graph. The sequence is reported
/// as computed; no monotonicity is implied.
pub fn alpha_dirichlet_infinite(family: InfiniteFamily, p: Exponent, radii: &[usize]) -> Result<Vec<(usize, IsocapResult)>> {
    radii
        .iter()
        .map(|&r| {
            let (_, d) = truncated_domain(family, r)?;
            Ok((r, alpha_dirichlet(&d, p)?))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RescaledIsocap {
    pub points: Vec<(u64, f64)>,
    /// Boundary singleton pair bounding every term.
    pub bound: IsocapResult,
    pub steklov_bar: f64,
}

impl RescaledIsocap {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1 - slack)
    }

    pub fn is_bounded(&self, slack: f64) -> bool {
        self.points.iter().all(|&(_, v)| v <= self.bound.value + slack)
    }
}

pub fn alpha_rescaled_sequence(d: &Domain, p: Exponent, ks: &[u64]) -> Result<RescaledIsocap> {
    need_boundary(d)?;
    let c = DomainConstants::new(d, p, &IsocapOptions::default())?;
    rescaled_from(&c, d, ks)
}

pub fn rescaled_from(c: &DomainConstants, d: &Domain, ks: &[u64]) -> Result<RescaledIsocap> {
    let points = ks.iter().map(|&k| Ok((k, c.rescaled(d, k)?.value))).collect::<Result<_>>()?;
    Ok(RescaledIsocap { points, bound: c.rescaled_bound(d)?, steklov_bar: c.steklov_bar(d)?.value })
}

/// `h^D(Ω) = inf_{W⊆Ω} |∂W|_w / m(W)` with `∂W` the edges of `G_Ω` leaving `W`.
pub fn cheeger_dirichlet(d: &Domain) -> Result<f64> {
    let interior = d.interior();
    let n = interior.len();
    if n > 24 {
        return Err(Error::SizeLimit { size: n, cap: 24 });
    }
    let g = d.graph();
    let best = (1u64..(1u64 << n))
        .map(|bits| {
            let w = VertexSubset::from_bits(bits, interior.members());
            let mask = w.mask(d.len());
            cut(g, &mask) / d.volume(&w)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

/// `h(G) = inf |∂W|_w / (m(W) ∧ m(W^c))` over nonempty proper `W ⊂ V`.
pub fn cheeger_closed(g: &WeightedGraph) -> Result<f64> {
    let n = g.len();
    if n < 2 {
        return Err(invalid("closed Cheeger constant needs at least two vertices"));
    }
    if n > 24 {
        return Err(Error::SizeLimit { size: n, cap: 24 });
    }
    let total: f64 = g.measures().iter().sum();
    // Vertex 0 on the W side covers each complementary pair once.
    let best = (1u64..(1u64 << (n - 1)))
        .map(|bits| (bits << 1) | 1)
        .chain(std::iter::once(1u64))
        .filter(|&bits| bits != (1u64 << n) - 1)
        .map(|bits| {
            let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let vol: f64 = (0..n).filter(|&i| mask[i]).map(|i| g.measure(i)).sum();
            cut(g, &mask) / vol.min(total - vol)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best)
}

fn cut(g: &WeightedGraph, mask: &[bool]) -> f64 {
    g.edges().iter().filter(|e| mask[e.u] != mask[e.v]).map(|e| e.weight).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, Family};

    fn p(x: f64) -> Exponent {
        Exponent::new(x).unwrap()
    }

    fn path_domain(n: usize) -> Domain {
        let g = generate(&Family::Path(n)).unwrap();
        let omega: Vec<String> = (1..n).map(|i| i.to_string()).collect();
        Domain::from_ids(&g, &omega).unwrap()
    }

    #[test]
    fn dirichlet_examples() {
        let r = alpha_dirichlet(&path_domain(2), p(2.0)).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.witness_b.is_none());
        let d = path_domain(4);
        let r = alpha_dirichlet(&d, p(2.0)).unwrap();
        assert_eq!(r.pairs_examined, 7);
        let whole = capacity_to_boundary(&d, &d.interior(), p(2.0)).unwrap().value.finite().unwrap();
        assert!(r.value <= whole / 3.0 + 1e-12);
        assert!((r.value - r.capacity_at_witness / d.volume(&r.witness_a)).abs() < 1e-12);
    }

    #[test]
    fn pair_enumeration_counts() {
        let g = generate(&Family::Complete(4)).unwrap();
        let d = Domain::closed(&g).unwrap();
        let t = PairTable::exhaustive(&d, &d.closure(), p(2.0), &IsocapOptions::default()).unwrap();
        // (3^4 - 2·2^4 + 1) / 2 unordered disjoint nonempty pairs.
        assert_eq!(t.len(), 25);
        for e in &t.entries {
            assert!(e.a.is_disjoint(&e.b));
            assert!(e.a.members()[0] < e.b.members()[0]);
        }
    }

    #[test]
    fn k2_and_scaling() {
        let g = generate(&Family::Complete(2)).unwrap();
        let r = alpha_closed(&g, p(2.0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let r3 = alpha_closed(&g.scale_weights(3.0).unwrap(), p(2.5)).unwrap();
        let r1 = alpha_closed(&g, p(2.5)).unwrap();
        assert!((r3.value - 3.0 * r1.value).abs() < 1e-12);
        assert!((cheeger_closed(&g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn steklov_path() {
        for n in [2usize, 4, 6] {
            for q in [1.5, 2.0, 3.0] {
                let d = path_domain(n);
                let r = alpha_steklov(&d, p(q)).unwrap();
                assert!((r.value - (n as f64).powf(1.0 - q)).abs() < 1e-9 * r.value, "n={n} p={q}");
                assert_eq!(r.witness_a.ids(d.graph()), vec!["0"]);
                let bar = alpha_steklov_bar(&d, p(q)).unwrap();
                assert!((bar.value - r.value).abs() <= 1e-9 * r.value);
            }
        }
    }

    #[test]
    fn neumann_equality_and_rescaling() {
        let g = generate(&Family::Grid(2, 3)).unwrap();
        let d = Domain::from_ids(&g, &["0,0", "0,1", "1,1"]).unwrap();
        for q in [1.5, 3.0] {
            let a = alpha_neumann(&d, p(q)).unwrap();
            let bar = alpha_neumann_bar(&d, p(q)).unwrap();
            assert!((a.value - bar.value).abs() <= 1e-9 * a.value);
            let seq = alpha_rescaled_sequence(&d, p(q), &[1, 2, 4, 8, 16]).unwrap();
            assert!(seq.is_monotone(1e-12));
            assert!(seq.is_bounded(1e-12));
            let closed = alpha_closed(d.graph(), p(q)).unwrap();
            assert!((seq.points[0].1 - closed.value).abs() <= 1e-12 * closed.value);
        }
    }

    #[test]
    fn cheeger_path() {
        let d = path_domain(4);
        let h = cheeger_dirichlet(&d).unwrap();
        assert!((h - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn caps_and_preconditions() {
        let g = generate(&Family::Path(14)).unwrap();
        let d = Domain::closed(&g).unwrap();
        assert!(matches!(
            PairTable::exhaustive(&d, &d.closure(), p(2.0), &IsocapOptions::default()),
            Err(Error::SizeLimit { .. })
        ));
        let single = Domain::from_ids(&generate(&Family::Star(3)).unwrap(), &["1"]).unwrap();
        assert!(alpha_steklov(&single, p(2.0)).is_err());
        assert!(alpha_dirichlet(&d, p(2.0)).is_err());
    }

    #[test]
    fn heuristic_is_an_upper_bound() {
        let g = generate(&Family::Grid(3, 3)).unwrap();
        let exact = alpha_closed(&g, p(2.0)).unwrap();
        let h = alpha_closed_with(&g, p(2.0), &IsocapOptions { heuristic: true, ..Default::default() }).unwrap();
        assert!(!h.exhaustive);
        assert!(h.value >= exact.value - 1e-12);
    }
}
