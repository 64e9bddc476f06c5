//! First Dirichlet, first nonzero Neumann and first nonzero Steklov
//! eigenvalues of the p-Laplacian.
//!
//! All three are minima of a Rayleigh quotient
//! `R(f) = E_p(f, f) / D(f)` over functions on `Ω̄`, where the denominator is
//! `Σ mass |f|^p` (Dirichlet, `f = 0` on `δΩ`) or
//! `min_c Σ mass |f - c|^p` (Neumann, Steklov). The problems differ only in
//! where the mass sits:
//!
//! - Dirichlet: `m` on `Ω`, boundary pinned to 0.
//! - Neumann: `m` on `Ω`, boundary massless, so optimal boundary values have
//!   zero normal derivative.
//! - Steklov: `m` on `δΩ`, interior massless, so optimal interior values are
//!   the p-harmonic extension of the boundary data.
//!
//! At p = 2 the quotient is minimized exactly by a dense symmetric eigensolver
//! after eliminating the massless vertices. Otherwise a seeded multi-start
//! quasi-Newton descent locates the minimizer and a Newton solve on the
//! eigen-equation polishes it until the per-vertex residual certifies it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::{harmonic_extension, tie_gaps};
use crate::energy::{energy_of, phi, weighted_p_mean, Exponent, Potential};
use crate::error::{invalid, ConvergenceError, Error, Result};
use crate::graph::{truncated_domain, Domain, InfiniteFamily};

/// Relative gap below which values count as tied in the residual.
const TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Dirichlet,
    Neumann,
    Steklov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    P2Exact,
    RayleighDescent,
    RescaledLimit,
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub value: f64,
    /// Centered (Neumann, Steklov) and scaled to sup norm 1.
    pub eigenfunction: Potential,
    /// Largest per-vertex defect of the eigen-equation.
    pub residual: f64,
    pub restarts_used: usize,
    pub method: Method,
    pub ill_conditioned: bool,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub seed: u64,
    /// Random starts in addition to the p = 2 eigenfunction and any warm starts.
    pub restarts: usize,
    /// Use the descent path even at p = 2.
    pub force_descent: bool,
    pub max_iterations: usize,
    pub residual_tol: f64,
    /// Extra starting functions on `Ω̄`, e.g. equilibrium potentials.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            seed: 42,
            restarts: 32,
            force_descent: false,
            max_iterations: 20_000,
            residual_tol: 1e-6,
            warm_starts: Vec::new(),
        }
    }
}

pub fn dirichlet_eigenvalue(d: &Domain, p: Exponent) -> Result<EigenResult> {
    dirichlet_eigenvalue_with(d, p, &EigenOptions::default())
}

pub fn dirichlet_eigenvalue_with(d: &Domain, p: Exponent, opts: &EigenOptions) -> Result<EigenResult> {
    solve(d, Kind::Dirichlet, p, opts)
}

/// First nonzero eigenvalue of the Neumann problem on `Ω`; for a closed
/// domain this is the first nonzero eigenvalue of the graph itself.
pub fn neumann_eigenvalue(d: &Domain, p: Exponent) -> Result<EigenResult> {
    neumann_eigenvalue_with(d, p, &EigenOptions::default())
}

pub fn neumann_eigenvalue_with(d: &Domain, p: Exponent, opts: &EigenOptions) -> Result<EigenResult> {
    solve(d, Kind::Neumann, p, opts)
}

pub fn steklov_eigenvalue(d: &Domain, p: Exponent) -> Result<EigenResult> {
    steklov_eigenvalue_with(d, p, &EigenOptions::default())
}

pub fn steklov_eigenvalue_with(d: &Domain, p: Exponent, opts: &EigenOptions) -> Result<EigenResult> {
    let mut r = solve(d, Kind::Steklov, p, opts)?;
    // Re-derive the interior from the boundary data with the capacity solver.
    let ext = harmonic_extension(d, &r.eigenfunction, p)?;
    let rq = Rayleigh::new(d, Kind::Steklov, p.get(), None)?;
    let f = ext.potential.into_values();
    if let Some(value) = rq.quotient(&f) {
        let (f, _) = rq.present(f);
        let residual = rq.residual(&f, value);
        if residual <= r.residual.max(opts.residual_tol) {
            r.value = value;
            r.residual = residual;
            r.eigenfunction = Potential::from_vec(f);
        }
    }
    Ok(r)
}

/// Rayleigh quotient of `f` for the given problem. `None` when the
/// denominator vanishes.
pub fn rayleigh_quotient(d: &Domain, kind: Kind, f: &Potential, p: Exponent) -> Result<Option<f64>> {
    let rq = Rayleigh::new(d, kind, p.get(), None)?;
    if f.len() != d.len() {
        return Err(invalid("potential does not match the domain"));
    }
    let mut v = f.values().to_vec();
    if kind == Kind::Dirichlet {
        for x in 0..d.len() {
            if !d.is_interior(x) && v[x] != 0.0 {
                return Err(invalid("Dirichlet test functions must vanish on the boundary"));
            }
        }
    }
    for x in 0..d.len() {
        if rq.pinned[x] {
            v[x] = 0.0;
        }
    }
    Ok(rq.quotient(&v))
}

/// Per-vertex residual of the eigen-equation for `f` and `value`.
pub fn eigen_residual(d: &Domain, kind: Kind, f: &Potential, value: f64, p: Exponent) -> Result<f64> {
    let rq = Rayleigh::new(d, kind, p.get(), None)?;
    let (f, _) = rq.present(f.values().to_vec());
    Ok(rq.residual(&f, value))
}

/// `E_p(u_h, u_h) / min_c ||u - c||^p_{p,δΩ}` with `u_h` the p-harmonic
/// extension of the boundary values of `u`.
pub fn steklov_quotient(d: &Domain, u: &Potential, p: Exponent) -> Result<Option<f64>> {
    let ext = harmonic_extension(d, u, p)?;
    rayleigh_quotient(d, Kind::Steklov, &ext.potential, p)
}

/// `μ_{1,p}` of the closed boundary graph with measure `m` on `δΩ` and
/// `m / k` on `Ω`, for each `k`.
#[derive(Debug, Clone, Serialize)]
pub struct RescaledSequence {
    pub steklov: f64,
    pub points: Vec<(u64, f64)>,
}

impl RescaledSequence {
    /// `|μ(k_max) - σ| / σ`.
    pub fn final_gap(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |&(_, mu)| (mu - self.steklov).abs() / self.steklov)
    }
}

pub fn steklov_via_rescaling(d: &Domain, p: Exponent, ks: &[u64], opts: &EigenOptions) -> Result<RescaledSequence> {
    let sigma = steklov_eigenvalue_with(d, p, opts)?;
    rescaled_from(d, p, ks, opts, &sigma)
}

/// As [`steklov_via_rescaling`], reusing an already computed Steklov result as a warm start.
pub fn rescaled_from(d: &Domain, p: Exponent, ks: &[u64], opts: &EigenOptions, sigma: &EigenResult) -> Result<RescaledSequence> {
    let mut points = Vec::with_capacity(ks.len());
    let mut previous: Option<Vec<f64>> = None;
    for &k in ks {
        let rescaled = Domain::closed(d.rescale_measure(k)?.graph())?;
        let mut o = opts.clone();
        o.warm_starts.push(sigma.eigenfunction.values().to_vec());
        if let Some(prev) = &previous {
            o.warm_starts.push(prev.clone());
        }
        let r = solve(&rescaled, Kind::Neumann, p, &o)?;
        previous = Some(r.eigenfunction.values().to_vec());
        points.push((k, r.value));
    }
    Ok(RescaledSequence { steklov: sigma.value, points })
}

/// First Dirichlet eigenvalue on growing balls of an infinite graph.
#[derive(Debug, Clone, Serialize)]
pub struct InfiniteEigen {
    pub points: Vec<(usize, f64)>,
}

impl InfiniteEigen {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1 + slack)
    }
}

pub fn eigenvalue_infinite(family: InfiniteFamily, p: Exponent, radii: &[usize], opts: &EigenOptions) -> Result<InfiniteEigen> {
    let mut points = Vec::with_capacity(radii.len());
    for &r in radii {
        let (_, d) = truncated_domain(family, r)?;
        points.push((r, dirichlet_eigenvalue_with(&d, p, opts)?.value));
    }
    Ok(InfiniteEigen { points })
}

/// The exact p = 2 eigenpair of a problem, used as a start and as a heuristic
/// for level-set searches.
pub fn p2_eigenfunction(d: &Domain, kind: Kind) -> Result<(f64, Potential)> {
    let rq = Rayleigh::new(d, kind, 2.0, None)?;
    let (value, f) = rq.p2_exact()?;
    Ok((value, Potential::from_vec(f)))
}

fn solve(d: &Domain, kind: Kind, p: Exponent, opts: &EigenOptions) -> Result<EigenResult> {
    let rq = Rayleigh::new(d, kind, p.get(), None)?;
    let exact = rq.p2_exact()?;
    if p.get() == 2.0 && !opts.force_descent {
        let (f, _) = rq.present(exact.1);
        let value = rq.quotient(&f).unwrap_or(exact.0);
        return Ok(EigenResult {
            value,
            residual: rq.residual(&f, value),
            eigenfunction: Potential::from_vec(f),
            restarts_used: 0,
            method: Method::P2Exact,
            ill_conditioned: p.ill_conditioned(),
        });
    }

    let mut starts: Vec<Vec<f64>> = vec![exact.1];
    if kind == Kind::Dirichlet {
        starts.extend(rq.component_starts()?);
    }
    for w in &opts.warm_starts {
        if w.len() == d.len() {
            starts.push(w.clone());
        }
    }
    for i in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        let f: Vec<f64> = (0..d.len())
            .map(|_| if kind == Kind::Dirichlet { rng.random::<f64>() } else { rng.random_range(-1.0..1.0) })
            .collect();
        starts.push(f);
    }
    for s in &mut starts {
        for x in 0..d.len() {
            if rq.pinned[x] {
                s[x] = 0.0;
            }
            if kind == Kind::Dirichlet {
                s[x] = s[x].abs();
            }
        }
    }

    let descents: Vec<Option<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|s| rq.descend(s.clone(), opts.max_iterations))
        .collect();
    let mut order: Vec<(f64, usize)> = descents
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|(q, _)| (*q, i)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let best = order.first().copied().ok_or_else(|| {
        Error::from(ConvergenceError {
            solver: "rayleigh descent",
            iterations: 0,
            residual: f64::INFINITY,
            best_value: f64::NAN,
            best_iterate: Vec::new(),
        })
    })?;

    let mut fallback: Option<(f64, Vec<f64>, f64)> = None;
    for &(q, i) in order.iter().take(8) {
        if q > best.0 * (1.0 + 1e-6) + 1e-12 {
            break;
        }
        let (_, f) = descents[i].as_ref().expect("filtered");
        let candidate = rq.certify(f, q, opts.residual_tol);
        match candidate {
            Ok((value, f, residual)) => {
                return Ok(EigenResult {
                    value,
                    eigenfunction: Potential::from_vec(f),
                    residual,
                    restarts_used: starts.len(),
                    method: Method::RayleighDescent,
                    ill_conditioned: p.ill_conditioned(),
                });
            }
            Err((value, f, residual)) => {
                if fallback.as_ref().is_none_or(|b| residual < b.2) {
                    fallback = Some((value, f, residual));
                }
            }
        }
    }
    let (value, f, residual) = fallback.expect("at least one candidate");
    Err(ConvergenceError {
        solver: "rayleigh descent",
        iterations: opts.max_iterations,
        residual,
        best_value: value,
        best_iterate: f,
    }
    .into())
}

struct Rayleigh<'a> {
    d: &'a Domain,
    p: f64,
    mass: Vec<f64>,
    pinned: Vec<bool>,
    centered: bool,
    free: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl<'a> Rayleigh<'a> {
    fn new(d: &'a Domain, kind: Kind, p: f64, pinned: Option<Vec<bool>>) -> Result<Rayleigh<'a>> {
        let n = d.len();
        let (interior, boundary) = (d.interior_count(), d.boundary_count());
        let (mass, default_pinned, centered): (Vec<f64>, Vec<bool>, bool) = match kind {
            Kind::Dirichlet => {
                if boundary == 0 {
                    return Err(invalid("Dirichlet problem needs a nonempty boundary"));
                }
                (
                    (0..n).map(|x| if d.is_interior(x) { d.measure(x) } else { 0.0 }).collect(),
                    (0..n).map(|x| !d.is_interior(x)).collect(),
                    false,
                )
            }
            Kind::Neumann => {
                if interior < 2 {
                    return Err(invalid("Neumann problem needs at least two interior vertices"));
                }
                (
                    (0..n).map(|x| if d.is_interior(x) { d.measure(x) } else { 0.0 }).collect(),
                    vec![false; n],
                    true,
                )
            }
            Kind::Steklov => {
                if boundary < 2 {
                    return Err(invalid("Steklov problem needs at least two boundary vertices"));
                }
                (
                    (0..n).map(|x| if d.is_interior(x) { 0.0 } else { d.measure(x) }).collect(),
                    vec![false; n],
                    true,
                )
            }
        };
        let pinned = pinned.unwrap_or(default_pinned);
        let free = (0..n).filter(|&x| !pinned[x]).collect();
        Ok(Rayleigh { d, p, mass, pinned, centered, free })
    }

    fn center(&self, f: &mut [f64]) {
        if self.centered {
            let c = weighted_p_mean(f, &self.mass, self.p);
            for v in f.iter_mut() {
                *v -= c;
            }
        }
    }

    fn denominator(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(v, m)| m * v.abs().powf(self.p)).sum()
    }

    /// Quotient of `f`, recentering a copy first.
    fn quotient(&self, f: &[f64]) -> Option<f64> {
        let mut g = f.to_vec();
        self.center(&mut g);
        let den = self.denominator(&g);
        (den > 0.0 && den.is_finite()).then(|| energy_of(self.d, &g, self.p) / den)
    }

    /// Center and scale so that the denominator is 1.
    fn normalize(&self, f: &mut [f64]) -> bool {
        self.center(f);
        let den = self.denominator(f);
        let scale = self.linf(f);
        if !(den > 1e-300 && den.is_finite()) || den.powf(1.0 / self.p) < 1e-13 * scale {
            return false;
        }
        let s = den.powf(-1.0 / self.p);
        for v in f.iter_mut() {
            *v *= s;
        }
        true
    }

    fn linf(&self, f: &[f64]) -> f64 {
        f.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Centered, sup-norm 1, and nonnegative for Dirichlet problems.
    fn present(&self, mut f: Vec<f64>) -> (Vec<f64>, f64) {
        self.center(&mut f);
        if !self.centered {
            for v in &mut f {
                *v = v.abs();
            }
        }
        let s = self.linf(&f);
        if s > 0.0 {
            for v in &mut f {
                *v /= s;
            }
        }
        (f, s)
    }

    /// `∇R` at a normalized `f`, `R = E / D` with `D(f) = 1`.
    fn gradient(&self, f: &[f64], r: f64) -> Vec<f64> {
        let p = self.p;
        let mut g = vec![0.0; f.len()];
        for e in self.d.graph().edges() {
            let t = p * e.weight * phi(f[e.u] - f[e.v], p);
            g[e.u] += t;
            g[e.v] -= t;
        }
        for x in 0..f.len() {
            if self.pinned[x] {
                g[x] = 0.0;
            } else {
                g[x] -= r * p * self.mass[x] * phi(f[x], p);
            }
        }
        g
    }

    /// Largest `|Σ_y w φ(f(x) - f(y)) - value · mass(x) φ(f(x) - c)| / m(x)` over free
    /// vertices, for `f` scaled to sup norm 1.
    ///
    /// Values tied to within [`TIE`] are judged as a cluster: for p < 2 the
    /// offsets that balance each member can lie below floating point
    /// resolution, so when the offsets implied by the member residuals are
    /// themselves below [`TIE`] only the cluster's net imbalance counts.
    fn residual(&self, f: &[f64], value: f64) -> f64 {
        let mut g = f.to_vec();
        self.center(&mut g);
        let s = self.linf(&g);
        if s == 0.0 {
            return f64::INFINITY;
        }
        for v in &mut g {
            *v /= s;
        }
        let p = self.p;
        let graph = self.d.graph();
        let n = g.len();
        let mut r = vec![0.0; n];
        for &x in &self.free {
            let flux: f64 = graph.neighbors(x).iter().map(|&(y, w)| w * phi(g[x] - g[y], p)).sum();
            r[x] = flux - value * self.mass[x] * phi(g[x], p);
        }
        let mut parent: Vec<usize> = (0..n).collect();
        for e in graph.edges() {
            if (g[e.u] - g[e.v]).abs() <= TIE && !(self.pinned[e.u] && self.pinned[e.v]) {
                let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                parent[a] = b;
            }
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            let root = find(&mut parent, x);
            groups[root].push(x);
        }
        let mut worst = 0.0f64;
        for members in groups.iter().filter(|m| !m.is_empty()) {
            let single = members.iter().map(|&x| r[x].abs() / graph.measure(x)).fold(0.0f64, f64::max);
            if members.len() == 1 {
                worst = worst.max(single);
                continue;
            }
            let mut local = vec![usize::MAX; n];
            for (i, &x) in members.iter().enumerate() {
                local[x] = i;
            }
            let edges: Vec<(usize, usize, f64)> = graph
                .edges()
                .iter()
                .filter(|e| local[e.u] != usize::MAX && local[e.v] != usize::MAX)
                .map(|e| (local[e.u], local[e.v], e.weight))
                .collect();
            let fixed: Vec<bool> = members.iter().map(|&x| self.pinned[x]).collect();
            let mut source: Vec<f64> = members.iter().map(|&x| r[x]).collect();
            let mut net = 0.0;
            if !fixed.iter().any(|&b| b) {
                let measure: f64 = members.iter().map(|&x| graph.measure(x)).sum();
                let total: f64 = source.iter().sum();
                for (c, &x) in source.iter_mut().zip(members) {
                    *c -= total * graph.measure(x) / measure;
                }
                net = total.abs() / measure;
            }
            let resolved = tie_gaps(&edges, &fixed, &source, p).is_some_and(|gaps| gaps.iter().all(|&t| t <= TIE));
            worst = worst.max(if resolved { net } else { single });
        }
        worst
    }

    /// Exact minimizer at p = 2 after eliminating massless free vertices.
    fn p2_exact(&self) -> Result<(f64, Vec<f64>)> {
        let n = self.d.len();
        let graph = self.d.graph();
        let s_idx: Vec<usize> = self.free.iter().copied().filter(|&x| self.mass[x] > 0.0).collect();
        let z_idx: Vec<usize> = self.free.iter().copied().filter(|&x| self.mass[x] == 0.0).collect();
        let need = if self.centered { 2 } else { 1 };
        if s_idx.len() < need {
            return Err(invalid("not enough massive vertices for this eigenvalue problem"));
        }
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for e in graph.edges() {
            lap[(e.u, e.u)] += e.weight;
            lap[(e.v, e.v)] += e.weight;
            lap[(e.u, e.v)] -= e.weight;
            lap[(e.v, e.u)] -= e.weight;
        }
        let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| lap[(rows[i], cols[j])]);
        let l_ss = sub(&s_idx, &s_idx);
        let (k, elim) = if z_idx.is_empty() {
            (l_ss, None)
        } else {
            let l_zz = sub(&z_idx, &z_idx);
            let l_zs = sub(&z_idx, &s_idx);
            let chol = l_zz
                .cholesky()
                .ok_or_else(|| Error::Validation("massless block of the Laplacian is singular".into()))?;
            let x = chol.solve(&l_zs);
            (&l_ss - l_zs.transpose() * &x, Some(x))
        };
        let inv_sqrt: Vec<f64> = s_idx.iter().map(|&x| 1.0 / self.mass[x].sqrt()).collect();
        let a = DMatrix::from_fn(s_idx.len(), s_idx.len(), |i, j| {
            let v = inv_sqrt[i] * k[(i, j)] * inv_sqrt[j];
            v
        });
        let a = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..s_idx.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let pick = order[need - 1];
        let value = eig.eigenvalues[pick].max(0.0);
        let v = eig.eigenvectors.column(pick);
        let f_s = DVector::from_fn(s_idx.len(), |i, _| v[i] * inv_sqrt[i]);
        let mut f = vec![0.0; n];
        for (i, &x) in s_idx.iter().enumerate() {
            f[x] = f_s[i];
        }
        if let Some(x) = elim {
            let f_z = -(x * &f_s);
            for (i, &z) in z_idx.iter().enumerate() {
                f[z] = f_z[i];
            }
        }
        Ok((value, f))
    }

    /// p = 2 Dirichlet eigenfunctions of each connected piece of the interior.
    fn component_starts(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.d.len();
        let graph = self.d.graph();
        let mut parent: Vec<usize> = (0..n).collect();
        for e in graph.edges() {
            if self.d.is_interior(e.u) && self.d.is_interior(e.v) {
                let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                parent[a] = b;
            }
        }
        let mut roots: Vec<usize> = (0..n).filter(|&x| self.d.is_interior(x)).map(|x| find(&mut parent, x)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() < 2 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for r in roots {
            let pinned: Vec<bool> = (0..n).map(|x| !self.d.is_interior(x) || find(&mut parent, x) != r).collect();
            let sub = Rayleigh::new(self.d, Kind::Dirichlet, 2.0, Some(pinned))?;
            out.push(sub.p2_exact()?.1);
        }
        Ok(out)
    }

    /// Quasi-Newton descent on the quotient from `f`. Returns the final
    /// quotient and normalized iterate, or `None` for a degenerate start.
    fn descend(&self, mut f: Vec<f64>, max_iterations: usize) -> Option<(f64, Vec<f64>)> {
        if !self.normalize(&mut f) {
            return None;
        }
        let k = self.free.len();
        let gather = |v: &[f64]| DVector::from_iterator(k, self.free.iter().map(|&x| v[x]));
        let mut r = energy_of(self.d, &f, self.p);
        let mut g = gather(&self.gradient(&f, r));
        let mut h = DMatrix::<f64>::identity(k, k);
        let mut fresh = true;
        let mut small = 0;
        let mut trial = f.clone();
        for _ in 0..max_iterations {
            let mut dir = -(&h * &g);
            let mut slope = g.dot(&dir);
            if !(slope < 0.0) {
                h.fill_with_identity();
                fresh = true;
                dir = -g.clone();
                slope = -g.norm_squared();
            }
            if slope == 0.0 {
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                trial.copy_from_slice(&f);
                for (i, &x) in self.free.iter().enumerate() {
                    trial[x] += t * dir[i];
                }
                if self.normalize(&mut trial) {
                    let rt = energy_of(self.d, &trial, self.p);
                    if rt <= r + 1e-4 * t * slope {
                        accepted = Some(rt);
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some(rt) = accepted else {
                if fresh {
                    break;
                }
                h.fill_with_identity();
                fresh = true;
                continue;
            };
            let g_new = gather(&self.gradient(&trial, rt));
            let s = gather(&trial) - gather(&f);
            let y = &g_new - &g;
            let sy = s.dot(&y);
            if sy > 1e-16 * s.norm() * y.norm() && sy > 0.0 {
                if fresh {
                    let scale = sy / y.norm_squared();
                    h.fill_with_identity();
                    h *= scale;
                }
                let rho = 1.0 / sy;
                let hy = &h * &y;
                let yhy = y.dot(&hy);
                h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
                fresh = false;
            }
            let decrease = (r - rt) / r.max(f64::MIN_POSITIVE);
            small = if decrease < 1e-12 { small + 1 } else { 0 };
            std::mem::swap(&mut f, &mut trial);
            r = rt;
            g = g_new;
            if small >= 5 {
                break;
            }
        }
        Some((r, f))
    }

    /// Polish a descent result into a certified eigenpair. On failure returns
    /// the best attempt.
    #[allow(clippy::type_complexity)]
    fn certify(&self, f: &[f64], q: f64, tol: f64) -> std::result::Result<(f64, Vec<f64>, f64), (f64, Vec<f64>, f64)> {
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        let consider = |value: f64, g: Vec<f64>, best: &mut Option<(f64, Vec<f64>, f64)>| {
            let res = self.residual(&g, value);
            if best.as_ref().is_none_or(|b| res < b.2) {
                *best = Some((value, g, res));
            }
        };
        let (start, _) = self.present(f.to_vec());
        if let Some(v) = self.quotient(&start) {
            consider(v, start.clone(), &mut best);
            if best.as_ref().is_some_and(|b| b.2 <= tol) {
                return Ok(best.unwrap());
            }
        }
        // Ties and holds at the centering level are guessed separately: for
        // p < 2 a vertex may sit well away from the level in the descent
        // iterate while the tie structure is already sharp.
        let mut attempts: Vec<(f64, f64)> = [0.0, 1e-7, 1e-5, 1e-3].iter().map(|&t| (t, t)).collect();
        for hold in [1e-2, 3e-2, 1e-1] {
            for tie in [0.0, 1e-5, 1e-3, 1e-2] {
                attempts.push((tie, hold));
            }
        }
        for (tie, hold) in attempts {
            let Some(g) = self.newton(&start, q, tie, hold) else { continue };
            let Some(v) = self.quotient(&g) else { continue };
            if v > q * (1.0 + 1e-8) + 1e-14 {
                continue;
            }
            let (g, _) = self.present(g);
            let res = self.residual(&g, v);
            if res <= tol {
                return Ok((v, g, res));
            }
            consider(v, g, &mut best);
        }
        Err(best.unwrap_or((q, start, f64::INFINITY)))
    }

    /// Newton/Levenberg-Marquardt on the eigen-equation with values tied
    /// within `tie` (relative to the sup norm) moved together, and values
    /// within `hold` of the centering level held there.
    fn newton(&self, f0: &[f64], q: f64, tie: f64, hold: f64) -> Option<Vec<f64>> {
        let n = f0.len();
        let p = self.p;
        let mut f = f0.to_vec();
        if !self.normalize(&mut f) {
            return None;
        }
        let s = self.linf(&f);
        let graph = self.d.graph();

        // Cluster structure: a union-find root per vertex, with `fixed` roots held at 0.
        let mut parent: Vec<usize> = (0..n).collect();
        let mut fixed = self.pinned.clone();
        for x in 0..n {
            if hold > 0.0 && f[x].abs() <= hold * s {
                fixed[x] = true;
            }
        }
        if tie > 0.0 {
            for e in graph.edges() {
                if (f[e.u] - f[e.v]).abs() <= tie * s {
                    let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
                    if a != b {
                        parent[a] = b;
                        fixed[b] = fixed[b] || fixed[a];
                    }
                }
            }
        }
        let root: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
        let mut var = vec![usize::MAX; n];
        let mut k = 0;
        for x in 0..n {
            let r = root[x];
            if fixed[r] || fixed[x] {
                continue;
            }
            if var[r] == usize::MAX {
                var[r] = k;
                k += 1;
            }
        }
        if k == 0 {
            return None;
        }
        let var_of = |x: usize| {
            let r = root[x];
            if fixed[r] || fixed[x] {
                None
            } else {
                Some(var[r])
            }
        };
        let mut z = DVector::<f64>::zeros(k + 1);
        let mut counts = vec![0.0; k];
        for x in 0..n {
            if let Some(i) = var_of(x) {
                z[i] += f[x];
                counts[i] += 1.0;
            }
        }
        for i in 0..k {
            z[i] /= counts[i];
        }
        z[k] = q;

        // Free vertices held at the centering level keep their (summed)
        // equation as an extra least-squares row; it is what balances the
        // clusters around that level.
        let mut held_row = vec![usize::MAX; n];
        let mut rows = k + 1;
        for x in 0..n {
            if var_of(x).is_none() && !self.pinned[x] {
                let r = root[x];
                if held_row[r] == usize::MAX {
                    held_row[r] = rows;
                    rows += 1;
                }
                held_row[x] = held_row[r];
            }
        }
        let row_of = |x: usize| var_of(x).or_else(|| (held_row[x] != usize::MAX && !self.pinned[x]).then_some(held_row[x]));

        let expand = |z: &DVector<f64>| -> Vec<f64> { (0..n).map(|x| var_of(x).map_or(0.0, |i| z[i])).collect() };
        let system = |z: &DVector<f64>, with_jacobian: bool| -> (DVector<f64>, Option<DMatrix<f64>>) {
            let g = expand(z);
            let mu = z[k];
            let mut res = DVector::<f64>::zeros(rows);
            let mut jac = with_jacobian.then(|| DMatrix::<f64>::zeros(rows, k + 1));
            for e in graph.edges() {
                let (vu, vv) = (var_of(e.u), var_of(e.v));
                let (ru, rv) = (row_of(e.u), row_of(e.v));
                if ru.is_some() && ru == rv {
                    continue;
                }
                let t = g[e.u] - g[e.v];
                let flux = e.weight * phi(t, p);
                let c = (p - 1.0) * e.weight * t.abs().max(1e-300).powf(p - 2.0);
                if let Some(i) = ru {
                    res[i] += flux;
                }
                if let Some(j) = rv {
                    res[j] -= flux;
                }
                if let Some(jm) = jac.as_mut() {
                    for (row, sign) in [(ru, 1.0), (rv, -1.0)] {
                        let Some(r) = row else { continue };
                        if let Some(i) = vu {
                            jm[(r, i)] += sign * c;
                        }
                        if let Some(j) = vv {
                            jm[(r, j)] -= sign * c;
                        }
                    }
                }
            }
            let mut norm = -1.0;
            for x in 0..n {
                let Some(i) = var_of(x) else { continue };
                let m = self.mass[x];
                if m == 0.0 {
                    continue;
                }
                let ph = phi(g[x], p);
                res[i] -= mu * m * ph;
                norm += m * g[x].abs().powf(p);
                if let Some(jm) = jac.as_mut() {
                    jm[(i, i)] -= mu * m * (p - 1.0) * g[x].abs().max(1e-300).powf(p - 2.0);
                    jm[(i, k)] -= m * ph;
                    jm[(k, i)] += p * m * ph;
                }
            }
            res[k] = norm;
            (res, jac)
        };

        let mut lambda = 0.0;
        let (mut res, _) = system(&z, false);
        let mut rn = res.norm();
        for _ in 0..200 {
            if rn <= 1e-14 {
                break;
            }
            let (_, jac) = system(&z, true);
            let jac = jac.expect("requested");
            let mut improved = false;
            for _ in 0..30 {
                let step = if lambda == 0.0 {
                    jac.clone().svd(true, true).solve(&(-&res), 1e-15).ok()
                } else {
                    let jt = jac.transpose();
                    let mut a = &jt * &jac;
                    let scale = (0..=k).map(|i| a[(i, i)]).fold(0.0f64, f64::max).max(1e-300);
                    for i in 0..=k {
                        a[(i, i)] += lambda * scale;
                    }
                    a.cholesky().map(|c| c.solve(&(-(&jt * &res))))
                };
                if let Some(step) = step.filter(|st| st.iter().all(|v| v.is_finite())) {
                    let z_new = &z + &step;
                    let (res_new, _) = system(&z_new, false);
                    let rn_new = res_new.norm();
                    if rn_new < rn {
                        z = z_new;
                        res = res_new;
                        rn = rn_new;
                        lambda = if lambda < 1e-12 { 0.0 } else { lambda * 0.1 };
                        improved = true;
                        break;
                    }
                }
                lambda = if lambda == 0.0 { 1e-10 } else { lambda * 10.0 };
                if lambda > 1e8 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        let g = expand(&z);
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
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
    fn dirichlet_path_values() {
        let d = path_domain(4);
        let r = dirichlet_eigenvalue(&d, p(2.0)).unwrap();
        assert!((r.value - (2.0 - 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(r.method, Method::P2Exact);
        assert!(r.eigenfunction.values().iter().all(|&v| v >= 0.0));
        let d2 = path_domain(2);
        for q in [1.2, 1.5, 2.0, 3.0, 4.0] {
            let r = dirichlet_eigenvalue(&d2, p(q)).unwrap();
            assert!((r.value - 2.0).abs() < 1e-9, "p={q}: {}", r.value);
        }
    }

    #[test]
    fn descent_matches_exact_at_two() {
        let d = path_domain(5);
        let opts = EigenOptions { force_descent: true, restarts: 4, ..Default::default() };
        for kind in [Kind::Dirichlet, Kind::Neumann, Kind::Steklov] {
            let exact = solve(&d, kind, p(2.0), &EigenOptions::default()).unwrap();
            let desc = solve(&d, kind, p(2.0), &opts).unwrap();
            assert_eq!(desc.method, Method::RayleighDescent);
            assert!((exact.value - desc.value).abs() <= 1e-9 * exact.value, "{kind:?}");
        }
    }

    #[test]
    fn closed_graph_values() {
        let k4 = Domain::closed(&generate(&Family::Complete(4)).unwrap()).unwrap();
        assert!((neumann_eigenvalue(&k4, p(2.0)).unwrap().value - 4.0).abs() < 1e-12);
        let c4 = Domain::closed(&generate(&Family::Cycle(4)).unwrap()).unwrap();
        assert!((neumann_eigenvalue(&c4, p(2.0)).unwrap().value - 2.0).abs() < 1e-12);
        let k2 = Domain::closed(&generate(&Family::Complete(2)).unwrap()).unwrap();
        for q in [1.2, 1.5, 2.0, 3.0, 4.0] {
            let r = neumann_eigenvalue(&k2, p(q)).unwrap();
            assert!((r.value - 2f64.powf(q - 1.0)).abs() < 1e-9, "p={q}: {}", r.value);
        }
    }

    #[test]
    fn steklov_path_closed_form() {
        for n in [2usize, 4] {
            let d = path_domain(n);
            for q in [1.5, 2.0, 3.0] {
                let r = steklov_eigenvalue(&d, p(q)).unwrap();
                let expected = 2f64.powf(q - 1.0) * (n as f64).powf(1.0 - q);
                assert!((r.value - expected).abs() <= 1e-9 * expected, "n={n} p={q}: {}", r.value);
                assert!(r.residual <= 1e-6);
            }
        }
    }

    #[test]
    fn nonlinear_residuals_are_certified() {
        let g = generate(&Family::Grid(2, 3)).unwrap();
        let closed = Domain::closed(&g).unwrap();
        let part = Domain::from_ids(&g, &["0,0", "0,1", "1,1"]).unwrap();
        for q in [1.2, 1.5, 3.0, 4.0] {
            let r = neumann_eigenvalue(&closed, p(q)).unwrap();
            assert!(r.residual <= 1e-6, "closed p={q}");
            let r = dirichlet_eigenvalue(&part, p(q)).unwrap();
            assert!(r.residual <= 1e-6, "dirichlet p={q}");
            assert!(r.eigenfunction.values().iter().all(|&v| v >= 0.0));
            let r = neumann_eigenvalue(&part, p(q)).unwrap();
            assert!(r.residual <= 1e-6, "neumann p={q}");
            let r = steklov_eigenvalue(&part, p(q)).unwrap();
            assert!(r.residual <= 1e-6, "steklov p={q}");
        }
    }

    #[test]
    fn rescaled_sequence_approaches_steklov() {
        let d = path_domain(4);
        let seq = steklov_via_rescaling(&d, p(2.0), &[1, 4, 1024], &EigenOptions::default()).unwrap();
        assert!((seq.steklov - 0.5).abs() < 1e-12);
        assert!(seq.points.iter().all(|&(_, mu)| mu <= 0.5 + 1e-8));
        assert!(seq.final_gap() < 1e-3);
    }

    #[test]
    fn preconditions() {
        let closed = Domain::closed(&generate(&Family::Path(3)).unwrap()).unwrap();
        assert!(dirichlet_eigenvalue(&closed, p(2.0)).is_err());
        assert!(steklov_eigenvalue(&closed, p(2.0)).is_err());
        let single = path_domain(2);
        assert!(neumann_eigenvalue(&single, p(2.0)).is_err());
    }
}
