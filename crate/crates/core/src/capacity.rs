//! p-capacity between vertex sets and p-harmonic extensions.
//!
//! Both reduce to minimizing the p-energy over the vertices that are not
//! pinned, a strictly convex problem. The solver starts from the p = 2
//! solution and runs a damped Newton method in which vertices whose values
//! tie are moved together, since for p < 2 the Hessian blows up on ties and
//! for p > 2 it vanishes there.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::energy::{energy_of, phi, Exponent, Potential};
use crate::error::{invalid, ConvergenceError, Error, Result};
use crate::graph::{truncated_domain, Domain, InfiniteFamily, VertexSubset};

/// A capacity value; `+∞` is kept apart from floats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CapValue {
    Finite(f64),
    Infinite,
}

impl CapValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            CapValue::Finite(v) => Some(v),
            CapValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, CapValue::Infinite)
    }
}

#[derive(Debug, Clone)]
pub struct CapacityResult {
    pub value: CapValue,
    /// The equilibrium potential. Absent when a set is empty or the sets overlap.
    pub potential: Option<Potential>,
    pub iterations: usize,
    /// Largest `|Δ_p f|` over the free vertices.
    pub residual: f64,
    pub ill_conditioned: bool,
    pub continuation_used: bool,
}

impl CapacityResult {
    fn trivial(value: CapValue, p: Exponent) -> CapacityResult {
        CapacityResult {
            value,
            potential: None,
            iterations: 0,
            residual: 0.0,
            ill_conditioned: p.ill_conditioned(),
            continuation_used: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityOptions {
    pub max_iterations: usize,
    /// Relative energy decrease below which the descent is considered stalled.
    pub energy_rtol: f64,
    /// Bound on `|Δ_p f|` at free vertices.
    pub residual_tol: f64,
    /// Start from the p = 2 solution; otherwise from the midpoint of the data.
    pub linear_warm_start: bool,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        CapacityOptions {
            max_iterations: 10_000,
            energy_rtol: 1e-12,
            residual_tol: 1e-8,
            linear_warm_start: true,
        }
    }
}

/// `Cap_p(A, B) = inf { E_p(f, f) : f = 1 on A, f = 0 on B }`.
pub fn capacity(d: &Domain, a: &VertexSubset, b: &VertexSubset, p: Exponent) -> Result<CapacityResult> {
    capacity_with(d, a, b, p, &CapacityOptions::default())
}

pub fn capacity_with(
    d: &Domain,
    a: &VertexSubset,
    b: &VertexSubset,
    p: Exponent,
    opts: &CapacityOptions,
) -> Result<CapacityResult> {
    a.check_within(d.len())?;
    b.check_within(d.len())?;
    if a.is_empty() || b.is_empty() {
        return Ok(CapacityResult::trivial(CapValue::Finite(0.0), p));
    }
    if !a.is_disjoint(b) {
        return Ok(CapacityResult::trivial(CapValue::Infinite, p));
    }
    let mut pinned = vec![None; d.len()];
    for x in a.iter() {
        pinned[x] = Some(1.0);
    }
    for x in b.iter() {
        pinned[x] = Some(0.0);
    }
    let sol = solve_pinned(d, &pinned, p.get(), opts)?;
    let values = clip(sol.values, 0.0, 1.0)?;
    let value = energy_of(d, &values, p.get());
    Ok(CapacityResult {
        value: CapValue::Finite(value),
        potential: Some(Potential::from_vec(values)),
        iterations: sol.iterations,
        residual: sol.residual,
        ill_conditioned: p.ill_conditioned(),
        continuation_used: sol.continuation_used,
    })
}

/// `Cap_p(A, δΩ)`.
pub fn capacity_to_boundary(d: &Domain, a: &VertexSubset, p: Exponent) -> Result<CapacityResult> {
    if a.iter().any(|x| x >= d.len() || !d.is_interior(x)) {
        return Err(invalid("capacity to the boundary needs A inside the domain interior"));
    }
    capacity(d, a, &d.boundary(), p)
}

/// The p-harmonic extension into `Ω` of the boundary values of `u`.
#[derive(Debug, Clone)]
pub struct HarmonicExtension {
    pub potential: Potential,
    pub iterations: usize,
    pub residual: f64,
}

pub fn harmonic_extension(d: &Domain, u: &Potential, p: Exponent) -> Result<HarmonicExtension> {
    harmonic_extension_with(d, u, p, &CapacityOptions::default())
}

pub fn harmonic_extension_with(
    d: &Domain,
    u: &Potential,
    p: Exponent,
    opts: &CapacityOptions,
) -> Result<HarmonicExtension> {
    if u.len() != d.len() {
        return Err(invalid("boundary data length does not match the domain"));
    }
    let pinned: Vec<Option<f64>> = (0..d.len())
        .map(|x| (!d.is_interior(x)).then(|| u[x]))
        .collect();
    let sol = solve_pinned(d, &pinned, p.get(), opts)?;
    let (lo, hi) = pinned
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let values = if lo <= hi { clip(sol.values, lo, hi)? } else { sol.values };
    Ok(HarmonicExtension {
        potential: Potential::from_vec(values),
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// Capacities of `A` relative to growing balls of an infinite graph.
#[derive(Debug, Clone, Serialize)]
pub struct InfiniteCapacity {
    pub points: Vec<(usize, f64)>,
    /// Difference between the last two values, a convergence estimate.
    pub last_gap: f64,
}

impl InfiniteCapacity {
    /// Non-increasing within `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1 + slack)
    }
}

/// `Cap_p^{W}(A)` for each radius, where the domain at radius `r` is the ball
/// of radius `r - 1` and its boundary is the sphere of radius `r`.
pub fn capacity_infinite<S: AsRef<str>>(
    family: InfiniteFamily,
    a: &[S],
    p: Exponent,
    radii: &[usize],
) -> Result<InfiniteCapacity> {
    if a.is_empty() {
        return Err(invalid("capacity of an empty set along an exhaustion"));
    }
    let mut points = Vec::with_capacity(radii.len());
    for &r in radii {
        let (_, d) = truncated_domain(family, r)?;
        let set = d.subset(a)?;
        let res = capacity_to_boundary(&d, &set, p)?;
        points.push((r, res.value.finite().unwrap_or(f64::INFINITY)));
    }
    let last_gap = match points.as_slice() {
        [.., x, y] => x.1 - y.1,
        _ => f64::NAN,
    };
    Ok(InfiniteCapacity { points, last_gap })
}

fn clip(mut values: Vec<f64>, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let slack = 1e-9 * (1.0 + hi - lo);
    for v in &mut values {
        if *v < lo - slack || *v > hi + slack {
            return Err(Error::Validation(format!(
                "equilibrium potential value {v} outside [{lo}, {hi}]"
            )));
        }
        *v = v.clamp(lo, hi);
    }
    Ok(values)
}

pub(crate) struct Solution {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub continuation_used: bool,
}

/// Minimize the p-energy over the domain with the values in `pinned` held
/// fixed. Vertices with no path to a pinned vertex take the value 0.
pub(crate) fn solve_pinned(d: &Domain, pinned: &[Option<f64>], p: f64, opts: &CapacityOptions) -> Result<Solution> {
    let n = d.len();
    let g = d.graph();
    let mut reach = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&x| pinned[x].is_some()).collect();
    for &x in &stack {
        reach[x] = true;
    }
    while let Some(x) = stack.pop() {
        for &(y, _) in g.neighbors(x) {
            if !reach[y] {
                reach[y] = true;
                stack.push(y);
            }
        }
    }
    let free: Vec<bool> = (0..n).map(|x| pinned[x].is_none() && reach[x]).collect();
    let mut values: Vec<f64> = pinned.iter().map(|v| v.unwrap_or(0.0)).collect();
    if !free.iter().any(|&f| f) {
        return Ok(Solution { values, iterations: 0, residual: 0.0, continuation_used: false });
    }
    let data = pinned.iter().flatten().copied();
    let (lo, hi) = data.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    if lo == hi {
        for x in 0..n {
            if free[x] {
                values[x] = lo;
            }
        }
        return Ok(Solution { values, iterations: 0, residual: 0.0, continuation_used: false });
    }
    if opts.linear_warm_start {
        linear_solve(d, &free, &mut values)?;
    } else {
        for x in 0..n {
            if free[x] {
                values[x] = 0.5 * (lo + hi);
            }
        }
    }
    let problem = Problem { d, pinned, free: &free, scale };
    match problem.newton(values.clone(), p, opts) {
        Ok((values, iterations, residual)) => {
            Ok(Solution { values, iterations, residual, continuation_used: false })
        }
        Err(first) => {
            // Continuation in p from the linear solution.
            let mut current = values;
            let mut total = first.iterations;
            let mut last = None;
            for k in 1..=4 {
                let pk = 2.0 * (p / 2.0).powf(k as f64 / 4.0);
                match problem.newton(current.clone(), pk, opts) {
                    Ok((v, it, res)) => {
                        total += it;
                        current = v;
                        last = Some(res);
                    }
                    Err(mut e) => {
                        e.iterations += total;
                        if e.best_value > first.best_value {
                            e = ConvergenceError { iterations: e.iterations, ..first };
                        }
                        return Err(e.into());
                    }
                }
            }
            Ok(Solution {
                values: current,
                iterations: total,
                residual: last.unwrap_or(f64::NAN),
                continuation_used: true,
            })
        }
    }
}

/// Exact minimizer of the 2-energy: solve `L_FF f_F = -L_FP f_P`.
fn linear_solve(d: &Domain, free: &[bool], values: &mut [f64]) -> Result<()> {
    let g = d.graph();
    let idx: Vec<usize> = (0..d.len()).filter(|&x| free[x]).collect();
    let mut local = vec![usize::MAX; d.len()];
    for (k, &x) in idx.iter().enumerate() {
        local[x] = k;
    }
    let k = idx.len();
    let mut lap = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for e in g.edges() {
        for (x, y) in [(e.u, e.v), (e.v, e.u)] {
            if !free[x] {
                continue;
            }
            let i = local[x];
            lap[(i, i)] += e.weight;
            if free[y] {
                lap[(i, local[y])] -= e.weight;
            } else {
                rhs[i] += e.weight * values[y];
            }
        }
    }
    let sol = lap
        .cholesky()
        .ok_or_else(|| Error::Validation("singular reduced Laplacian".into()))?
        .solve(&rhs);
    for (i, &x) in idx.iter().enumerate() {
        values[x] = sol[i];
    }
    Ok(())
}

const TIE: f64 = 1e-9;
/// Newton steps without the residual halving before the tie structure is revisited.
const STALL: usize = 50;

/// Gap below which two adjacent values count as tied.
///
/// For `p < 2` a gap `g` carries flux `w g^{p-1}`, and one rounding step in
/// values of size `|f|` moves that flux by about `(p-1) w g^{p-2} ε |f|`. Gaps
/// too small for this to stay under a tenth of the residual tolerance cannot be
/// resolved in double precision and are treated as ties.
#[derive(Debug, Clone, Copy)]
struct Tie {
    coef: f64,
    expo: f64,
    small_p: bool,
    scale: f64,
}

impl Tie {
    fn new(d: &Domain, p: f64, tol: f64, scale: f64) -> Tie {
        let g = d.graph();
        let w = g.edges().iter().map(|e| e.weight).fold(0.0f64, f64::max);
        let m = (0..g.len()).map(|x| g.measure(x)).fold(f64::INFINITY, f64::min);
        let small_p = p < 2.0;
        let expo = if small_p { 1.0 / (2.0 - p) } else { 1.0 };
        let coef = if small_p { ((p - 1.0) * w * f64::EPSILON / (0.1 * tol * m)).powf(expo) } else { 0.0 };
        Tie { coef, expo, small_p, scale }
    }

    /// Tie tolerance for values `a` and `b`.
    fn at(&self, a: f64, b: f64) -> f64 {
        if !self.small_p {
            return TIE * self.scale;
        }
        let mag = a.abs().max(b.abs()) / self.scale;
        self.scale * (TIE * mag).max(self.coef * mag.powf(self.expo))
    }
}

struct Problem<'a> {
    d: &'a Domain,
    pinned: &'a [Option<f64>],
    free: &'a [bool],
    scale: f64,
}

struct Clusters {
    /// Cluster root of every vertex.
    root: Vec<usize>,
    /// Variable index of every cluster root, `None` for fixed clusters.
    var: Vec<Option<usize>>,
    /// Members of each variable cluster.
    members: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Problem<'_> {
    /// Per-vertex residual `max |Δ_p f|` over free vertices, normalized by the data scale.
    fn vertex_residual(&self, f: &[f64], p: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let g = self.d.graph();
        let norm = self.scale.powf(p - 1.0);
        let mut per = vec![0.0; f.len()];
        let mut flux = vec![0.0; f.len()];
        let mut worst = 0.0f64;
        for x in 0..f.len() {
            if !self.free[x] {
                continue;
            }
            flux[x] = g.neighbors(x).iter().map(|&(y, w)| w * phi(f[y] - f[x], p)).sum();
            per[x] = (flux[x] / g.measure(x)).abs() / norm;
            worst = worst.max(per[x]);
        }
        (worst, per, flux)
    }

    /// Residual with merged clusters judged as a whole.
    ///
    /// Inside a cluster the tie edges must carry whatever flux balances each
    /// member, which fixes small offsets between the members. When every
    /// offset is below the tie tolerance the clustered potential is within that
    /// tolerance of an exact solution, and only the cluster's net imbalance is
    /// a genuine defect. Returns the residual and, per edge, whether it is a
    /// spurious tie.
    fn cluster_residual(&self, f: &[f64], p: f64, tie: Tie, cl: &Clusters, per: &[f64], flux: &[f64]) -> (f64, Vec<bool>) {
        let g = self.d.graph();
        let edges = g.edges();
        let n = per.len();
        let norm = self.scale.powf(p - 1.0);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            groups[cl.root[x]].push(x);
        }
        let mut spurious = vec![false; edges.len()];
        let mut worst = 0.0f64;
        for members in groups.iter().filter(|m| !m.is_empty()) {
            if members.len() == 1 {
                worst = worst.max(per[members[0]]);
                continue;
            }
            if members.iter().all(|&x| !self.free[x]) {
                continue;
            }
            let mut local = vec![usize::MAX; n];
            for (i, &x) in members.iter().enumerate() {
                local[x] = i;
            }
            let inner: Vec<(usize, usize, usize)> = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| local[e.u] != usize::MAX && local[e.v] != usize::MAX)
                .map(|(k, e)| (k, local[e.u], local[e.v]))
                .collect();
            let fixed: Vec<bool> = members.iter().map(|&x| !self.free[x]).collect();
            let mut source: Vec<f64> = members.iter().map(|&x| if self.free[x] { flux[x] } else { 0.0 }).collect();
            let mut net = 0.0;
            if !fixed.iter().any(|&b| b) {
                // A free cluster can only absorb its net imbalance by moving
                // as a whole; spread it by mass and report it.
                let mass: f64 = members.iter().map(|&x| g.measure(x)).sum();
                net = source.iter().sum::<f64>();
                for (s, &x) in source.iter_mut().zip(members) {
                    *s -= net * g.measure(x) / mass;
                }
                net = net.abs() / mass / norm;
            }
            let weights: Vec<(usize, usize, f64)> = inner.iter().map(|&(k, a, b)| (a, b, edges[k].weight)).collect();
            let gaps = tie_gaps(&weights, &fixed, &source, p);
            let mut ok = true;
            for (i, &(k, a, b)) in inner.iter().enumerate() {
                let gap = gaps.as_ref().map_or(f64::INFINITY, |g| g[i]);
                if gap > tie.at(f[members[a]], f[members[b]]) {
                    ok = false;
                    spurious[k] = true;
                }
            }
            if ok {
                worst = worst.max(net);
            } else {
                for &x in members {
                    worst = worst.max(per[x]);
                }
            }
        }
        (worst, spurious)
    }

    fn clusters(&self, f: &mut [f64], tie: Tie, no_merge: &[bool]) -> Clusters {
        let g = self.d.graph();
        let n = f.len();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut fixed: Vec<Option<f64>> = self.pinned.to_vec();
        for (k, e) in g.edges().iter().enumerate() {
            if no_merge[k] || !(self.free[e.u] || self.free[e.v]) || (f[e.u] - f[e.v]).abs() > tie.at(f[e.u], f[e.v]) {
                continue;
            }
            let (ru, rv) = (find(&mut parent, e.u), find(&mut parent, e.v));
            if ru == rv {
                continue;
            }
            match (fixed[ru], fixed[rv]) {
                (Some(a), Some(b)) if a != b => continue,
                (a, b) => {
                    parent[rv] = ru;
                    fixed[ru] = a.or(b);
                }
            }
        }
        let mut root = vec![0; n];
        let mut var = vec![None; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for x in 0..n {
            root[x] = find(&mut parent, x);
        }
        for x in 0..n {
            let r = root[x];
            if !self.free[x] {
                continue;
            }
            if let Some(v) = fixed[r] {
                f[x] = v;
                continue;
            }
            let k = *var[r].get_or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[k].push(x);
        }
        for m in &members {
            let mean = m.iter().map(|&x| f[x]).sum::<f64>() / m.len() as f64;
            for &x in m {
                f[x] = mean;
            }
        }
        Clusters { root, var, members }
    }

    /// Join the closest adjacent clusters when that lowers the residual.
    ///
    /// For `p < 2` Newton approaches an exact tie only sublinearly, so a tie
    /// in the minimizer may never come within the merge tolerance by itself.
    fn snap(&self, f: &[f64], p: f64, tie: Tie, no_merge: &[bool], res: f64) -> Option<Vec<f64>> {
        let g = self.d.graph();
        let edges = g.edges();
        let mut probe = f.to_vec();
        let cl = self.clusters(&mut probe, tie, no_merge);
        let mut candidates: Vec<(f64, usize)> = edges
            .iter()
            .enumerate()
            .filter(|(k, e)| !no_merge[*k] && cl.root[e.u] != cl.root[e.v] && (self.free[e.u] || self.free[e.v]))
            .map(|(k, e)| ((probe[e.u] - probe[e.v]).abs(), k))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, k) in candidates.iter().take(3) {
            let e = &edges[k];
            let (ru, rv) = (cl.root[e.u], cl.root[e.v]);
            let joined: Vec<usize> = (0..f.len()).filter(|&x| cl.root[x] == ru || cl.root[x] == rv).collect();
            let target = match joined.iter().find(|&&x| !self.free[x]) {
                Some(&x) => probe[x],
                None => {
                    let mass: f64 = joined.iter().map(|&x| g.measure(x)).sum();
                    joined.iter().map(|&x| g.measure(x) * probe[x]).sum::<f64>() / mass
                }
            };
            let mut trial = probe.clone();
            for &x in &joined {
                if self.free[x] {
                    trial[x] = target;
                }
            }
            let cl2 = self.clusters(&mut trial, tie, no_merge);
            let (_, per, flux) = self.vertex_residual(&trial, p);
            let (r2, _) = self.cluster_residual(&trial, p, tie, &cl2, &per, &flux);
            if r2 < res {
                return Some(trial);
            }
        }
        None
    }

    /// Gradient and Hessian of the energy in the cluster variables.
    fn assemble(&self, f: &[f64], p: f64, tie: Tie, cl: &Clusters) -> (DVector<f64>, DMatrix<f64>) {
        let k = cl.members.len();
        let var_of = |x: usize| if self.free[x] { cl.var[cl.root[x]] } else { None };
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for e in self.d.graph().edges() {
            let (vu, vv) = (var_of(e.u), var_of(e.v));
            if vu.is_some() && vu == vv {
                continue;
            }
            let t = f[e.u] - f[e.v];
            let gr = p * e.weight * phi(t, p);
            let floor = tie.at(f[e.u], f[e.v]).max(1e-12 * f[e.u].abs().max(f[e.v].abs())).max(f64::MIN_POSITIVE);
            let c = p * (p - 1.0) * e.weight * t.abs().max(floor).powf(p - 2.0);
            if let Some(i) = vu {
                grad[i] += gr;
                hess[(i, i)] += c;
            }
            if let Some(j) = vv {
                grad[j] -= gr;
                hess[(j, j)] += c;
            }
            if let (Some(i), Some(j)) = (vu, vv) {
                hess[(i, j)] -= c;
                hess[(j, i)] -= c;
            }
        }
        (grad, hess)
    }

    /// Damped Newton on the clustered problem. Returns the minimizer, the
    /// iteration count and the final residual.
    fn newton(&self, mut f: Vec<f64>, p: f64, opts: &CapacityOptions) -> std::result::Result<(Vec<f64>, usize, f64), ConvergenceError> {
        let g = self.d.graph();
        let edges = g.edges();
        let mut no_merge = vec![false; edges.len()];
        let tie = Tie::new(self.d, p, opts.residual_tol, self.scale);
        let mut last_decrease = f64::INFINITY;
        let mut best = (f64::INFINITY, f.clone(), f64::INFINITY);
        let (mut stall, mut reties) = (0usize, 0usize);
        let (mut mark, mut mark_energy) = (f64::INFINITY, f64::INFINITY);
        for iter in 0..opts.max_iterations {
            let cl = self.clusters(&mut f, tie, &no_merge);
            let energy = energy_of(self.d, &f, p);
            let (_, per, flux) = self.vertex_residual(&f, p);
            let (res, spurious) = self.cluster_residual(&f, p, tie, &cl, &per, &flux);
            if res < best.2 || (res == best.2 && energy < best.0) {
                best = (energy, f.clone(), res);
            }
            if res < 0.5 * mark {
                (mark, mark_energy, stall) = (res, energy, 0);
            } else {
                stall += 1;
                if stall >= STALL && mark_energy - energy > 1e-10 * energy.abs() {
                    // Slow but real progress.
                    (mark_energy, stall) = (energy, 0);
                }
            }
            if res <= opts.residual_tol && last_decrease < opts.energy_rtol {
                return Ok((f, iter, res));
            }
            let k = cl.members.len();
            let (grad, hess) = self.assemble(&f, p, tie, &cl);
            let cluster_res = (0..k)
                .map(|i| {
                    let mass: f64 = cl.members[i].iter().map(|&x| g.measure(x)).sum();
                    grad[i].abs() / (p * mass)
                })
                .fold(0.0f64, f64::max)
                / self.scale.powf(p - 1.0);
            let stalled = stall >= STALL;
            if res > opts.residual_tol && (stalled || cluster_res <= 0.1 * opts.residual_tol) {
                // The clustered problem is solved but a merged vertex is not
                // balanced on its own: the tie was spurious.
                let mut split = false;
                for (ei, e) in edges.iter().enumerate() {
                    let (ru, rv) = (cl.root[e.u], cl.root[e.v]);
                    if ru == rv && spurious[ei] && !no_merge[ei] {
                        no_merge[ei] = true;
                        split = true;
                    }
                }
                if split {
                    last_decrease = f64::INFINITY;
                    (stall, mark, mark_energy) = (0, f64::INFINITY, f64::INFINITY);
                    continue;
                }
            }
            if stalled {
                if res <= opts.residual_tol {
                    return Ok((f, iter, res));
                }
                if let Some(snapped) = self.snap(&f, p, tie, &no_merge, res) {
                    f = snapped;
                    (stall, mark, mark_energy) = (0, f64::INFINITY, f64::INFINITY);
                    last_decrease = f64::INFINITY;
                    continue;
                }
                // A split made before the outer problem settled may have been
                // premature; let edges that closed up again tie.
                let mut retied = false;
                if reties < 8 {
                    for (ei, e) in edges.iter().enumerate() {
                        if no_merge[ei] && (f[e.u] - f[e.v]).abs() <= tie.at(f[e.u], f[e.v]) {
                            no_merge[ei] = false;
                            retied = true;
                        }
                    }
                }
                if !retied {
                    break;
                }
                reties += 1;
                (stall, mark, mark_energy) = (0, f64::INFINITY, f64::INFINITY);
                last_decrease = f64::INFINITY;
                continue;
            }
            if k == 0 {
                if res <= opts.residual_tol {
                    return Ok((f, iter, res));
                }
                break;
            }
            let step = newton_step(hess, &grad);
            let mut slope = grad.dot(&step);
            let step = if slope < 0.0 {
                step
            } else {
                slope = -grad.norm_squared();
                -grad.clone()
            };
            let mut t = 1.0;
            let mut accepted = None;
            let mut trial = f.clone();
            for _ in 0..60 {
                for (i, m) in cl.members.iter().enumerate() {
                    for &x in m {
                        trial[x] = f[x] + t * step[i];
                    }
                }
                let e1 = energy_of(self.d, &trial, p);
                if e1 <= energy + 1e-4 * t * slope && e1 < energy {
                    accepted = Some(e1);
                    break;
                }
                // Energy differences at roundoff level say nothing; judge
                // the step by the gradient instead.
                if (e1 - energy).abs() <= 1e-13 * energy.abs() && self.assemble(&trial, p, tie, &cl).0.norm() < grad.norm() {
                    accepted = Some(e1.min(energy));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(e1) => {
                    last_decrease = (energy - e1) / energy.max(f64::MIN_POSITIVE);
                    std::mem::swap(&mut f, &mut trial);
                }
                None => {
                    if res <= opts.residual_tol {
                        return Ok((f, iter, res));
                    }
                    stall = STALL;
                }
            }
        }
        Err(ConvergenceError {
            solver: "capacity",
            iterations: opts.max_iterations,
            residual: best.2,
            best_value: best.0,
            best_iterate: best.1,
        })
    }
}

/// Per-edge `|δ_a - δ_b|` for the offsets of [`tie_offsets`].
///
/// For `p < 2` the offsets are found from the dual problem in edge flows,
/// `min Σ w^{-1/(p-1)} |q|^{p'} / p'` under conservation, which is smooth
/// where the primal is not: an edge carrying almost no flux has an offset far
/// below any Hessian floor.
pub(crate) fn tie_gaps(edges: &[(usize, usize, f64)], fixed: &[bool], c: &[f64], p: f64) -> Option<Vec<f64>> {
    if p >= 2.0 {
        let d = tie_offsets(edges, fixed, c, p)?;
        return Some(edges.iter().map(|&(a, b, _)| (d[a] - d[b]).abs()).collect());
    }
    let n = c.len();
    let s = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if s == 0.0 || edges.is_empty() {
        return Some(vec![0.0; edges.len()]);
    }
    // Fixed vertices form one ground node; without any, vertex 0 grounds.
    let ground = if fixed.iter().any(|&b| b) { fixed.to_vec() } else { (0..n).map(|x| x == 0).collect() };
    let rows: Vec<usize> = (0..n).filter(|&x| !ground[x]).collect();
    let mut row = vec![usize::MAX; n];
    for (i, &x) in rows.iter().enumerate() {
        row[x] = i;
    }
    // Ground-to-ground edges carry no flow and are left out.
    let active: Vec<usize> = (0..edges.len()).filter(|&e| !(ground[edges[e].0] && ground[edges[e].1])).collect();
    let m = active.len();
    let mut gaps = vec![0.0; edges.len()];
    if rows.is_empty() {
        return Some(gaps);
    }
    // Flux into `a` along edge `(a, b)` is `q`, into `b` is `-q`; balance is `A q = -c`.
    let mut inc = DMatrix::<f64>::zeros(rows.len(), m);
    for (i, &e) in active.iter().enumerate() {
        let (a, b, _) = edges[e];
        if row[a] != usize::MAX {
            inc[(row[a], i)] += 1.0;
        }
        if row[b] != usize::MAX {
            inc[(row[b], i)] -= 1.0;
        }
    }
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&x| -c[x] / s));
    let q0 = inc.transpose() * (&inc * inc.transpose()).cholesky()?.solve(&rhs);
    // Cycle space: kernel of the incidence matrix.
    let eig = (inc.transpose() * &inc).symmetric_eigen();
    let cols: Vec<DVector<f64>> =
        (0..m).filter(|&i| eig.eigenvalues[i].abs() < 1e-9).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
    let null = if cols.is_empty() { DMatrix::<f64>::zeros(m, 0) } else { DMatrix::from_columns(&cols) };
    let dual = p / (p - 1.0);
    let coef: Vec<f64> = active.iter().map(|&e| edges[e].2.powf(-1.0 / (p - 1.0))).collect();
    let objective = |q: &DVector<f64>| -> f64 { (0..m).map(|i| coef[i] * q[i].abs().powf(dual) / dual).sum() };
    let mut z = DVector::<f64>::zeros(null.ncols());
    let mut q = q0.clone();
    for _ in 0..200 {
        if null.ncols() == 0 {
            break;
        }
        let gq = DVector::from_iterator(m, (0..m).map(|i| coef[i] * phi(q[i], dual)));
        let grad = null.transpose() * &gq;
        if grad.amax() <= 1e-13 {
            break;
        }
        let curv = DVector::from_iterator(m, (0..m).map(|i| coef[i] * (dual - 1.0) * q[i].abs().powf(dual - 2.0)));
        let hess = null.transpose() * DMatrix::from_diagonal(&curv) * &null;
        let mut step = newton_step(hess, &grad);
        // The curvature vanishes with the flow; keep steps at the data scale.
        let reach = (&null * &step).amax();
        if reach > 1.0 {
            step /= reach;
        }
        let slope = grad.dot(&step).min(-f64::MIN_POSITIVE);
        let f0 = objective(&q);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let zt = &z + t * &step;
            let qt = &q0 + &null * &zt;
            if objective(&qt) <= f0 + 1e-4 * t * slope {
                z = zt;
                q = qt;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let scale = s.powf(1.0 / (p - 1.0));
    for (i, &e) in active.iter().enumerate() {
        gaps[e] = scale * (q[i].abs() / edges[e].2).powf(1.0 / (p - 1.0));
    }
    Some(gaps)
}

/// Offsets `δ` on a small graph with `Σ_y w φ(δ_y - δ_x) = -c_x` at every
/// unfixed vertex and `δ = 0` at fixed ones; `c` must sum to zero when no
/// vertex is fixed. Solved at unit source scale by damped Newton on the convex
/// functional `Σ w |Δδ|^p / p - Σ c δ`, then rescaled by homogeneity.
fn tie_offsets(edges: &[(usize, usize, f64)], fixed: &[bool], c: &[f64], p: f64) -> Option<Vec<f64>> {
    let n = c.len();
    let s = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if s == 0.0 {
        return Some(vec![0.0; n]);
    }
    let c: Vec<f64> = c.iter().map(|v| v / s).collect();
    // Pin one vertex when none is fixed; the sources are balanced.
    let mut fixed = fixed.to_vec();
    if !fixed.iter().any(|&b| b) {
        fixed[0] = true;
    }
    let var: Vec<Option<usize>> = {
        let mut k = 0;
        fixed
            .iter()
            .map(|&b| {
                (!b).then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect()
    };
    let k = var.iter().flatten().count();
    let objective = |d: &[f64]| -> f64 {
        edges.iter().map(|&(a, b, w)| w * (d[a] - d[b]).abs().powf(p) / p).sum::<f64>()
            - (0..n).map(|x| c[x] * d[x]).sum::<f64>()
    };
    let mut d = vec![0.0; n];
    for _ in 0..200 {
        let mut grad = DVector::<f64>::zeros(k);
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for x in 0..n {
            if let Some(i) = var[x] {
                grad[i] -= c[x];
            }
        }
        for &(a, b, w) in edges {
            let t = d[a] - d[b];
            let gr = w * phi(t, p);
            let h = (p - 1.0) * w * t.abs().max(1e-8).powf(p - 2.0);
            if let Some(i) = var[a] {
                grad[i] += gr;
                hess[(i, i)] += h;
            }
            if let Some(j) = var[b] {
                grad[j] -= gr;
                hess[(j, j)] += h;
            }
            if let (Some(i), Some(j)) = (var[a], var[b]) {
                hess[(i, j)] -= h;
                hess[(j, i)] -= h;
            }
        }
        if grad.amax() <= 1e-8 {
            let scale = s.powf(1.0 / (p - 1.0));
            return Some(d.iter().map(|v| v * scale).collect());
        }
        let step = newton_step(hess, &grad);
        let slope = grad.dot(&step).min(-f64::MIN_POSITIVE);
        let f0 = objective(&d);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|x| d[x] + var[x].map_or(0.0, |i| t * step[i])).collect();
            if objective(&trial) <= f0 + 1e-4 * t * slope + 1e-14 * f0.abs() {
                d = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    None
}

/// Solve `H s = -g`, shifting `H` towards a multiple of the identity until it factors.
fn newton_step(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let k = grad.len();
    let diag_max = (0..k).map(|i| hess[(i, i)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut h = hess.clone();
        for i in 0..k {
            h[(i, i)] += shift;
        }
        if let Some(ch) = h.cholesky() {
            let s = ch.solve(&(-grad));
            if s.iter().all(|v| v.is_finite()) {
                return s;
            }
        }
        shift = if shift == 0.0 { 1e-14 * diag_max } else { shift * 100.0 };
    }
    -grad.clone() / diag_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::p_energy;
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
    fn path_end_to_end_capacity() {
        let d = path_domain(4);
        let a = d.subset(&["0"]).unwrap();
        let b = d.subset(&["4"]).unwrap();
        for q in [1.2, 1.5, 2.0, 3.0, 4.0] {
            let r = capacity(&d, &a, &b, p(q)).unwrap();
            let expected = 4f64.powf(1.0 - q);
            let v = r.value.finite().unwrap();
            assert!((v - expected).abs() <= 1e-9 * expected, "p={q}: {v}");
            let f = r.potential.unwrap();
            for i in 0..d.len() {
                let x: f64 = d.graph().id(i).parse().unwrap();
                assert!((f[i] - (1.0 - x / 4.0)).abs() < 1e-8);
            }
        }
        let r = capacity(&d, &a, &b, p(3.0)).unwrap();
        assert!((r.value.finite().unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn triangle_capacity_is_one_and_a_half() {
        let g = generate(&Family::Complete(3)).unwrap();
        let d = Domain::closed(&g).unwrap();
        let r = capacity(&d, &d.subset(&["0"]).unwrap(), &d.subset(&["1"]).unwrap(), p(2.0)).unwrap();
        assert!((r.value.finite().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn conventions_for_empty_and_overlapping_sets() {
        let d = path_domain(4);
        let a = d.subset(&["1"]).unwrap();
        let r = capacity(&d, &VertexSubset::empty(), &a, p(2.0)).unwrap();
        assert_eq!(r.value, CapValue::Finite(0.0));
        assert!(r.potential.is_none());
        let r = capacity(&d, &a, &a, p(2.0)).unwrap();
        assert_eq!(r.value, CapValue::Infinite);
    }

    #[test]
    fn capacity_to_boundary_on_path() {
        let d = path_domain(4);
        let mid = capacity_to_boundary(&d, &d.subset(&["2"]).unwrap(), p(2.0)).unwrap();
        assert!((mid.value.finite().unwrap() - 1.0).abs() < 1e-12);
        let all = capacity_to_boundary(&d, &d.interior(), p(2.0)).unwrap();
        assert!((all.value.finite().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(capacity_to_boundary(&d, &VertexSubset::empty(), p(2.0)).unwrap().value, CapValue::Finite(0.0));
        assert!(capacity_to_boundary(&d, &d.subset(&["0"]).unwrap(), p(2.0)).is_err());
    }

    #[test]
    fn symmetric_ties_converge_for_small_p() {
        // Two free vertices of K4 sit at the same value by symmetry.
        let g = generate(&Family::Complete(4)).unwrap();
        let d = Domain::closed(&g).unwrap();
        let a = d.subset(&["0"]).unwrap();
        let b = d.subset(&["1"]).unwrap();
        for q in [1.2, 1.5, 3.0, 4.0] {
            let r = capacity(&d, &a, &b, p(q)).unwrap();
            let f = r.potential.as_ref().unwrap();
            assert!((f[2] - 0.5).abs() < 1e-9 && (f[3] - 0.5).abs() < 1e-9);
            // direct edge plus two series paths through a half-way vertex
            let expected = 1.0 + 2.0 * 2.0 * 0.5f64.powf(q);
            assert!((r.value.finite().unwrap() - expected).abs() < 1e-9, "p={q}");
            assert!(r.residual <= 1e-8);
        }
    }

    #[test]
    fn value_matches_energy_of_potential() {
        let g = generate(&"random(9,0.5,0.5,2,3,0.5,2)".parse::<Family>().unwrap()).unwrap();
        let d = Domain::closed(&g).unwrap();
        let a = VertexSubset::new(vec![0, 4]);
        let b = VertexSubset::new(vec![7]);
        for q in [1.2, 1.5, 2.0, 3.0, 4.0] {
            for warm in [true, false] {
                let opts = CapacityOptions { linear_warm_start: warm, ..Default::default() };
                let r = capacity_with(&d, &a, &b, p(q), &opts).unwrap();
                let f = r.potential.unwrap();
                let v = r.value.finite().unwrap();
                assert!((p_energy(&d, &f, p(q)) - v).abs() <= 1e-9 * v);
                assert!(f.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
                assert!(r.residual <= 1e-8, "p={q} residual {}", r.residual);
            }
        }
    }

    #[test]
    fn half_line_capacities_decrease() {
        let res = capacity_infinite(InfiniteFamily::HalfLine, &["0"], p(2.0), &[2, 4, 8]).unwrap();
        for &(r, v) in &res.points {
            assert!((v - 1.0 / r as f64).abs() < 1e-12);
        }
        assert!(res.is_monotone(1e-10));
        assert!((res.last_gap - 0.125).abs() < 1e-12);
    }

    #[test]
    fn harmonic_extension_of_boundary_data() {
        let d = path_domain(4);
        let u = Potential::from_fn(&d, |i| if d.graph().id(i) == "4" { 2.0 } else { -1.0 });
        for q in [1.5, 2.0, 3.0] {
            let h = harmonic_extension(&d, &u, p(q)).unwrap();
            for i in 0..d.len() {
                let x: f64 = d.graph().id(i).parse().unwrap();
                assert!((h.potential[i] - (-1.0 + 3.0 * x / 4.0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tie_gaps_match_single_edge_and_tolerate_idle_edges() {
        for q in [1.2, 1.5, 3.0] {
            let g = tie_gaps(&[(0, 1, 2.0)], &[false, true], &[0.5, 0.0], q).unwrap();
            assert!((g[0] - 0.25f64.powf(1.0 / (q - 1.0))).abs() < 1e-9, "{q} {g:?}");
        }
        let edges = [(0, 1, 1.82), (0, 2, 1.60), (1, 2, 0.71), (1, 3, 0.63)];
        let src = [-2.0776e-4, 4.19e-9, 2.0776e-4 - 4.19e-9 - 3.34e-9, 3.34e-9];
        let g = tie_gaps(&edges, &[false; 4], &src, 1.2).unwrap();
        assert!(g.iter().all(|&x| x < 1e-15), "{g:?}");
    }
}
