//! p-energy, p-Laplacian, normal derivative and related functionals on a domain.
//!
//! All edge sums run over the edges of the boundary graph `G_Ω`, each
//! unordered edge counted once.

use crate::error::{invalid, Result};
use crate::graph::{Domain, VertexSubset};

/// An exponent `1 < p < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub fn new(p: f64) -> Result<Exponent> {
        if p.is_finite() && p > 1.0 {
            Ok(Exponent(p))
        } else {
            Err(invalid(format!("exponent must satisfy 1 < p < inf, got {p}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Exponents near 1 or large make the energy badly conditioned.
    pub fn ill_conditioned(self) -> bool {
        self.0 < 1.1 || self.0 > 8.0
    }

    /// `2^p C_p`, the lower-bound denominator of every bracket.
    pub fn lower_constant(self) -> f64 {
        2f64.powf(self.0) * crate::coarea::c_p(self)
    }
}

impl TryFrom<f64> for Exponent {
    type Error = crate::error::Error;

    fn try_from(p: f64) -> Result<Exponent> {
        Exponent::new(p)
    }
}

/// `φ_p(t) = |t|^{p-2} t`, with `φ_p(0) = 0`.
#[inline]
pub fn phi(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(p - 1.0)
    }
}

/// A real function on the closure `Ω̄` of a domain, indexed like the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    values: Vec<f64>,
}

impl Potential {
    pub fn new(d: &Domain, values: Vec<f64>) -> Result<Potential> {
        if values.len() != d.len() {
            return Err(invalid(format!(
                "potential has {} values, domain closure has {} vertices",
                values.len(),
                d.len()
            )));
        }
        Ok(Potential { values })
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Potential {
        Potential { values }
    }

    pub fn from_fn(d: &Domain, f: impl FnMut(usize) -> f64) -> Potential {
        Potential { values: (0..d.len()).map(f).collect() }
    }

    pub fn constant(d: &Domain, c: f64) -> Potential {
        Potential { values: vec![c; d.len()] }
    }

    /// Value at a vertex given by id.
    pub fn at(&self, d: &Domain, id: &str) -> Option<f64> {
        d.graph().index_of(id).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, t: f64) -> Potential {
        Potential { values: self.values.iter().map(|v| v * t).collect() }
    }

    pub fn shifted(&self, c: f64) -> Potential {
        Potential { values: self.values.iter().map(|v| v + c).collect() }
    }
}

impl std::ops::Index<usize> for Potential {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// `E_p(f, f) = Σ_{edges} w |f(y) - f(x)|^p`.
pub fn p_energy(d: &Domain, f: &Potential, p: Exponent) -> f64 {
    energy_of(d, f.values(), p.get())
}

pub(crate) fn energy_of(d: &Domain, f: &[f64], p: f64) -> f64 {
    d.graph()
        .edges()
        .iter()
        .map(|e| e.weight * (f[e.v] - f[e.u]).abs().powf(p))
        .sum()
}

/// `E_p(f, g) = Σ_{edges} w φ_p(f(y) - f(x)) (g(y) - g(x))`.
pub fn mixed_energy(d: &Domain, f: &Potential, g: &Potential, p: Exponent) -> f64 {
    d.graph()
        .edges()
        .iter()
        .map(|e| e.weight * phi(f[e.v] - f[e.u], p.get()) * (g[e.v] - g[e.u]))
        .sum()
}

/// `Δ_p f(x)` in the boundary graph, at any vertex of `Ω̄`.
pub fn boundary_graph_laplacian(d: &Domain, f: &Potential, p: Exponent, x: usize) -> f64 {
    laplacian_at(d, f.values(), p.get(), x)
}

pub(crate) fn laplacian_at(d: &Domain, f: &[f64], p: f64, x: usize) -> f64 {
    let g = d.graph();
    g.neighbors(x).iter().map(|&(y, w)| w * phi(f[y] - f[x], p)).sum::<f64>() / g.measure(x)
}

/// `Δ_p f(x) = (1/m(x)) Σ_y w(x,y) φ_p(f(y) - f(x))` for `x ∈ Ω`.
pub fn p_laplacian(d: &Domain, f: &Potential, p: Exponent, x: usize) -> Result<f64> {
    if x >= d.len() || !d.is_interior(x) {
        return Err(invalid(format!("vertex index {x} is not in the domain interior")));
    }
    Ok(boundary_graph_laplacian(d, f, p, x))
}

/// Outward normal derivative `(1/m(z)) Σ_{x∈Ω} w(x,z) φ_p(f(z) - f(x))` at `z ∈ δΩ`.
pub fn normal_derivative(d: &Domain, f: &Potential, p: Exponent, z: usize) -> Result<f64> {
    if z >= d.len() || d.is_interior(z) {
        return Err(invalid(format!("vertex index {z} is not on the domain boundary")));
    }
    let g = d.graph();
    let sum: f64 = g
        .neighbors(z)
        .iter()
        .filter(|&&(x, _)| d.is_interior(x))
        .map(|&(x, w)| w * phi(f[z] - f[x], p.get()))
        .sum();
    Ok(sum / g.measure(z))
}

/// Absolute defect of the discrete Green identity
/// `-⟨Δ_p f, g⟩_Ω + ⟨∂_n f, g⟩_δΩ = E_p(f, g)`.
pub fn green_residual(d: &Domain, f: &Potential, g: &Potential, p: Exponent) -> f64 {
    let mut lhs = 0.0;
    for x in 0..d.len() {
        let m = d.measure(x);
        if d.is_interior(x) {
            lhs -= boundary_graph_laplacian(d, f, p, x) * g[x] * m;
        } else {
            lhs += normal_derivative(d, f, p, x).expect("boundary vertex") * g[x] * m;
        }
    }
    (lhs - mixed_energy(d, f, g, p)).abs()
}

/// `(Σ_{x∈over} |f(x)|^p m(x))^{1/p}`.
pub fn lp_norm(d: &Domain, f: &Potential, p: Exponent, over: &VertexSubset) -> f64 {
    over.iter()
        .map(|x| f[x].abs().powf(p.get()) * d.measure(x))
        .sum::<f64>()
        .powf(1.0 / p.get())
}

pub fn linf_norm(f: &Potential, over: &VertexSubset) -> f64 {
    over.iter().map(|x| f[x].abs()).fold(0.0, f64::max)
}

/// The minimizer `c*` of `c ↦ Σ_{x∈over} |f(x) - c|^p m(x)`.
pub fn p_mean(d: &Domain, f: &Potential, p: Exponent, over: &VertexSubset) -> Result<f64> {
    if over.is_empty() {
        return Err(invalid("p-mean over an empty set"));
    }
    let values: Vec<f64> = over.iter().map(|x| f[x]).collect();
    let masses: Vec<f64> = over.iter().map(|x| d.measure(x)).collect();
    Ok(weighted_p_mean(&values, &masses, p.get()))
}

/// `Σ m φ_p(c - f)`, the derivative of the p-mean objective up to a factor `p`.
pub(crate) fn p_mean_slope(values: &[f64], masses: &[f64], p: f64, c: f64) -> f64 {
    values.iter().zip(masses).map(|(&v, &m)| m * phi(c - v, p)).sum()
}

/// Safeguarded Newton/bisection for the weighted p-mean. Entries with zero
/// mass are ignored.
pub(crate) fn weighted_p_mean(values: &[f64], masses: &[f64], p: f64) -> f64 {
    let total: f64 = masses.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return values.iter().zip(masses).map(|(v, m)| v * m).sum::<f64>() / total;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&v, &m) in values.iter().zip(masses) {
        if m > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo == hi {
        return lo;
    }
    let slope = |c: f64| p_mean_slope(values, masses, p, c);
    let curvature = |c: f64| -> f64 {
        values
            .iter()
            .zip(masses)
            .map(|(&v, &m)| m * (p - 1.0) * (c - v).abs().powf(p - 2.0))
            .sum()
    };
    // Exact hits on data points matter for p < 2, where the slope is
    // infinitely steep there.
    let mut best = (f64::INFINITY, lo);
    for (&v, &m) in values.iter().zip(masses) {
        if m > 0.0 {
            let s = slope(v).abs();
            if s < best.0 {
                best = (s, v);
            }
        }
    }
    let tol = 1e-12 * (1.0 + total);
    if best.0 <= tol {
        return best.1;
    }
    let mut c = 0.5 * (lo + hi);
    let mut width = hi - lo;
    for _ in 0..200 {
        let s = slope(c);
        if s.abs() < best.0 {
            best = (s.abs(), c);
        }
        if s == 0.0 {
            break;
        }
        if s > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let k = curvature(c);
        let newton = c - s / k;
        let mid = 0.5 * (lo + hi);
        // Bisect whenever Newton failed to halve the bracket.
        let shrunk = hi - lo <= 0.5 * width;
        width = hi - lo;
        c = if shrunk && k.is_finite() && k > 0.0 && newton > lo && newton < hi { newton } else { mid };
        if c == lo || c == hi {
            c = mid;
        }
    }
    for c in [lo, hi] {
        let s = slope(c).abs();
        if s < best.0 {
            best = (s, c);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, Family};

    fn path_domain(n: usize) -> Domain {
        let g = generate(&Family::Path(n)).unwrap();
        let omega: Vec<String> = (1..n).map(|i| i.to_string()).collect();
        Domain::from_ids(&g, &omega).unwrap()
    }

    fn linear(d: &Domain, n: usize) -> Potential {
        Potential::from_fn(d, |i| 1.0 - d.graph().id(i).parse::<f64>().unwrap() / n as f64)
    }

    fn p(x: f64) -> Exponent {
        Exponent::new(x).unwrap()
    }

    #[test]
    fn exponent_range() {
        assert!(Exponent::new(1.0).is_err());
        assert!(Exponent::new(0.5).is_err());
        assert!(Exponent::new(f64::INFINITY).is_err());
        assert!(p(1.05).ill_conditioned());
        assert!(p(9.0).ill_conditioned());
        assert!(!p(2.0).ill_conditioned());
    }

    #[test]
    fn energy_of_linear_potential_on_path() {
        let d = path_domain(4);
        let f = linear(&d, 4);
        assert!((p_energy(&d, &f, p(2.0)) - 0.25).abs() < 1e-15);
        assert!((p_energy(&d, &f, p(3.0)) - 0.0625).abs() < 1e-15);
        assert_eq!(p_energy(&d, &Potential::constant(&d, 3.0), p(2.5)), 0.0);
    }

    #[test]
    fn laplacian_examples() {
        let d = path_domain(4);
        let f = linear(&d, 4);
        for x in d.interior().iter() {
            assert!(p_laplacian(&d, &f, p(3.0), x).unwrap().abs() < 1e-15);
        }
        let d2 = path_domain(2);
        let bump = Potential::new(&d2, vec![0.0, 1.0, 0.0]).unwrap();
        let mid = d2.graph().index_of("1").unwrap();
        assert_eq!(p_laplacian(&d2, &bump, p(2.0), mid).unwrap(), -2.0);
        assert!(p_laplacian(&d2, &bump, p(2.0), 0).is_err());
    }

    #[test]
    fn normal_derivative_examples() {
        let d = path_domain(4);
        let f = linear(&d, 4);
        let z = d.graph().index_of("0").unwrap();
        assert!((normal_derivative(&d, &f, p(2.0), z).unwrap() - 0.25).abs() < 1e-15);
        assert!(normal_derivative(&d, &f, p(2.0), d.graph().index_of("2").unwrap()).is_err());
        let c = Potential::constant(&d, 1.0);
        assert_eq!(normal_derivative(&d, &c, p(1.5), z).unwrap(), 0.0);
        let wiggle = Potential::from_fn(&d, |i| ((i * 7 % 5) as f64).sin());
        for z in d.boundary().iter() {
            let nd = normal_derivative(&d, &wiggle, p(2.7), z).unwrap();
            let lap = boundary_graph_laplacian(&d, &wiggle, p(2.7), z);
            assert!((nd + lap).abs() < 1e-12);
        }
    }

    #[test]
    fn green_identity_holds() {
        let d = path_domain(4);
        let f = Potential::from_fn(&d, |i| (i as f64 * 1.3).cos());
        let g = Potential::from_fn(&d, |i| (i as f64 * 0.7).sin() + 0.2);
        let e = mixed_energy(&d, &f, &g, p(2.5)).abs();
        assert!(green_residual(&d, &f, &g, p(2.5)) <= 1e-10 * (1.0 + e));
        assert_eq!(green_residual(&d, &f, &Potential::constant(&d, 0.0), p(2.5)), 0.0);
    }

    #[test]
    fn norms() {
        let g = generate(&Family::Path(2)).unwrap();
        let d = Domain::from_ids(&g, &["1"]).unwrap();
        let ones = Potential::constant(&d, 1.0);
        assert!((lp_norm(&d, &ones, p(3.0), &d.closure()) - 3f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(lp_norm(&d, &Potential::constant(&d, 0.0), p(3.0), &d.closure()), 0.0);
        let f = Potential::new(&d, vec![-2.0, 1.0, 0.0]).unwrap();
        assert_eq!(linf_norm(&f, &d.closure()), 2.0);
    }

    #[test]
    fn p_mean_examples() {
        assert!((weighted_p_mean(&[0.0, 1.0], &[1.0, 2.0], 2.0) - 2.0 / 3.0).abs() < 1e-15);
        for q in [1.2, 1.5, 3.0, 4.0] {
            assert!((weighted_p_mean(&[0.0, 1.0], &[1.0, 1.0], q) - 0.5).abs() < 1e-12);
        }
        let vals = [0.0, 0.3, 2.0, -1.0];
        let ms = [1.0, 0.5, 2.0, 1.5];
        for q in [1.2, 1.5, 2.0, 3.0, 4.0, 8.0] {
            let c = weighted_p_mean(&vals, &ms, q);
            assert!(p_mean_slope(&vals, &ms, q, c).abs() <= 1e-9 * (1.0 + 5.0), "p={q}");
            let obj = |c: f64| vals.iter().zip(&ms).map(|(v, m)| m * (v - c).abs().powf(q)).sum::<f64>();
            assert!(obj(c) <= obj(c + 1e-6) && obj(c) <= obj(c - 1e-6));
        }
        // A root just below a data point, where plain Newton ping-pongs.
        let vals = [-0.3812516, -0.3719057, 0.1101215, 0.2107775, 0.2117703];
        let c = weighted_p_mean(&vals, &[1.0; 5], 1.2);
        assert!(p_mean_slope(&vals, &[1.0; 5], 1.2, c).abs() <= 1e-9, "{c}");
    }
}
