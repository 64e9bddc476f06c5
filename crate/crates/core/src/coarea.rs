//! Coarea-type integral of level-set capacities and its constants.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::capacity;
use crate::energy::{p_energy, Exponent, Potential};
use crate::error::{invalid, Error, Result};
use crate::graph::{Domain, VertexSubset};

/// `C(a, p) = 2p ln a / (a-1)^p + 2 (a^{p/(p-1)} - 1)^{1-p}`.
pub fn coarea_constant(a: f64, p: Exponent) -> Result<f64> {
    if !(a.is_finite() && a > 1.0) {
        return Err(invalid(format!("coarea parameter must exceed 1, got {a}")));
    }
    let p = p.get();
    Ok(2.0 * p * a.ln() / (a - 1.0).powf(p) + 2.0 * (a.powf(p / (p - 1.0)) - 1.0).powf(1.0 - p))
}

/// `C_p = p ln 4 + (2 - 2^{1/(1-p)})^{1-p}`, equal to `C(2, p)`.
pub fn c_p(p: Exponent) -> f64 {
    let p = p.get();
    p * 4f64.ln() + (2.0 - 2f64.powf(1.0 / (1.0 - p))).powf(1.0 - p)
}

/// `M_t = { x : |f(x)| ≥ t }`.
pub fn level_set(f: &Potential, t: f64) -> VertexSubset {
    f.values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= t)
        .map(|(i, _)| i)
        .collect()
}

/// Both sides of the coarea inequality for one potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoareaCheck {
    /// `∫_0^∞ Cap_p(M_{at}, M_t^c) d(t^p)`.
    pub integral: f64,
    pub energy: f64,
    pub constant: f64,
    /// `constant · energy - integral`.
    pub slack: f64,
}

impl CoareaCheck {
    pub fn holds(&self) -> bool {
        self.slack >= -1e-9 * (1.0 + self.energy)
    }
}

/// Evaluate the level-set capacity integral exactly. The integrand is
/// constant between consecutive breakpoints `{|f(x)|} ∪ {|f(x)|/a}`.
pub fn coarea_integral(d: &Domain, f: &Potential, a: f64, p: Exponent) -> Result<CoareaCheck> {
    coarea_integral_refined(d, f, a, p, &[])
}

/// Same as [`coarea_integral`] with additional breakpoints, which must not
/// change the result.
pub fn coarea_integral_refined(d: &Domain, f: &Potential, a: f64, p: Exponent, extra: &[f64]) -> Result<CoareaCheck> {
    let constant = coarea_constant(a, p)?;
    if f.len() != d.len() {
        return Err(invalid("potential does not match the domain"));
    }
    let mut breaks: Vec<f64> = vec![0.0];
    for v in f.values() {
        breaks.push(v.abs());
        breaks.push(v.abs() / a);
    }
    breaks.extend(extra.iter().copied().filter(|t| t.is_finite() && *t >= 0.0));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut intervals = Vec::new();
    let mut configs: Vec<(VertexSubset, VertexSubset)> = Vec::new();
    let mut seen: HashMap<(VertexSubset, VertexSubset), usize> = HashMap::new();
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let upper = level_set(f, a * mid);
        let lower = VertexSubset::from_mask(&level_set(f, mid).mask(d.len()).iter().map(|b| !b).collect::<Vec<_>>());
        if upper.is_empty() || lower.is_empty() {
            continue;
        }
        let key = (upper, lower);
        let id = *seen.entry(key.clone()).or_insert_with(|| {
            configs.push(key);
            configs.len() - 1
        });
        intervals.push((w[0], w[1], id));
    }
    let caps: Vec<f64> = configs
        .par_iter()
        .map(|(up, low)| {
            let r = capacity(d, up, low, p).map_err(|e| {
                Error::Validation(format!("level-set capacity failed for {} vs {} vertices: {e}", up.len(), low.len()))
            })?;
            r.value
                .finite()
                .ok_or_else(|| Error::Validation("level sets overlap".into()))
        })
        .collect::<Result<_>>()?;
    let q = p.get();
    let integral = intervals
        .iter()
        .map(|&(t0, t1, id)| caps[id] * (t1.powf(q) - t0.powf(q)))
        .sum::<f64>();
    let energy = p_energy(d, f, p);
    Ok(CoareaCheck { integral, energy, constant, slack: constant * energy - integral })
}

/// Both sides of the scalar inequality
/// `u^p/a^p - v^p ≤ (u - v)^p / (a^{p/(p-1)} - 1)^{p-1}` for `u ≥ a v ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn lemma31_check(u: f64, v: f64, a: f64, p: Exponent) -> Result<ScalarCheck> {
    if !(a > 1.0 && a.is_finite()) {
        return Err(invalid(format!("a must exceed 1, got {a}")));
    }
    if !(v >= 0.0 && u >= a * v && u.is_finite()) {
        return Err(invalid(format!("precondition u >= a v >= 0 violated: u={u}, v={v}, a={a}")));
    }
    let q = p.get();
    let lhs = u.powf(q) / a.powf(q) - v.powf(q);
    let rhs = (u - v).powf(q) / (a.powf(q / (q - 1.0)) - 1.0).powf(q - 1.0);
    Ok(ScalarCheck { lhs, rhs, holds: lhs <= rhs + 1e-12 })
}

/// The point `t = a^{p/(p-1)}` where `lhs/rhs` at `v = 1` reaches its maximum 1.
pub fn lemma31_extremal(a: f64, p: Exponent) -> f64 {
    a.powf(p.get() / (p.get() - 1.0))
}

/// `lhs/rhs` at `u = t`, `v = 1`.
pub fn lemma31_ratio(t: f64, a: f64, p: Exponent) -> Result<f64> {
    let c = lemma31_check(t, 1.0, a, p)?;
    Ok(if c.rhs == 0.0 { 0.0 } else { c.lhs / c.rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, Family};

    fn p(x: f64) -> Exponent {
        Exponent::new(x).unwrap()
    }

    #[test]
    fn constants() {
        let expected = 4.0 * 2f64.ln() + 2.0 / 3.0;
        assert!((c_p(p(2.0)) - expected).abs() < 1e-14);
        assert!((c_p(p(2.0)) - 3.4392554).abs() < 1e-7);
        for q in [1.1, 1.5, 2.0, 3.0, 5.0, 8.0] {
            let (x, y) = (c_p(p(q)), coarea_constant(2.0, p(q)).unwrap());
            assert!((x - y).abs() <= 1e-12 * x, "p={q}");
        }
        assert!(coarea_constant(1.01, p(2.0)).unwrap() > coarea_constant(2.0, p(2.0)).unwrap());
        assert!(coarea_constant(1.0, p(2.0)).is_err());
    }

    #[test]
    fn level_sets() {
        let g = generate(&Family::Path(2)).unwrap();
        let d = Domain::from_ids(&g, &["1"]).unwrap();
        let f = Potential::new(&d, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(level_set(&f, 0.0).len(), 3);
        assert!(level_set(&f, 1.5).is_empty());
        assert_eq!(level_set(&f, 0.5).members(), &[1, 2]);
    }

    #[test]
    fn degenerate_potentials_integrate_to_zero() {
        let g = generate(&Family::Path(4)).unwrap();
        let d = Domain::from_ids(&g, &["1", "2", "3"]).unwrap();
        for c in [0.0, 0.7] {
            let r = coarea_integral(&d, &Potential::constant(&d, c), 2.0, p(2.0)).unwrap();
            assert_eq!(r.integral, 0.0);
            assert_eq!(r.slack, 0.0);
        }
    }

    #[test]
    fn linear_potential_on_path() {
        let g = generate(&Family::Path(4)).unwrap();
        let d = Domain::from_ids(&g, &["1", "2", "3"]).unwrap();
        let f = Potential::from_fn(&d, |i| 1.0 - d.graph().id(i).parse::<f64>().unwrap() / 4.0);
        let r = coarea_integral(&d, &f, 2.0, p(2.0)).unwrap();
        assert!(r.holds());
        assert!(r.integral > 0.0 && r.integral <= 0.8598);
        let refined = coarea_integral_refined(&d, &f, 2.0, p(2.0), &[0.1, 0.33, 0.61]).unwrap();
        assert!((refined.integral - r.integral).abs() <= 1e-12 * r.integral);
    }

    #[test]
    fn scalar_inequality() {
        let c = lemma31_check(4.0, 1.0, 2.0, p(2.0)).unwrap();
        assert_eq!((c.lhs, c.rhs), (3.0, 3.0));
        assert!(c.holds);
        let z = lemma31_check(0.0, 0.0, 2.0, p(3.0)).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
        assert!(lemma31_check(1.0, 1.0, 2.0, p(2.0)).is_err());
        for q in [1.2, 2.0, 4.0] {
            let t = lemma31_extremal(3.0, p(q));
            assert!((lemma31_ratio(t, 3.0, p(q)).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
