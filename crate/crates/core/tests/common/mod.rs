//! Independent reference computations for the integration tests.
//!
//! Nothing here calls the library solvers: capacities at p = 2 come from a
//! dense linear solve, eigenvalues at p = 2 from a dense symmetric eigensolver
//! on the reduced pencil, and small nonlinear capacities from a grid search.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pcap_core::capacity::capacity;
use pcap_core::eigen::Kind;
use pcap_core::energy::Exponent;
use pcap_core::graph::{generate, Domain, Family, VertexSubset};

pub fn p(x: f64) -> Exponent {
    Exponent::new(x).unwrap()
}

/// `Ω = {1, …, n-1}` in the path `0 – 1 – … – n`.
pub fn path_domain(n: usize) -> Domain {
    let g = generate(&Family::Path(n)).unwrap();
    let omega: Vec<String> = (1..n).map(|i| i.to_string()).collect();
    Domain::from_ids(&g, &omega).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn laplacian(d: &Domain) -> DMatrix<f64> {
    let n = d.len();
    let mut l = DMatrix::zeros(n, n);
    for e in d.graph().edges() {
        l[(e.u, e.u)] += e.weight;
        l[(e.v, e.v)] += e.weight;
        l[(e.u, e.v)] -= e.weight;
        l[(e.v, e.u)] -= e.weight;
    }
    l
}

fn block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `Cap_2(A, B)` by solving the Dirichlet problem for the graph Laplacian.
pub fn p2_capacity(d: &Domain, a: &VertexSubset, b: &VertexSubset) -> f64 {
    let n = d.len();
    let l = laplacian(d);
    let mut f = vec![0.0; n];
    for x in a.iter() {
        f[x] = 1.0;
    }
    let free: Vec<usize> = (0..n).filter(|&x| !a.contains(x) && !b.contains(x)).collect();
    let fixed: Vec<usize> = (0..n).filter(|&x| a.contains(x) || b.contains(x)).collect();
    if !free.is_empty() {
        let rhs = -(block(&l, &free, &fixed) * DVector::from_iterator(fixed.len(), fixed.iter().map(|&x| f[x])));
        let sol = block(&l, &free, &free).lu().solve(&rhs).expect("free block is nonsingular");
        for (i, &x) in free.iter().enumerate() {
            f[x] = sol[i];
        }
    }
    d.graph().edges().iter().map(|e| e.weight * (f[e.u] - f[e.v]).powi(2)).sum()
}

/// The p = 2 eigenvalue of `kind`: massless vertices are eliminated by a
/// Schur complement and the pencil `(K, M)` is reduced to `M^{-1/2} K M^{-1/2}`.
pub fn p2_eigenvalue(d: &Domain, kind: Kind) -> f64 {
    let n = d.len();
    let l = laplacian(d);
    let massive = |x: usize| match kind {
        Kind::Dirichlet | Kind::Neumann => d.is_interior(x),
        Kind::Steklov => !d.is_interior(x),
    };
    let pinned = |x: usize| kind == Kind::Dirichlet && !d.is_interior(x);
    let s: Vec<usize> = (0..n).filter(|&x| massive(x) && !pinned(x)).collect();
    let z: Vec<usize> = (0..n).filter(|&x| !massive(x) && !pinned(x)).collect();
    let mut k = block(&l, &s, &s);
    if !z.is_empty() {
        let lzs = block(&l, &z, &s);
        let x = block(&l, &z, &z).lu().solve(&lzs).expect("massless block is nonsingular");
        k -= lzs.transpose() * x;
    }
    let scale: Vec<f64> = s.iter().map(|&x| 1.0 / d.measure(x).sqrt()).collect();
    let a = DMatrix::from_fn(s.len(), s.len(), |i, j| scale[i] * 0.5 * (k[(i, j)] + k[(j, i)]) * scale[j]);
    let mut values: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    match kind {
        Kind::Dirichlet => values[0],
        Kind::Neumann | Kind::Steklov => values[1],
    }
}

/// `E_p` of `f` on the boundary graph.
pub fn energy(d: &Domain, f: &[f64], q: f64) -> f64 {
    d.graph().edges().iter().map(|e| e.weight * (f[e.u] - f[e.v]).abs().powf(q)).sum()
}

/// `Cap_p(A, B)` for at most three free vertices by a shrinking grid search
/// over `[0, 1]^k`.
pub fn grid_capacity(d: &Domain, a: &VertexSubset, b: &VertexSubset, q: f64) -> f64 {
    let n = d.len();
    let free: Vec<usize> = (0..n).filter(|&x| !a.contains(x) && !b.contains(x)).collect();
    assert!(free.len() <= 3, "grid search is for tiny problems");
    let mut f = vec![0.0; n];
    for x in a.iter() {
        f[x] = 1.0;
    }
    let k = free.len();
    let mut center = vec![0.5; k];
    let mut radius = 0.5;
    let steps = 20i32;
    for _ in 0..40 {
        let mut best = (f64::INFINITY, center.clone());
        let total = (steps as usize + 1).pow(k as u32);
        for idx in 0..total {
            let mut rest = idx;
            let mut trial = center.clone();
            for t in trial.iter_mut() {
                let i = (rest % (steps as usize + 1)) as i32;
                rest /= steps as usize + 1;
                *t = (*t + radius * (2.0 * i as f64 / steps as f64 - 1.0)).clamp(0.0, 1.0);
            }
            for (j, &x) in free.iter().enumerate() {
                f[x] = trial[j];
            }
            let e = energy(d, &f, q);
            if e < best.0 {
                best = (e, trial);
            }
        }
        center = best.1;
        radius *= 0.5;
    }
    for (j, &x) in free.iter().enumerate() {
        f[x] = center[j];
    }
    energy(d, &f, q)
}

/// Every unordered pair of disjoint nonempty subsets of `host`.
pub fn all_pairs(host: &[usize]) -> Vec<(VertexSubset, VertexSubset)> {
    let h = host.len();
    let mut out = Vec::new();
    // Each vertex goes to A, B or neither; keep the assignment where the
    // first assigned vertex is in A.
    for code in 0..3usize.pow(h as u32) {
        let mut rest = code;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &x in host {
            match rest % 3 {
                1 => a.push(x),
                2 => b.push(x),
                _ => {}
            }
            rest /= 3;
        }
        if a.is_empty() || b.is_empty() || a.iter().min() > b.iter().min() {
            continue;
        }
        out.push((VertexSubset::new(a), VertexSubset::new(b)));
    }
    out
}

/// `inf Cap(A, B) / (ν(A) ∧ ν(B))` over pairs inside `host`, skipping pairs
/// with zero normalizer.
pub fn naive_pair_constant(d: &Domain, host: &[usize], nu: &[f64], q: f64) -> f64 {
    let mut best = f64::INFINITY;
    for (a, b) in all_pairs(host) {
        let den = a.iter().map(|x| nu[x]).sum::<f64>().min(b.iter().map(|x| nu[x]).sum::<f64>());
        if den <= 0.0 {
            continue;
        }
        let cap = capacity(d, &a, &b, p(q)).unwrap().value.finite().unwrap();
        best = best.min(cap / den);
    }
    best
}

/// `inf_{A ⊆ Ω} Cap(A, δΩ) / m(A)` by enumeration.
pub fn naive_dirichlet_constant(d: &Domain, q: f64) -> f64 {
    let interior: Vec<usize> = (0..d.len()).filter(|&x| d.is_interior(x)).collect();
    let boundary = VertexSubset::new((0..d.len()).filter(|&x| !d.is_interior(x)).collect());
    let mut best = f64::INFINITY;
    for bits in 1u32..(1 << interior.len()) {
        let a = VertexSubset::new(interior.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &x)| x).collect());
        let cap = capacity(d, &a, &boundary, p(q)).unwrap().value.finite().unwrap();
        let vol: f64 = a.iter().map(|x| d.measure(x)).sum();
        best = best.min(cap / vol);
    }
    best
}
