mod common;

use common::p;
use pcap_core::capacity::capacity;
use pcap_core::coarea::{coarea_integral, lemma31_check};
use pcap_core::eigen::{dirichlet_eigenvalue, neumann_eigenvalue, rayleigh_quotient, Kind};
use pcap_core::energy::{p_energy, p_mean, phi, Potential};
use pcap_core::graph::{build_domain, generate, Domain, Family, VertexSubset};
use proptest::prelude::*;

fn random_graph(n: usize, seed: u64) -> pcap_core::graph::WeightedGraph {
    generate(&Family::Random { n, edge_probability: 0.5, weight_range: (0.5, 2.0), measure_range: (0.5, 2.0), seed }).unwrap()
}

fn closed(n: usize, seed: u64) -> Domain {
    Domain::closed(&random_graph(n, seed)).unwrap()
}

/// Split the vertices by a bit mask into disjoint `A`, `B`.
fn split(n: usize, code: u32) -> (VertexSubset, VertexSubset) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for x in 0..n {
        match (code >> (2 * x)) & 3 {
            1 => a.push(x),
            2 => b.push(x),
            _ => {}
        }
    }
    if a.is_empty() {
        a.push(if b.contains(&0) { b.remove(0) } else { 0 });
    }
    if b.is_empty() {
        match (0..n).find(|x| !a.contains(x)) {
            Some(x) => b.push(x),
            None => b.push(a.pop().unwrap()),
        }
    }
    (VertexSubset::new(a), VertexSubset::new(b))
}

fn cap(d: &Domain, a: &VertexSubset, b: &VertexSubset, q: f64) -> f64 {
    capacity(d, a, b, p(q)).unwrap().value.finite().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn capacity_is_symmetric(n in 4usize..8, seed in 0u64..1000, code in any::<u32>(), q in 1.3f64..4.0) {
        let d = closed(n, seed);
        let (a, b) = split(n, code);
        let (x, y) = (cap(&d, &a, &b, q), cap(&d, &b, &a, q));
        prop_assert!((x - y).abs() <= 1e-8 * x.max(y));
    }

    #[test]
    fn capacity_grows_with_the_sets(n in 4usize..8, seed in 0u64..1000, code in any::<u32>(), q in 1.3f64..4.0) {
        let d = closed(n, seed);
        let (a, b) = split(n, code);
        let extra = (0..n).find(|&x| !a.contains(x) && !b.contains(x));
        prop_assume!(extra.is_some());
        let bigger = a.union(&VertexSubset::new(vec![extra.unwrap()]));
        prop_assert!(cap(&d, &a, &b, q) <= cap(&d, &bigger, &b, q) * (1.0 + 1e-9));
    }

    #[test]
    fn capacity_scales_with_weights(n in 4usize..8, seed in 0u64..1000, code in any::<u32>(), q in 1.3f64..4.0, t in 0.1f64..10.0) {
        let d = closed(n, seed);
        let (a, b) = split(n, code);
        let scaled = d.scale_weights(t).unwrap();
        let (x, y) = (cap(&d, &a, &b, q), cap(&scaled, &a, &b, q));
        prop_assert!((y - t * x).abs() <= 1e-8 * y);
    }

    #[test]
    fn equilibrium_energy_is_minimal(n in 4usize..8, seed in 0u64..1000, code in any::<u32>(), q in 1.3f64..4.0, noise in prop::collection::vec(-0.2f64..0.2, 8)) {
        let d = closed(n, seed);
        let (a, b) = split(n, code);
        let r = capacity(&d, &a, &b, p(q)).unwrap();
        let f = r.potential.unwrap();
        let g = Potential::from_fn(&d, |x| if a.contains(x) || b.contains(x) { f[x] } else { f[x] + noise[x] });
        prop_assert!(p_energy(&d, &g, p(q)) >= r.value.finite().unwrap() * (1.0 - 1e-9));
    }

    #[test]
    fn quotients_dominate_the_dirichlet_eigenvalue(n in 5usize..8, seed in 0u64..1000, q in 1.5f64..3.5, raw in prop::collection::vec(-1.0f64..1.0, 8)) {
        let g = random_graph(n, seed);
        let omega: VertexSubset = (0..n - 2).collect();
        let d = build_domain(&g, &omega);
        prop_assume!(d.is_ok());
        let d = d.unwrap();
        let lam = dirichlet_eigenvalue(&d, p(q)).unwrap().value;
        let f = Potential::from_fn(&d, |x| if d.is_interior(x) { raw[x] } else { 0.0 });
        if let Some(rq) = rayleigh_quotient(&d, Kind::Dirichlet, &f, p(q)).unwrap() {
            prop_assert!(rq >= lam * (1.0 - 1e-7));
        }
    }

    #[test]
    fn quotients_dominate_the_neumann_eigenvalue(n in 4usize..7, seed in 0u64..1000, q in 1.5f64..3.5, raw in prop::collection::vec(-1.0f64..1.0, 8)) {
        let d = closed(n, seed);
        let mu = neumann_eigenvalue(&d, p(q)).unwrap().value;
        let f = Potential::from_fn(&d, |x| raw[x]);
        if let Some(rq) = rayleigh_quotient(&d, Kind::Neumann, &f, p(q)).unwrap() {
            prop_assert!(rq >= mu * (1.0 - 1e-7));
        }
    }

    #[test]
    fn coarea_inequality(n in 4usize..8, seed in 0u64..1000, q in 1.2f64..5.0, a in 1.1f64..5.0, raw in prop::collection::vec(-2.0f64..2.0, 8)) {
        let d = closed(n, seed);
        let f = Potential::from_fn(&d, |x| raw[x]);
        let c = coarea_integral(&d, &f, a, p(q)).unwrap();
        prop_assert!(c.holds(), "{:?}", c);
    }

    #[test]
    fn scalar_inequality(q in 1.05f64..8.0, a in 1.01f64..10.0, v in 0.0f64..10.0, extra in 0.0f64..50.0) {
        let u = a * v + extra;
        let c = lemma31_check(u, v, a, p(q)).unwrap();
        prop_assert!(c.holds, "{:?}", c);
    }

    #[test]
    fn p_mean_is_stationary(n in 3usize..8, seed in 0u64..1000, q in 1.1f64..6.0, raw in prop::collection::vec(-3.0f64..3.0, 8)) {
        let d = closed(n, seed);
        let f = Potential::from_fn(&d, |x| raw[x]);
        let all = d.closure();
        let c = p_mean(&d, &f, p(q), &all).unwrap();
        let slope: f64 = all.iter().map(|x| d.measure(x) * phi(c - f[x], q)).sum();
        let scale: f64 = all.iter().map(|x| d.measure(x) * (f[x] - c).abs().powf(q - 1.0)).sum();
        prop_assert!(slope.abs() <= 1e-9 * (1.0 + scale), "slope {slope}");
    }
}
