use super::{VertexSubset, WeightedGraph};
use crate::error::{invalid, Error, Result};

/// `δΩ = { y ∉ Ω : y ∼ x for some x ∈ Ω }`.
pub fn vertex_boundary(g: &WeightedGraph, omega: &VertexSubset) -> Result<VertexSubset> {
    if omega.is_empty() {
        return Err(invalid("omega must be nonempty"));
    }
    omega.check_within(g.len())?;
    let inside = omega.mask(g.len());
    let mut boundary = vec![false; g.len()];
    for x in omega.iter() {
        for &(y, _) in g.neighbors(x) {
            if !inside[y] {
                boundary[y] = true;
            }
        }
    }
    Ok(VertexSubset::from_mask(&boundary))
}

/// A finite domain `Ω` together with its closure and boundary graph `G_Ω`.
///
/// The stored graph lives on `Ω̄` only and keeps the edges `E(Ω, Ω̄)`;
/// edges joining two boundary vertices are dropped. Vertex indices in a
/// domain are local to `Ω̄` and follow the same lexicographic id order as
/// the host graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    graph: WeightedGraph,
    interior: Vec<bool>,
    host_index: Vec<usize>,
}

/// Build the domain of `omega` inside `g`.
pub fn build_domain(g: &WeightedGraph, omega: &VertexSubset) -> Result<Domain> {
    let boundary = vertex_boundary(g, omega)?;
    let interior_host = omega.mask(g.len());
    let closure = omega.union(&boundary).mask(g.len());
    if !g.is_connected_on(&closure) {
        return Err(Error::DomainDisconnected);
    }
    let (graph, host_index) = g.restrict(&closure, |u, v| interior_host[u] || interior_host[v]);
    let interior = host_index.iter().map(|&i| interior_host[i]).collect();
    Ok(Domain { graph, interior, host_index })
}

impl Domain {
    /// The closed-graph domain `Ω = V`, `δΩ = ∅`.
    pub fn closed(g: &WeightedGraph) -> Result<Domain> {
        build_domain(g, &g.all_vertices())
    }

    /// Convenience wrapper resolving `omega` by vertex id.
    pub fn from_ids<S: AsRef<str>>(g: &WeightedGraph, omega: &[S]) -> Result<Domain> {
        build_domain(g, &g.subset(omega)?)
    }

    /// The boundary graph `G_Ω` on `Ω̄`.
    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    /// Number of vertices of `Ω̄`.
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn interior(&self) -> VertexSubset {
        VertexSubset::from_mask(&self.interior)
    }

    pub fn boundary(&self) -> VertexSubset {
        (0..self.len()).filter(|&i| !self.interior[i]).collect()
    }

    pub fn closure(&self) -> VertexSubset {
        self.graph.all_vertices()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn boundary_count(&self) -> usize {
        self.len() - self.interior_count()
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_count() == 0
    }

    /// Index of each closure vertex in the host graph it was built from.
    pub fn host_index(&self) -> &[usize] {
        &self.host_index
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.graph.measure(i)
    }

    pub fn volume(&self, s: &VertexSubset) -> f64 {
        self.graph.volume(s)
    }

    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<VertexSubset> {
        self.graph.subset(ids)
    }

    /// Same domain with measure `m` on `δΩ` and `m / k` on `Ω`.
    pub fn rescale_measure(&self, k: u64) -> Result<Domain> {
        if k < 1 {
            return Err(invalid("rescaling factor must be at least 1"));
        }
        let k = k as f64;
        let measure = (0..self.len())
            .map(|i| if self.interior[i] { self.measure(i) / k } else { self.measure(i) })
            .collect();
        Ok(Domain {
            graph: self.graph.with_measure(measure)?,
            interior: self.interior.clone(),
            host_index: self.host_index.clone(),
        })
    }

    /// Same domain with every edge weight multiplied by `t`.
    pub fn scale_weights(&self, t: f64) -> Result<Domain> {
        Ok(Domain { graph: self.graph.scale_weights(t)?, ..self.clone() })
    }

    /// Same domain with a replacement measure on `Ω̄`.
    pub fn with_measure(&self, measure: Vec<f64>) -> Result<Domain> {
        Ok(Domain { graph: self.graph.with_measure(measure)?, ..self.clone() })
    }

    /// Rebuild the domain from its own boundary graph, for idempotence checks.
    pub fn rederive(&self) -> Result<Domain> {
        let d = build_domain(&self.graph, &self.interior())?;
        Ok(Domain { host_index: self.host_index.clone(), ..d })
    }
}
