//! Weighted graph model.
//!
//! A graph is the quadruple `(V, E, w, m)`: vertices carry a positive measure
//! `m`, undirected edges carry a positive symmetric weight `w`. Non-edges have
//! no entry at all. Vertex ids are opaque strings and are stored in
//! lexicographic order, so a vertex index doubles as its canonical rank.

mod domain;
mod generate;
mod io;

pub use domain::{build_domain, vertex_boundary, Domain};
pub use generate::{generate, truncate, truncated_domain, Exhaustion, Family, InfiniteFamily, Truncation};
pub use io::{load_domain, load_graph, parse_domain, parse_graph, save_domain, save_graph, write_graph};

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Smaller endpoint index.
    pub u: usize,
    /// Larger endpoint index.
    pub v: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct WeightedGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    measure: Vec<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: Vec<Edge>,
}

impl PartialEq for WeightedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids && self.measure == other.measure && self.edges == other.edges
    }
}

/// Incremental, validating constructor for [`WeightedGraph`].
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    vertices: BTreeMap<String, f64>,
    edges: BTreeMap<(String, String), f64>,
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '#') {
        return Err(Error::Validation(format!("invalid vertex id {id:?}")));
    }
    Ok(())
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(&mut self, id: impl Into<String>, measure: f64) -> Result<()> {
        let id = id.into();
        check_id(&id)?;
        if !(measure.is_finite() && measure > 0.0) {
            return Err(Error::Validation(format!(
                "vertex {id}: measure must be positive and finite, got {measure}"
            )));
        }
        if self.vertices.insert(id.clone(), measure).is_some() {
            return Err(Error::Validation(format!("duplicate vertex {id}")));
        }
        Ok(())
    }

    pub fn edge(&mut self, a: impl Into<String>, b: impl Into<String>, weight: f64) -> Result<()> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(Error::Validation(format!("self-loop at {a}")));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::Validation(format!(
                "edge {a}-{b}: weight must be positive and finite, got {weight}"
            )));
        }
        let key = if a < b { (a, b) } else { (b, a) };
        if self.edges.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate edge {}-{}", key.0, key.1)));
        }
        self.edges.insert(key, weight);
        Ok(())
    }

    pub fn build(self) -> Result<WeightedGraph> {
        let ids: Vec<String> = self.vertices.keys().cloned().collect();
        let measure: Vec<f64> = self.vertices.values().copied().collect();
        let index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for ((a, b), w) in self.edges {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("edge endpoint {id} is not a declared vertex")))
            };
            let (i, j) = (lookup(&a)?, lookup(&b)?);
            edges.push(Edge { u: i.min(j), v: i.max(j), weight: w });
        }
        Ok(WeightedGraph::from_parts(ids, index, measure, edges))
    }
}

impl WeightedGraph {
    fn from_parts(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        measure: Vec<f64>,
        mut edges: Vec<Edge>,
    ) -> Self {
        edges.sort_by_key(|e| (e.u, e.v));
        let mut adjacency = vec![Vec::new(); ids.len()];
        for e in &edges {
            adjacency[e.u].push((e.v, e.weight));
            adjacency[e.v].push((e.u, e.weight));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_by_key(|&(j, _)| j);
        }
        WeightedGraph { ids, index, measure, adjacency, edges }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.measure[i]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measure
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `w(x, y)`, zero for non-edges.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.adjacency[i][pos].1)
            .unwrap_or(0.0)
    }

    /// Weighted degree `Σ_y w(x, y)`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(_, w)| w).sum()
    }

    /// Resolve a list of vertex ids into a subset of this graph.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<VertexSubset> {
        let mut members = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            members.push(
                self.index_of(id)
                    .ok_or_else(|| invalid(format!("unknown vertex id {id}")))?,
            );
        }
        Ok(VertexSubset::new(members))
    }

    pub fn all_vertices(&self) -> VertexSubset {
        VertexSubset { members: (0..self.len()).collect() }
    }

    /// `m(A) = Σ_{x∈A} m(x)`.
    pub fn volume(&self, subset: &VertexSubset) -> f64 {
        subset.iter().map(|i| self.measure[i]).sum()
    }

    /// `E(A, B)`: edges with one endpoint in `A` and the other in `B`.
    pub fn edge_cut(&self, a: &VertexSubset, b: &VertexSubset) -> Vec<Edge> {
        let (ma, mb) = (a.mask(self.len()), b.mask(self.len()));
        self.edges
            .iter()
            .filter(|e| (ma[e.u] && mb[e.v]) || (ma[e.v] && mb[e.u]))
            .copied()
            .collect()
    }

    /// Connectivity of the subgraph induced on `mask`. The empty set counts as connected.
    pub fn is_connected_on(&self, mask: &[bool]) -> bool {
        let Some(start) = mask.iter().position(|&b| b) else {
            return true;
        };
        let mut seen = vec![false; self.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &self.adjacency[x] {
                if mask[y] && !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        mask.iter().zip(&seen).all(|(&m, &s)| !m || s)
    }

    pub fn is_connected(&self) -> bool {
        self.is_connected_on(&vec![true; self.len()])
    }

    /// Same vertices and edges with a new measure.
    pub fn with_measure(&self, measure: Vec<f64>) -> Result<WeightedGraph> {
        if measure.len() != self.len() {
            return Err(invalid("measure length does not match vertex count"));
        }
        if let Some(bad) = measure.iter().position(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::Validation(format!(
                "vertex {}: measure must be positive",
                self.ids[bad]
            )));
        }
        let mut g = self.clone();
        g.measure = measure;
        Ok(g)
    }

    /// Multiply every edge weight by `t > 0`.
    pub fn scale_weights(&self, t: f64) -> Result<WeightedGraph> {
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid("weight scale must be positive"));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { weight: e.weight * t, ..*e })
            .collect();
        Ok(WeightedGraph::from_parts(
            self.ids.clone(),
            self.index.clone(),
            self.measure.clone(),
            edges,
        ))
    }

    /// Induced structure on `keep`, dropping any edge rejected by `keep_edge`.
    pub(crate) fn restrict(
        &self,
        keep: &[bool],
        keep_edge: impl Fn(usize, usize) -> bool,
    ) -> (WeightedGraph, Vec<usize>) {
        let host: Vec<usize> = (0..self.len()).filter(|&i| keep[i]).collect();
        let mut local = vec![usize::MAX; self.len()];
        for (k, &i) in host.iter().enumerate() {
            local[i] = k;
        }
        let ids: Vec<String> = host.iter().map(|&i| self.ids[i].clone()).collect();
        let index = ids.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
        let measure = host.iter().map(|&i| self.measure[i]).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.u] && keep[e.v] && keep_edge(e.u, e.v))
            .map(|e| Edge { u: local[e.u], v: local[e.v], weight: e.weight })
            .collect();
        (WeightedGraph::from_parts(ids, index, measure, edges), host)
    }
}

/// A set of vertex indices of some host graph or domain, kept sorted.
///
/// Because vertex indices follow the lexicographic id order, the derived
/// `Ord` on the member list is the lexicographic order on sorted id lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(transparent)]
pub struct VertexSubset {
    members: Vec<usize>,
}

impl VertexSubset {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        VertexSubset { members }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        VertexSubset {
            members: mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        }
    }

    /// Members selected by the set bits of `bits`, where bit `k` stands for `positions[k]`.
    pub fn from_bits(bits: u64, positions: &[usize]) -> Self {
        Self::new(
            positions
                .iter()
                .enumerate()
                .filter(|(k, _)| bits >> k & 1 == 1)
                .map(|(_, &i)| i)
                .collect(),
        )
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.members {
            m[i] = true;
        }
        m
    }

    pub fn is_subset(&self, other: &VertexSubset) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }

    pub fn is_disjoint(&self, other: &VertexSubset) -> bool {
        self.members.iter().all(|&i| !other.contains(i))
    }

    pub fn union(&self, other: &VertexSubset) -> VertexSubset {
        let mut m = self.members.clone();
        m.extend_from_slice(&other.members);
        Self::new(m)
    }

    pub fn intersection(&self, other: &VertexSubset) -> VertexSubset {
        VertexSubset {
            members: self.members.iter().copied().filter(|&i| other.contains(i)).collect(),
        }
    }

    pub fn difference(&self, other: &VertexSubset) -> VertexSubset {
        VertexSubset {
            members: self.members.iter().copied().filter(|&i| !other.contains(i)).collect(),
        }
    }

    pub fn ids<'g>(&self, g: &'g WeightedGraph) -> Vec<&'g str> {
        self.members.iter().map(|&i| g.id(i)).collect()
    }

    pub(crate) fn check_within(&self, n: usize) -> Result<()> {
        match self.members.last() {
            Some(&i) if i >= n => Err(invalid(format!("vertex index {i} out of range for {n} vertices"))),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for VertexSubset {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
