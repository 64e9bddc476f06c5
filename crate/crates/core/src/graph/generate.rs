//! Deterministic graph families and truncations of infinite graphs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_domain, Domain, GraphBuilder, VertexSubset, WeightedGraph};
use crate::error::{invalid, Error, Result};

const RANDOM_ATTEMPTS: usize = 100;

/// Finite graph families. Weights and measures default to 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Vertices `0..=n`, edges `{i, i+1}`.
    Path(usize),
    /// Vertices `0..n` joined in a ring.
    Cycle(usize),
    Complete(usize),
    /// `r × c` grid with ids `"i,j"`.
    Grid(usize, usize),
    /// Center `0` joined to leaves `1..=n`.
    Star(usize),
    /// Erdős–Rényi graph on `n` vertices conditioned on connectivity.
    Random {
        n: usize,
        edge_probability: f64,
        weight_range: (f64, f64),
        measure_range: (f64, f64),
        seed: u64,
    },
}

fn numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| invalid(format!("bad family parameter {t:?}"))))
        .collect()
}

fn count(x: f64) -> Result<usize> {
    if x.fract() != 0.0 || x < 0.0 || x > 1e6 {
        return Err(invalid(format!("expected a vertex count, got {x}")));
    }
    Ok(x as usize)
}

impl Family {
    /// Build a family from its name and numeric parameters, e.g. `("grid", [2, 3])`.
    ///
    /// `random` takes `n, probability, weight_lo, weight_hi, seed` and optionally
    /// `measure_lo, measure_hi`.
    pub fn from_parts(name: &str, params: &[f64]) -> Result<Family> {
        let arity = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(invalid(format!("{name} takes {k} parameter(s), got {}", params.len())))
            }
        };
        let family = match name {
            "path" => {
                arity(1)?;
                Family::Path(count(params[0])?)
            }
            "cycle" => {
                arity(1)?;
                Family::Cycle(count(params[0])?)
            }
            "complete" => {
                arity(1)?;
                Family::Complete(count(params[0])?)
            }
            "star" => {
                arity(1)?;
                Family::Star(count(params[0])?)
            }
            "grid" => {
                arity(2)?;
                Family::Grid(count(params[0])?, count(params[1])?)
            }
            "random" => {
                if params.len() != 5 && params.len() != 7 {
                    return Err(invalid("random takes 5 or 7 parameters"));
                }
                let measure_range = if params.len() == 7 { (params[5], params[6]) } else { (1.0, 1.0) };
                if params[4] < 0.0 || params[4].fract() != 0.0 {
                    return Err(invalid("random seed must be a nonnegative integer"));
                }
                Family::Random {
                    n: count(params[0])?,
                    edge_probability: params[1],
                    weight_range: (params[2], params[3]),
                    measure_range,
                    seed: params[4] as u64,
                }
            }
            other => return Err(invalid(format!("unknown graph family {other:?}"))),
        };
        family.validate()?;
        Ok(family)
    }

    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        match *self {
            Family::Path(n) | Family::Star(n) if n < 1 => Err(invalid("need at least one edge")),
            Family::Cycle(n) if n < 3 => Err(invalid("cycle needs at least 3 vertices")),
            Family::Complete(n) if n < 1 => Err(invalid("complete graph needs a vertex")),
            Family::Grid(r, c) if r < 1 || c < 1 => Err(invalid("grid dimensions must be positive")),
            Family::Random { n, edge_probability, weight_range, measure_range, .. } => {
                if n < 1 {
                    Err(invalid("random graph needs a vertex"))
                } else if !(edge_probability > 0.0 && edge_probability <= 1.0) {
                    Err(invalid("edge probability must lie in (0, 1]"))
                } else if !range_ok(weight_range) || !range_ok(measure_range) {
                    Err(invalid("ranges must satisfy 0 < lo <= hi"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Path(n) => write!(f, "path({n})"),
            Family::Cycle(n) => write!(f, "cycle({n})"),
            Family::Complete(n) => write!(f, "complete({n})"),
            Family::Grid(r, c) => write!(f, "grid({r},{c})"),
            Family::Star(n) => write!(f, "star({n})"),
            Family::Random { n, edge_probability, weight_range, measure_range, seed } => {
                write!(f, "random({n},{edge_probability},{},{},{seed}", weight_range.0, weight_range.1)?;
                if *measure_range != (1.0, 1.0) {
                    write!(f, ",{},{}", measure_range.0, measure_range.1)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Parses `name(a,b,...)`.
    fn from_str(s: &str) -> Result<Family> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| invalid(format!("expected name(params), got {s:?}")))?;
        let inner = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| invalid(format!("missing closing parenthesis in {s:?}")))?;
        Family::from_parts(s[..open].trim(), &numbers(inner)?)
    }
}

fn unit_graph(ids: impl IntoIterator<Item = String>, edges: impl IntoIterator<Item = (String, String)>) -> Result<WeightedGraph> {
    let mut b = GraphBuilder::new();
    for id in ids {
        b.vertex(id, 1.0)?;
    }
    for (x, y) in edges {
        b.edge(x, y, 1.0)?;
    }
    b.build()
}

/// Build the graph of a finite family.
pub fn generate(family: &Family) -> Result<WeightedGraph> {
    family.validate()?;
    let s = |i: usize| i.to_string();
    match *family {
        Family::Path(n) => unit_graph((0..=n).map(s), (0..n).map(|i| (s(i), s(i + 1)))),
        Family::Cycle(n) => unit_graph((0..n).map(s), (0..n).map(|i| (s(i), s((i + 1) % n)))),
        Family::Complete(n) => unit_graph(
            (0..n).map(s),
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i.to_string(), j.to_string()))),
        ),
        Family::Star(n) => unit_graph((0..=n).map(s), (1..=n).map(|i| (s(0), s(i)))),
        Family::Grid(r, c) => {
            let id = |i: usize, j: usize| format!("{i},{j}");
            let mut edges = Vec::new();
            for i in 0..r {
                for j in 0..c {
                    if i + 1 < r {
                        edges.push((id(i, j), id(i + 1, j)));
                    }
                    if j + 1 < c {
                        edges.push((id(i, j), id(i, j + 1)));
                    }
                }
            }
            unit_graph((0..r).flat_map(|i| (0..c).map(move |j| format!("{i},{j}"))), edges)
        }
        Family::Random { n, edge_probability, weight_range, measure_range, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = |(lo, hi): (f64, f64), rng: &mut ChaCha8Rng| {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            };
            for _ in 0..RANDOM_ATTEMPTS {
                let mut b = GraphBuilder::new();
                for i in 0..n {
                    b.vertex(s(i), draw(measure_range, &mut rng))?;
                }
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < edge_probability {
                            b.edge(s(i), s(j), draw(weight_range, &mut rng))?;
                        }
                    }
                }
                let g = b.build()?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(invalid(format!(
                "no connected sample of {family} after {RANDOM_ATTEMPTS} attempts"
            )))
        }
    }
}

/// Infinite graphs with unit weights and measures, accessed through balls around a root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfiniteFamily {
    /// `ℤ`, rooted at 0.
    IntegerLine,
    /// `ℕ`, rooted at 0.
    HalfLine,
    /// `ℤ²` with L1 balls, rooted at the origin.
    Lattice,
    /// The `d`-regular tree.
    RegularTree(usize),
}

impl fmt::Display for InfiniteFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfiniteFamily::IntegerLine => write!(f, "integer-line"),
            InfiniteFamily::HalfLine => write!(f, "half-line"),
            InfiniteFamily::Lattice => write!(f, "lattice"),
            InfiniteFamily::RegularTree(d) => write!(f, "regular-tree({d})"),
        }
    }
}

impl FromStr for InfiniteFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<InfiniteFamily> {
        match s.trim() {
            "integer-line" => Ok(InfiniteFamily::IntegerLine),
            "half-line" => Ok(InfiniteFamily::HalfLine),
            "lattice" => Ok(InfiniteFamily::Lattice),
            other => {
                let d = other
                    .strip_prefix("regular-tree(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|r| r.trim().parse::<usize>().ok())
                    .ok_or_else(|| invalid(format!("unknown infinite family {other:?}")))?;
                if d < 2 {
                    return Err(invalid("regular tree degree must be at least 2"));
                }
                Ok(InfiniteFamily::RegularTree(d))
            }
        }
    }
}

/// Nested finite vertex sets `W_1 ⊆ W_2 ⊆ …` of one host graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Exhaustion {
    pub family: Vec<VertexSubset>,
}

impl Exhaustion {
    pub fn is_nested(&self) -> bool {
        self.family.windows(2).all(|w| w[0].is_subset(&w[1]))
    }
}

/// A ball of an infinite graph together with its exhaustion by smaller balls.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub graph: WeightedGraph,
    /// `W_i` is the ball of radius `i`, for `i = 1..=radius`.
    pub exhaustion: Exhaustion,
    pub root: String,
    /// Graph distance of each vertex from the root.
    pub depth: Vec<usize>,
}

impl Truncation {
    /// The ball of radius `r` (`r = 0` is the root alone).
    pub fn ball(&self, r: usize) -> VertexSubset {
        (0..self.graph.len()).filter(|&i| self.depth[i] <= r).collect()
    }
}

fn tree_nodes(d: usize, radius: usize) -> Vec<(String, usize)> {
    let mut nodes = vec![("t".to_string(), 0usize)];
    let mut frontier = vec!["t".to_string()];
    for depth in 1..=radius {
        let mut next = Vec::new();
        for parent in &frontier {
            let children = if depth == 1 { d } else { d - 1 };
            for c in 0..children {
                let id = format!("{parent}{c}");
                next.push(id.clone());
                nodes.push((id, depth));
            }
        }
        frontier = next;
    }
    nodes
}

/// Ball of the given radius around the root of an infinite family.
pub fn truncate(family: InfiniteFamily, radius: usize) -> Result<Truncation> {
    if radius < 1 {
        return Err(invalid("truncation radius must be at least 1"));
    }
    let r = radius as i64;
    let (nodes, edges, root): (Vec<(String, usize)>, Vec<(String, String)>, String) = match family {
        InfiniteFamily::IntegerLine => (
            (-r..=r).map(|i| (i.to_string(), i.unsigned_abs() as usize)).collect(),
            (-r..r).map(|i| (i.to_string(), (i + 1).to_string())).collect(),
            "0".into(),
        ),
        InfiniteFamily::HalfLine => (
            (0..=r).map(|i| (i.to_string(), i as usize)).collect(),
            (0..r).map(|i| (i.to_string(), (i + 1).to_string())).collect(),
            "0".into(),
        ),
        InfiniteFamily::Lattice => {
            let id = |x: i64, y: i64| format!("{x},{y}");
            let mut nodes = Vec::new();
            let mut edges = Vec::new();
            for x in -r..=r {
                for y in -r..=r {
                    let depth = x.abs() + y.abs();
                    if depth > r {
                        continue;
                    }
                    nodes.push((id(x, y), depth as usize));
                    if (x + 1).abs() + y.abs() <= r {
                        edges.push((id(x, y), id(x + 1, y)));
                    }
                    if x.abs() + (y + 1).abs() <= r {
                        edges.push((id(x, y), id(x, y + 1)));
                    }
                }
            }
            (nodes, edges, id(0, 0))
        }
        InfiniteFamily::RegularTree(d) => {
            if d < 2 {
                return Err(invalid("regular tree degree must be at least 2"));
            }
            let nodes = tree_nodes(d, radius);
            let edges = nodes
                .iter()
                .skip(1)
                .map(|(id, _)| (id[..id.len() - 1].to_string(), id.clone()))
                .collect();
            (nodes, edges, "t".into())
        }
    };
    let graph = unit_graph(nodes.iter().map(|(id, _)| id.clone()), edges)?;
    let mut depth = vec![0; graph.len()];
    for (id, dep) in &nodes {
        depth[graph.index_of(id).expect("declared vertex")] = *dep;
    }
    let mut t = Truncation { graph, exhaustion: Exhaustion { family: Vec::new() }, root, depth };
    t.exhaustion.family = (1..=radius).map(|i| t.ball(i)).collect();
    Ok(t)
}

/// The finite domain used for an infinite family at the given radius: the ball
/// of radius `radius - 1` inside the ball of radius `radius`, so that the
/// domain's vertex boundary is the outer sphere.
pub fn truncated_domain(family: InfiniteFamily, radius: usize) -> Result<(Truncation, Domain)> {
    let t = truncate(family, radius)?;
    let d = build_domain(&t.graph, &t.ball(radius - 1))?;
    Ok((t, d))
}
