//! Plain-text graph files.
//!
//! ```text
//! pgraph v1
//! # comment
//! v <id> <measure>
//! e <id1> <id2> <weight>
//! ```
//!
//! Domain files list the ids of `Ω`, one per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GraphBuilder, VertexSubset, WeightedGraph};
use crate::error::{Error, Result};

const HEADER: &str = "pgraph v1";

fn parse_error(line: usize, field: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, field, message: message.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn number(tok: &str, line: usize, field: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_error(line, field, format!("expected a number, got {tok:?}")))
}

/// Parse the text of a graph file.
pub fn parse_graph(text: &str) -> Result<WeightedGraph> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(parse_error(n, 1, format!("expected header {HEADER:?}, got {other:?}"))),
        None => return Err(parse_error(1, 1, "empty graph file")),
    }
    let mut b = GraphBuilder::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let arity = |k: usize| {
            if fields.len() == k {
                Ok(())
            } else {
                Err(parse_error(n, fields.len().min(k) + 1, format!("expected {k} fields, got {}", fields.len())))
            }
        };
        match fields[0] {
            "v" => {
                arity(3)?;
                b.vertex(fields[1], number(fields[2], n, 3)?)?;
            }
            "e" => {
                arity(4)?;
                b.edge(fields[1], fields[2], number(fields[3], n, 4)?)?;
            }
            other => return Err(parse_error(n, 1, format!("unknown record type {other:?}"))),
        }
    }
    b.build()
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<WeightedGraph> {
    parse_graph(&fs::read_to_string(path)?)
}

/// Render a graph in file form. Floats use the shortest representation that
/// round-trips exactly.
pub fn write_graph(g: &WeightedGraph) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (i, id) in g.ids().iter().enumerate() {
        let _ = writeln!(out, "v {id} {}", g.measure(i));
    }
    for e in g.edges() {
        let _ = writeln!(out, "e {} {} {}", g.id(e.u), g.id(e.v), e.weight);
    }
    out
}

pub fn save_graph(g: &WeightedGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_graph(g))?;
    Ok(())
}

/// Parse a domain file against its host graph.
pub fn parse_domain(g: &WeightedGraph, text: &str) -> Result<VertexSubset> {
    let mut members = Vec::new();
    for (n, line) in content_lines(text) {
        let i = g
            .index_of(line)
            .ok_or_else(|| parse_error(n, 1, format!("unknown vertex id {line:?}")))?;
        members.push(i);
    }
    Ok(VertexSubset::new(members))
}

pub fn load_domain(g: &WeightedGraph, path: impl AsRef<Path>) -> Result<VertexSubset> {
    parse_domain(g, &fs::read_to_string(path)?)
}

pub fn save_domain(g: &WeightedGraph, omega: &VertexSubset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for id in omega.ids(g) {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
