//! Single and joint entity occurrences over identification results, and the
//! weighted relation graph built from them.
//!
//! Counting is at image granularity: an entity occurs in an image if it was
//! recognized there, and two entities co-occur if both were recognized in
//! the same image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::IdentificationResult;

/// Unordered entity pair, stored as (smaller id, larger id).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityPair(String, String);

impl EntityPair {
    /// `None` when both ids are equal.
    pub fn new(a: &str, b: &str) -> Option<Self> {
        match a.cmp(b) {
            std::cmp::Ordering::Less => Some(Self(a.into(), b.into())),
            std::cmp::Ordering::Greater => Some(Self(b.into(), a.into())),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccurrenceCounts {
    pub singles: BTreeMap<String, u64>,
    pub joints: BTreeMap<EntityPair, u64>,
}

impl OccurrenceCounts {
    /// Adds one image's recognized entity set.
    pub fn add_image<'a>(&mut self, entities: impl IntoIterator<Item = &'a str>) {
        let set: BTreeSet<&str> = entities.into_iter().collect();
        for e in &set {
            *self.singles.entry((*e).to_string()).or_default() += 1;
        }
        let ids: Vec<&str> = set.into_iter().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let pair = EntityPair::new(a, b).expect("ids in a set are distinct");
                *self.joints.entry(pair).or_default() += 1;
            }
        }
    }

    /// Sum of two partial counts over disjoint image sets.
    pub fn merge(mut self, other: &OccurrenceCounts) -> Self {
        for (k, v) in &other.singles {
            *self.singles.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.joints {
            *self.joints.entry(k.clone()).or_default() += v;
        }
        self
    }

    /// Checks that every joint count is bounded by both single counts.
    pub fn validate(&self) -> Result<()> {
        for (pair, &n) in &self.joints {
            let a = self.singles.get(pair.first()).copied().unwrap_or(0);
            let b = self.singles.get(pair.second()).copied().unwrap_or(0);
            if n > a.min(b) {
                return Err(Error::Config(format!(
                    "joint count {n} for {{{}, {}}} exceeds single counts {a}/{b}",
                    pair.first(),
                    pair.second()
                )));
            }
        }
        Ok(())
    }
}

pub fn count_occurrences(results: &[IdentificationResult]) -> OccurrenceCounts {
    let mut counts = OccurrenceCounts::default();
    for r in results {
        counts.add_image(r.recognized.iter().map(|x| x.entity_id.as_str()));
    }
    if let Err(e) = counts.validate() {
        panic!("occurrence invariant violated: {e}");
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub label: String,
    /// Number of images the entity appears in.
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    /// Number of images both entities appear in.
    pub weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Nodes for entities seen at least once and edges for pairs seen at least
/// `min_edge_weight` times, both ordered by id. Missing names fall back to ids.
pub fn build_graph(counts: &OccurrenceCounts, names: &BTreeMap<String, String>, min_edge_weight: u64) -> RelationGraph {
    let nodes = counts
        .singles
        .iter()
        .filter(|(_, &n)| n >= 1)
        .map(|(id, &weight)| GraphNode {
            id: id.clone(),
            label: names.get(id).cloned().unwrap_or_else(|| id.clone()),
            weight,
        })
        .collect();
    let edges = counts
        .joints
        .iter()
        .filter(|(_, &n)| n >= min_edge_weight.max(1))
        .map(|(pair, &weight)| GraphEdge {
            source: pair.first().to_string(),
            target: pair.second().to_string(),
            weight,
        })
        .collect();
    RelationGraph { nodes, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    GraphMl,
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphml" => Ok(GraphFormat::GraphMl),
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(Error::Config(format!(
                "unsupported graph format {other:?} (expected graphml, dot or json)"
            ))),
        }
    }
}

pub fn export_graph(graph: &RelationGraph, format: GraphFormat) -> Vec<u8> {
    match format {
        GraphFormat::Json => {
            let mut out = serde_json::to_vec_pretty(graph).expect("graph serializes");
            out.push(b'\n');
            out
        }
        GraphFormat::GraphMl => to_graphml(graph).into_bytes(),
        GraphFormat::Dot => to_dot(graph).into_bytes(),
    }
}

/// Parses a JSON export back into a graph.
pub fn import_graph_json(bytes: &[u8]) -> Result<RelationGraph> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse(format!("graph JSON: {e}")))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn to_graphml(g: &RelationGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\" xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\" xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n");
    out.push_str("  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"occurrences\" for=\"node\" attr.name=\"weight\" attr.type=\"long\"/>\n");
    out.push_str("  <key id=\"cooccurrences\" for=\"edge\" attr.name=\"weight\" attr.type=\"long\"/>\n");
    out.push_str("  <graph id=\"cooccurrence\" edgedefault=\"undirected\">\n");
    for n in &g.nodes {
        let _ = writeln!(
            out,
            "    <node id=\"{}\"><data key=\"label\">{}</data><data key=\"occurrences\">{}</data></node>",
            xml_escape(&n.id),
            xml_escape(&n.label),
            n.weight
        );
    }
    for (i, e) in g.edges.iter().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{i}\" source=\"{}\" target=\"{}\"><data key=\"cooccurrences\">{}</data></edge>",
            xml_escape(&e.source),
            xml_escape(&e.target),
            e.weight
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn to_dot(g: &RelationGraph) -> String {
    let mut out = String::from("graph cooccurrence {\n");
    for n in &g.nodes {
        let _ = writeln!(
            out,
            "  {} [label={}, weight={}];",
            dot_quote(&n.id),
            dot_quote(&n.label),
            n.weight
        );
    }
    for e in &g.edges {
        let _ = writeln!(
            out,
            "  {} -- {} [weight={}];",
            dot_quote(&e.source),
            dot_quote(&e.target),
            e.weight
        );
    }
    out.push_str("}\n");
    out
}
