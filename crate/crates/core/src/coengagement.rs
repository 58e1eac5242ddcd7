//! Item-item co-engagement graph and its projection onto topics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ImageId};
use crate::scoring::ScoreMap;

#[derive(Debug, Error, PartialEq)]
pub enum CoEngagementError {
    #[error("engagement threshold {0} must lie in (0, score_max]")]
    Threshold(f64),
    #[error("node {0:?} is not in the catalog")]
    UnknownNode(String),
}

/// Weighted undirected graph without self-loops. Stored as a symmetric
/// adjacency map so neighbor queries see the same weight from both ends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoEngagementGraph {
    nodes: BTreeSet<String>,
    adjacency: BTreeMap<String, BTreeMap<String, f64>>,
}

impl CoEngagementGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    /// Adds `w` to edge (a, b). Self-pairs are ignored.
    pub fn add_weight(&mut self, a: &str, b: &str, w: f64) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            if !self.nodes.contains(x) {
                self.nodes.insert(x.to_owned());
            }
            let row = match self.adjacency.get_mut(x) {
                Some(row) => row,
                None => self.adjacency.entry(x.to_owned()).or_default(),
            };
            match row.get_mut(y) {
                Some(v) => *v += w,
                None => {
                    row.insert(y.to_owned(), w);
                }
            }
        }
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<f64> {
        self.adjacency.get(a).and_then(|m| m.get(b)).copied()
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = (&str, f64)> {
        self.adjacency
            .get(id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, &w)| (k.as_str(), w)))
    }

    /// Each undirected edge once, as (a, b, w) with a < b, in key order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.adjacency.iter().flat_map(|(a, m)| {
            m.iter()
                .filter(move |(b, _)| a.as_str() < b.as_str())
                .map(move |(b, &w)| (a.as_str(), b.as_str(), w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn max_weight(&self) -> f64 {
        self.edges().map(|(_, _, w)| w).fold(0.0, f64::max)
    }

    pub fn to_payload(&self) -> GraphPayload {
        GraphPayload {
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges()
                .map(|(a, b, w)| EdgePayload {
                    a: a.to_owned(),
                    b: b.to_owned(),
                    w,
                })
                .collect(),
        }
    }
}

/// Graph export shape shared by the image, topic and user-similarity graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPayload {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePayload {
    pub a: String,
    pub b: String,
    pub w: f64,
}

/// For every user and every unordered pair of images that user scored at or
/// above `threshold`, adds min(score_i, score_j) / score_max to the edge.
pub fn build_coengagement(
    scores: &ScoreMap,
    threshold: f64,
    score_max: f64,
) -> Result<CoEngagementGraph, CoEngagementError> {
    if !(threshold > 0.0 && threshold <= score_max) {
        return Err(CoEngagementError::Threshold(threshold));
    }
    let mut engaged: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for ((user, image), s) in scores {
        if s.value >= threshold {
            engaged.entry(user).or_default().push((image, s.value));
        }
    }
    // sum per edge before touching the owned graph; users are visited in
    // the same order either way, so the float sums are unchanged
    let mut nodes: BTreeSet<&str> = BTreeSet::new();
    let mut sums: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for images in engaged.values() {
        for (i, &(a, sa)) in images.iter().enumerate() {
            nodes.insert(a);
            for &(b, sb) in &images[i + 1..] {
                let key = if a < b { (a, b) } else { (b, a) };
                *sums.entry(key).or_insert(0.0) += sa.min(sb) / score_max;
            }
        }
    }
    let mut graph = CoEngagementGraph::new();
    for node in nodes {
        graph.add_node(node);
    }
    for ((a, b), w) in sums {
        graph.add_weight(a, b, w);
    }
    Ok(graph)
}

/// Projects image edges onto tag pairs: each image edge (i, j) adds its
/// weight to every tag pair in tags(i) × tags(j) with distinct tags.
pub fn topic_projection(graph: &CoEngagementGraph, catalog: &Catalog) -> Result<CoEngagementGraph, CoEngagementError> {
    let tags = |id: &str| {
        catalog
            .get(id)
            .map(|r| &r.tags)
            .ok_or_else(|| CoEngagementError::UnknownNode(id.to_owned()))
    };
    let mut topics = CoEngagementGraph::new();
    for node in graph.nodes() {
        for t in tags(node)? {
            topics.add_node(t.clone());
        }
    }
    for (a, b, w) in graph.edges() {
        let (ta, tb) = (tags(a)?, tags(b)?);
        for t in ta {
            for u in tb {
                topics.add_weight(t, u, w);
            }
        }
    }
    Ok(topics)
}

/// Neighbors of `image` by weight descending, ties by id, at most `k`.
pub fn related_images(graph: &CoEngagementGraph, image: &str, k: usize) -> Vec<(ImageId, f64)> {
    let mut out: Vec<(ImageId, f64)> = graph.neighbors(image).map(|(n, w)| (n.to_owned(), w)).collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    out.truncate(k);
    out
}
