//! Force-directed layout with per-node colour propagation.
//!
//! Nodes repel with an inverse-square force; edges act as springs whose rest
//! length shrinks as the weight grows. Integration is damped semi-implicit
//! Euler. Colours diffuse along edges so clusters converge to a shared tint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("edge references unknown node {0:?}")]
    UnknownNode(String),
    #[error("edge weight {0} is negative or not finite")]
    BadWeight(f64),
    #[error("invalid layout parameter: {0}")]
    Params(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub repulsion: f64,
    pub spring: f64,
    /// Rest length of a weight-1 edge.
    pub min_length: f64,
    /// Rest length of a weight-0 edge.
    pub max_length: f64,
    /// Velocity retained per step.
    pub damping: f64,
    pub dt: f64,
    /// Converged once mean speed falls below this.
    pub speed_epsilon: f64,
    pub max_iters: usize,
    /// Distance floor for the repulsion term.
    pub min_distance: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            repulsion: 0.05,
            spring: 1.0,
            min_length: 0.05,
            max_length: 0.6,
            damping: 0.9,
            dt: 0.05,
            speed_epsilon: 1e-4,
            max_iters: 2000,
            min_distance: 1e-3,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.repulsion) && positive(self.spring) && positive(self.dt)) {
            return Err(LayoutError::Params("repulsion, spring and dt must be positive"));
        }
        if !(positive(self.min_length) && self.min_length <= self.max_length) {
            return Err(LayoutError::Params("need 0 < min_length <= max_length"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(LayoutError::Params("damping must lie in [0, 1)"));
        }
        if !(positive(self.speed_epsilon) && positive(self.min_distance)) {
            return Err(LayoutError::Params("speed_epsilon and min_distance must be positive"));
        }
        Ok(())
    }

    /// Spring rest length for a weight in [0, 1].
    pub fn rest_length(&self, w: f64) -> f64 {
        self.min_length + (self.max_length - self.min_length) * (1.0 - w.clamp(0.0, 1.0))
    }
}

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub color: Rgb,
}

/// Deterministic start position in the unit square from (id, seed).
pub fn initial_position(id: &str, seed: u64) -> (f64, f64) {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let unit = |b: &[u8]| {
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        (v >> 11) as f64 / (1u64 << 53) as f64
    };
    (unit(&d[0..8]), unit(&d[8..16]))
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Evenly spaced hues for `n` nodes.
pub fn initial_color(index: usize, n: usize) -> Rgb {
    hsv_to_rgb(index as f64 / n.max(1) as f64, 0.75, 0.9)
}

/// One synchronous colour step: each node moves to the weighted mean of
/// itself (weight 1) and its neighbours.
pub fn propagate_colors(colors: &[Rgb], edges: &[(usize, usize, f64)]) -> Vec<Rgb> {
    let mut acc: Vec<(Rgb, f64)> = colors.iter().map(|&c| (c, 1.0)).collect();
    for &(a, b, w) in edges {
        for ch in 0..3 {
            acc[a].0[ch] += w * colors[b][ch];
            acc[b].0[ch] += w * colors[a][ch];
        }
        acc[a].1 += w;
        acc[b].1 += w;
    }
    acc.into_iter()
        .map(|(c, total)| c.map(|x| (x / total).clamp(0.0, 1.0)))
        .collect()
}

/// Layout state for one graph. Positions survive [`Layout::set_graph`] so a
/// changing graph animates from where it was.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: LayoutParams,
    pub seed: u64,
    nodes: Vec<LayoutNode>,
    /// Node indices with weights in [0, 1].
    edges: Vec<(usize, usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

impl Layout {
    pub fn new(params: LayoutParams, seed: u64) -> Self {
        Self {
            params,
            seed,
            nodes: Vec::new(),
            edges: Vec::new(),
            iterations: 0,
            converged: false,
        }
    }

    pub fn nodes(&self) -> &[LayoutNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Replaces the graph. Existing nodes keep position, velocity and colour;
    /// new nodes start at their hashed position with an evenly spaced hue.
    /// Weights above 1 are clamped to 1.
    pub fn set_graph<'a>(
        &mut self,
        ids: impl IntoIterator<Item = &'a str>,
        edges: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Result<(), LayoutError> {
        let mut ids: Vec<&str> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let old: BTreeMap<String, LayoutNode> = self.nodes.drain(..).map(|n| (n.id.clone(), n)).collect();
        let n = ids.len();
        self.nodes = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                old.get(id).cloned().unwrap_or_else(|| {
                    let (x, y) = initial_position(id, self.seed);
                    LayoutNode {
                        id: id.to_owned(),
                        x,
                        y,
                        vx: 0.0,
                        vy: 0.0,
                        color: initial_color(i, n),
                    }
                })
            })
            .collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut raw = Vec::new();
        for (a, b, w) in edges {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LayoutError::BadWeight(w));
            }
            let ia = *index.get(a).ok_or_else(|| LayoutError::UnknownNode(a.to_owned()))?;
            let ib = *index.get(b).ok_or_else(|| LayoutError::UnknownNode(b.to_owned()))?;
            if ia != ib {
                raw.push((ia.min(ib), ia.max(ib), w));
            }
        }
        raw.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        self.edges = raw.into_iter().map(|(a, b, w)| (a, b, w.min(1.0))).collect();
        self.iterations = 0;
        self.converged = false;
        Ok(())
    }

    fn forces(&self) -> Vec<(f64, f64)> {
        let p = &self.params;
        let mut f = vec![(0.0, 0.0); self.nodes.len()];
        for i in 0..self.nodes.len() {
            for j in i + 1..self.nodes.len() {
                let (dx, dy) = (self.nodes[j].x - self.nodes[i].x, self.nodes[j].y - self.nodes[i].y);
                let d = dx.hypot(dy);
                // coincident nodes separate along x, lower index to the left
                let (ux, uy) = if d > 1e-12 { (dx / d, dy / d) } else { (1.0, 0.0) };
                let mag = p.repulsion / d.max(p.min_distance).powi(2);
                f[i].0 -= mag * ux;
                f[i].1 -= mag * uy;
                f[j].0 += mag * ux;
                f[j].1 += mag * uy;
            }
        }
        for &(a, b, w) in &self.edges {
            let (dx, dy) = (self.nodes[b].x - self.nodes[a].x, self.nodes[b].y - self.nodes[a].y);
            let d = dx.hypot(dy);
            if d <= 1e-12 {
                continue;
            }
            let mag = p.spring * w * (d - p.rest_length(w));
            let (fx, fy) = (mag * dx / d, mag * dy / d);
            f[a].0 += fx;
            f[a].1 += fy;
            f[b].0 -= fx;
            f[b].1 -= fy;
        }
        f
    }

    /// Advances one step and returns the mean node speed afterwards.
    pub fn step(&mut self) -> f64 {
        let p = self.params;
        let forces = self.forces();
        let mut speed = 0.0;
        for (node, (fx, fy)) in self.nodes.iter_mut().zip(forces) {
            node.vx = p.damping * (node.vx + fx * p.dt);
            node.vy = p.damping * (node.vy + fy * p.dt);
            node.x += node.vx * p.dt;
            node.y += node.vy * p.dt;
            speed += node.vx.hypot(node.vy);
        }
        self.iterations += 1;
        if self.nodes.is_empty() {
            0.0
        } else {
            speed / self.nodes.len() as f64
        }
    }

    /// Steps until mean speed drops below `speed_epsilon` or `max_iters`
    /// steps have run since the last graph change. Returns whether it
    /// converged.
    pub fn run(&mut self) -> bool {
        while !self.converged && self.iterations < self.params.max_iters {
            if self.step() < self.params.speed_epsilon {
                self.converged = true;
            }
        }
        self.converged
    }

    /// Runs `iters` synchronous colour steps along the current edges.
    pub fn propagate(&mut self, iters: usize) {
        for _ in 0..iters {
            let colors: Vec<Rgb> = self.nodes.iter().map(|n| n.color).collect();
            for (node, c) in self.nodes.iter_mut().zip(propagate_colors(&colors, &self.edges)) {
                node.color = c;
            }
        }
    }

    pub fn position(&self, id: &str) -> Option<(f64, f64)> {
        self.nodes.iter().find(|n| n.id == id).map(|n| (n.x, n.y))
    }

    pub fn to_payload(&self, labels: &BTreeMap<String, (String, Option<String>)>) -> LayoutPayload {
        LayoutPayload {
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    let (label, top_image) = labels.get(&n.id).cloned().unwrap_or_else(|| (n.id.clone(), None));
                    LayoutNodePayload {
                        id: n.id.clone(),
                        x: n.x,
                        y: n.y,
                        color: n.color,
                        label,
                        top_image,
                    }
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b, w)| LayoutEdgePayload {
                    a: self.nodes[a].id.clone(),
                    b: self.nodes[b].id.clone(),
                    w,
                })
                .collect(),
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNodePayload {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub color: Rgb,
    pub label: String,
    pub top_image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEdgePayload {
    pub a: String,
    pub b: String,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPayload {
    pub nodes: Vec<LayoutNodePayload>,
    pub edges: Vec<LayoutEdgePayload>,
    pub iterations: usize,
    pub converged: bool,
}
