//! Geometric connectivity: who can hear whom.
//!
//! The unit-disk graph built here is also the brute-force oracle for every
//! hop-count claim the protocols make, so it is kept deliberately simple.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Whether a node at distance exactly `r` counts as connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Inclusive,
    Strict,
}

impl Boundary {
    pub fn within(self, distance: f64, range: f64) -> bool {
        match self {
            Boundary::Inclusive => distance <= range,
            Boundary::Strict => distance < range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Explicit(Vec<Position>),
    UniformRandom { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub node_count: usize,
    pub radio_range: f64,
    pub area_width: f64,
    pub area_height: f64,
    pub placement: Placement,
    #[serde(default)]
    pub boundary: Boundary,
}

impl TopologyConfig {
    pub fn positions(&self) -> Result<Vec<Position>> {
        if self.node_count == 0 {
            return Err(Error::Config("node_count must be positive".into()));
        }
        match &self.placement {
            Placement::Explicit(list) => {
                if list.len() != self.node_count {
                    return Err(Error::Config(format!(
                        "explicit placement lists {} positions for {} nodes",
                        list.len(),
                        self.node_count
                    )));
                }
                Ok(list.clone())
            }
            Placement::UniformRandom { seed } => {
                if !(self.area_width > 0.0 && self.area_height > 0.0) {
                    return Err(Error::Config("placement area must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..self.node_count)
                    .map(|_| {
                        Position::new(
                            rng.gen_range(0.0..self.area_width),
                            rng.gen_range(0.0..self.area_height),
                        )
                    })
                    .collect())
            }
        }
    }

    pub fn build(&self) -> Result<ConnectivityGraph> {
        let positions = self.positions()?;
        ConnectivityGraph::with_boundary(&positions, self.radio_range, self.boundary)
    }
}

/// Unordered node pair, stored with the smaller id first.
pub fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityGraph {
    positions: Vec<Position>,
    labels: Vec<String>,
    radio_range: f64,
    boundary: Boundary,
    edges: BTreeSet<(NodeId, NodeId)>,
    adjacency: Vec<Vec<NodeId>>,
    /// Extra links and the index of the attack that created each of them.
    wormhole_edges: BTreeMap<(NodeId, NodeId), usize>,
}

/// Builds the unit-disk graph over `positions` with inclusive boundary.
pub fn build_unit_disk(positions: &[Position], r: f64) -> Result<ConnectivityGraph> {
    ConnectivityGraph::with_boundary(positions, r, Boundary::Inclusive)
}

impl ConnectivityGraph {
    pub fn with_boundary(positions: &[Position], r: f64, boundary: Boundary) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("topology has no nodes".into()));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!("radio range must be positive, got {r}")));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::Config(format!("node {i} has a non-finite coordinate")));
        }
        let n = positions.len();
        let mut edges = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if boundary.within(positions[i].distance(&positions[j]), r) {
                    let (a, b) = (NodeId(i as u32), NodeId(j as u32));
                    edges.insert((a, b));
                    adjacency[i].push(b);
                    adjacency[j].push(a);
                }
            }
        }
        Ok(Self {
            positions: positions.to_vec(),
            labels: (0..n).map(|i| format!("n{i}")).collect(),
            radio_range: r,
            boundary,
            edges,
            adjacency,
            wormhole_edges: BTreeMap::new(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.positions.len() {
            return Err(Error::Config("label count does not match node count".into()));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Config("node labels must be unique".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.positions.len() as u32).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.positions.len()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::UnknownNode(id))
        }
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.positions[id.index()]
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lookup(&self, label: &str) -> Result<NodeId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| NodeId(i as u32))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.position(a).distance(&self.position(b))
    }

    /// Whether `b` lies within `multiplier × r` of `a`.
    pub fn in_range(&self, a: NodeId, b: NodeId, multiplier: f64) -> bool {
        a != b && self.boundary.within(self.distance(a, b), self.radio_range * multiplier)
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn wormhole_edges(&self) -> &BTreeMap<(NodeId, NodeId), usize> {
        &self.wormhole_edges
    }

    pub fn honest_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&pair(a, b))
    }

    pub fn honest_neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id.index()]
    }

    /// Neighbours over the selected edge set, sorted by id.
    pub fn neighbors(&self, id: NodeId, include_wormhole: bool) -> Vec<NodeId> {
        let mut out = self.adjacency[id.index()].clone();
        if include_wormhole {
            for &(a, b) in self.wormhole_edges.keys() {
                if a == id {
                    out.push(b);
                } else if b == id {
                    out.push(a);
                }
            }
            out.sort();
            out.dedup();
        }
        out
    }

    /// Adds one tagged wormhole link. Re-adding an existing link is a no-op.
    pub fn augment_wormhole(&self, a: NodeId, b: NodeId, attack: usize) -> Result<Self> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(Error::Config(format!("wormhole endpoints must differ, got {a} twice")));
        }
        if self.honest_adjacent(a, b) {
            return Err(Error::AdjacentEndpoints(a, b));
        }
        let mut out = self.clone();
        out.wormhole_edges.entry(pair(a, b)).or_insert(attack);
        Ok(out)
    }

    /// Adds the links a node gains by transmitting (and listening) with an
    /// enlarged range. Pairs that are already honest neighbours are skipped.
    pub fn augment_extended_range(&self, node: NodeId, multiplier: f64, attack: usize) -> Result<Self> {
        self.check(node)?;
        let mut out = self.clone();
        for other in self.node_ids() {
            if other != node && !self.honest_adjacent(node, other) && self.in_range(node, other, multiplier) {
                out.wormhole_edges.entry(pair(node, other)).or_insert(attack);
            }
        }
        Ok(out)
    }

    /// Breadth-first distances from `source` to every node over the selected
    /// edge set.
    pub fn bfs_all(&self, source: NodeId, include_wormhole: bool) -> Result<Vec<Option<u32>>> {
        self.check(source)?;
        let n = self.len();
        let adjacency: Vec<Vec<NodeId>> = if include_wormhole && !self.wormhole_edges.is_empty() {
            self.node_ids().map(|v| self.neighbors(v, true)).collect()
        } else {
            self.adjacency.clone()
        };
        let mut dist = vec![None; n];
        dist[source.index()] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()].unwrap_or(0);
            for &w in &adjacency[v.index()] {
                if dist[w.index()].is_none() {
                    dist[w.index()] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Minimum edge count from `s` to `d`; `None` when unreachable.
    pub fn bfs_hops(&self, s: NodeId, d: NodeId, include_wormhole: bool) -> Result<Option<u32>> {
        self.check(d)?;
        Ok(self.bfs_all(s, include_wormhole)?[d.index()])
    }

    /// One shortest path from `s` to `d`, preferring lower ids at each step.
    pub fn shortest_path(&self, s: NodeId, d: NodeId, include_wormhole: bool) -> Result<Option<Vec<NodeId>>> {
        let from_d = self.bfs_all(d, include_wormhole)?;
        let Some(mut remaining) = from_d[s.index()] else {
            return Ok(None);
        };
        let mut path = vec![s];
        let mut at = s;
        while remaining > 0 {
            let next = self
                .neighbors(at, include_wormhole)
                .into_iter()
                .find(|w| from_d[w.index()] == Some(remaining - 1))
                .expect("bfs layers are consistent");
            path.push(next);
            at = next;
            remaining -= 1;
        }
        Ok(Some(path))
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_all(NodeId(0), false)
            .map(|d| d.iter().all(Option::is_some))
            .unwrap_or(false)
    }
}

/// On-disk position list: one record per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub name: String,
    pub version: u32,
    pub radio_range: f64,
    pub nodes: Vec<FixtureNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureNode {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub x: f64,
    pub y: f64,
}

impl FixtureFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn graph(&self, boundary: Boundary) -> Result<ConnectivityGraph> {
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(Error::Config(format!(
                    "fixture {} node ids must be 0..{} without gaps",
                    self.name,
                    nodes.len()
                )));
            }
        }
        let positions: Vec<Position> = nodes.iter().map(|n| Position::new(n.x, n.y)).collect();
        let labels = nodes
            .iter()
            .map(|n| n.label.clone().unwrap_or_else(|| format!("n{}", n.id)))
            .collect();
        ConnectivityGraph::with_boundary(&positions, self.radio_range, boundary)?.with_labels(labels)
    }
}

/// Position fixtures shipped with the crate.
pub mod fixtures {
    use super::*;

    pub const NAMES: &[&str] = &["fig2", "fig3", "fig4", "fig5", "fig8", "table2", "table3"];

    pub fn source(name: &str) -> Option<&'static str> {
        Some(match name {
            "fig2" => include_str!("../fixtures/topologies/fig2.json"),
            "fig3" => include_str!("../fixtures/topologies/fig3.json"),
            "fig4" => include_str!("../fixtures/topologies/fig4.json"),
            "fig5" => include_str!("../fixtures/topologies/fig5.json"),
            "fig8" => include_str!("../fixtures/topologies/fig8.json"),
            "table2" => include_str!("../fixtures/topologies/table2.json"),
            "table3" => include_str!("../fixtures/topologies/table3.json"),
            _ => return None,
        })
    }

    pub fn load(name: &str) -> Result<FixtureFile> {
        let text = source(name).ok_or_else(|| Error::Config(format!("no shipped fixture named {name:?}")))?;
        FixtureFile::parse(text)
    }

    pub fn graph(name: &str) -> Result<ConnectivityGraph> {
        load(name)?.graph(Boundary::Inclusive)
    }
}
