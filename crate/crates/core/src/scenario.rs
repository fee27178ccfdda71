//! Scenario documents: the versioned JSON format, label resolution, and
//! validation that reports every problem with a machine-readable code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackConfig, AttackMode, ExploitPolicy, Visibility};
use crate::aodv::AodvConfig;
use crate::detection::DetectionConfig;
use crate::dv::DvConfig;
use crate::engine::MacConfig;
use crate::topology::{fixtures, Boundary, ConnectivityGraph, NodeId, Placement, Position, TopologyConfig};

pub const SCHEMA: &str = "wormsim/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub topology: TopologySpec,
    #[serde(default)]
    pub boundary: Boundary,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub mac: MacConfig,
    /// Per-node clock offsets in seconds, keyed by label.
    #[serde(default)]
    pub clock_skew: BTreeMap<String, f64>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub demands: Vec<DemandSpec>,
    #[serde(default)]
    pub detection: DetectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Fixture(String),
    Explicit { radio_range: f64, nodes: Vec<NodeSpec> },
    Random { node_count: usize, radio_range: f64, area_width: f64, area_height: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolConfig {
    Aodv(AodvConfig),
    Dv(DvConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub modes: Vec<AttackMode>,
    pub endpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Visibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tunnel_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exploitation: Option<ExploitPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub source: String,
    pub destination: String,
    pub start: f64,
    /// Packets per second.
    pub rate: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_path: Option<Vec<String>>,
}

/// A constant-rate flow between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub source: NodeId,
    pub destination: NodeId,
    pub start: f64,
    pub rate: f64,
    pub duration: f64,
    pub forced_path: Option<Vec<NodeId>>,
}

impl Demand {
    pub fn packet_count(&self) -> u64 {
        (self.duration * self.rate + 1e-9).floor() as u64
    }

    pub fn send_time(&self, seq: u64) -> f64 {
        self.start + seq as f64 / self.rate
    }
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: String,
    pub location: String,
    pub message: String,
}

impl Issue {
    fn new(code: impl Into<String>, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code: code.into(), location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.location, self.message)
    }
}

/// A validated scenario with labels resolved to node ids.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub graph: ConnectivityGraph,
    pub protocol: ProtocolConfig,
    pub mac: MacConfig,
    pub clock_skew: Vec<f64>,
    pub attacks: Vec<AttackConfig>,
    pub demands: Vec<Demand>,
    pub detection: DetectionConfig,
}

impl Scenario {
    /// An attack-free scenario over `graph`.
    pub fn new(name: impl Into<String>, graph: ConnectivityGraph, protocol: ProtocolConfig, duration: f64, seed: u64) -> Self {
        let n = graph.len();
        Self {
            name: name.into(),
            seed,
            duration,
            graph,
            protocol,
            mac: MacConfig::default(),
            clock_skew: vec![0.0; n],
            attacks: Vec::new(),
            demands: Vec::new(),
            detection: DetectionConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, Vec<Issue>> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| vec![parse_issue(&e)])?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self, Vec<Issue>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![Issue::new("IO", path.display().to_string(), e.to_string())])?;
        Self::parse(&text)
    }

    pub fn from_file(file: &ScenarioFile) -> Result<Self, Vec<Issue>> {
        let mut issues = Vec::new();
        if file.schema != SCHEMA {
            issues.push(Issue::new("SCHEMA_VERSION", "schema", format!("expected {SCHEMA:?}, found {:?}", file.schema)));
        }
        if !(file.duration.is_finite() && file.duration > 0.0) {
            issues.push(Issue::new("DURATION", "duration", "duration must be positive"));
        }
        let protocol_check = match &file.protocol {
            ProtocolConfig::Aodv(c) => c.check(),
            ProtocolConfig::Dv(c) => c.check(),
        };
        if let Err(m) = protocol_check {
            issues.push(Issue::new("PROTOCOL", "protocol", m));
        }
        if let Err(m) = file.mac.check() {
            issues.push(Issue::new("MAC", "mac", m));
        }
        if let Err(m) = file.detection.leash.check() {
            issues.push(Issue::new("DETECTION", "detection.leash", m));
        }
        let graph = match build_topology(&file.topology, file.boundary) {
            Ok(g) => g,
            Err(issue) => {
                issues.push(issue);
                return Err(issues);
            }
        };
        let lookup = |label: &str, location: String, issues: &mut Vec<Issue>| -> Option<NodeId> {
            match graph.lookup(label) {
                Ok(id) => Some(id),
                Err(_) => {
                    issues.push(Issue::new("UNKNOWN_NODE", location, format!("no node labelled {label:?}")));
                    None
                }
            }
        };

        let mut clock_skew = vec![0.0; graph.len()];
        for (label, skew) in &file.clock_skew {
            if let Some(id) = lookup(label, format!("clock_skew.{label}"), &mut issues) {
                if skew.is_finite() {
                    clock_skew[id.index()] = *skew;
                } else {
                    issues.push(Issue::new("CLOCK", format!("clock_skew.{label}"), "skew must be finite"));
                }
            }
        }

        let mut attacks = Vec::new();
        let mut claimed: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (i, spec) in file.attacks.iter().enumerate() {
            let at = format!("attacks[{i}]");
            if spec.endpoints.len() > 2 {
                issues.push(Issue::new("SCHEMA", format!("{at}.endpoints"), "an attack has at most two endpoints"));
                continue;
            }
            let ids: Vec<Option<NodeId>> = spec
                .endpoints
                .iter()
                .enumerate()
                .map(|(j, l)| lookup(l, format!("{at}.endpoints[{j}]"), &mut issues))
                .collect();
            if ids.iter().any(Option::is_none) {
                let stand_in = |j: u32| NodeId(u32::MAX - j);
                let cfg = attack_from_spec(spec, stand_in(0), (ids.len() > 1).then(|| stand_in(1)));
                for r in cfg.violations() {
                    issues.push(Issue::new(r.code.to_string(), at.clone(), r.message));
                }
                continue;
            }
            let ids: Vec<NodeId> = ids.into_iter().flatten().collect();
            let Some(&a) = ids.first() else {
                let modes: BTreeSet<AttackMode> = spec.modes.iter().copied().collect();
                let needed = modes.iter().map(|m| m.min_malicious_nodes()).max().unwrap_or(1);
                let code = if modes.is_empty() { "EMPTY_MODES" } else { "MIN_NODES" };
                issues.push(Issue::new(code, format!("{at}.endpoints"), format!("needs {needed} malicious nodes, 0 given")));
                continue;
            };
            let cfg = attack_from_spec(spec, a, ids.get(1).copied());
            for r in cfg.violations().into_iter().chain(cfg.topology_violations(&graph)) {
                issues.push(Issue::new(r.code.to_string(), at.clone(), r.message));
            }
            for id in cfg.endpoints() {
                if let Some(prev) = claimed.insert(id, i) {
                    if prev != i {
                        issues.push(Issue::new(
                            "ENDPOINT_REUSED",
                            format!("{at}.endpoints"),
                            format!("{} already belongs to attacks[{prev}]", graph.label(id)),
                        ));
                    }
                }
            }
            if cfg.has(AttackMode::Encapsulation) {
                if let Some(b) = cfg.endpoint_b {
                    if a != b && graph.shortest_path(a, b, false).ok().flatten().is_none() {
                        issues.push(Issue::new("TUNNEL_PATH", at.clone(), "no honest path connects the endpoints"));
                    }
                }
            }
            attacks.push(cfg);
        }
        let hidden: BTreeSet<NodeId> = attacks
            .iter()
            .flat_map(|a| a.endpoints().into_iter().filter(|e| !a.is_visible(*e)).collect::<Vec<_>>())
            .collect();

        let mut demands = Vec::new();
        for (i, d) in file.demands.iter().enumerate() {
            let at = format!("demands[{i}]");
            let s = lookup(&d.source, format!("{at}.source"), &mut issues);
            let t = lookup(&d.destination, format!("{at}.destination"), &mut issues);
            if !(d.rate.is_finite() && d.rate > 0.0) {
                issues.push(Issue::new("DEMAND", format!("{at}.rate"), "rate must be positive"));
            }
            if !(d.start.is_finite() && d.start >= 0.0 && d.duration.is_finite() && d.duration >= 0.0) {
                issues.push(Issue::new("DEMAND", at.clone(), "start and duration must be non-negative"));
            }
            let forced = d.forced_path.as_ref().map(|labels| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(j, l)| lookup(l, format!("{at}.forced_path[{j}]"), &mut issues))
                    .collect::<Vec<_>>()
            });
            let (Some(s), Some(t)) = (s, t) else { continue };
            for (id, role) in [(s, "source"), (t, "destination")] {
                if hidden.contains(&id) {
                    issues.push(Issue::new("DEMAND", format!("{at}.{role}"), "hidden attack nodes run no protocol"));
                }
            }
            let forced_path = match forced {
                None => None,
                Some(ids) if ids.iter().any(Option::is_none) => continue,
                Some(ids) => {
                    let ids: Vec<NodeId> = ids.into_iter().flatten().collect();
                    if ids.first() != Some(&s) || ids.last() != Some(&t) {
                        issues.push(Issue::new(
                            "DEMAND",
                            format!("{at}.forced_path"),
                            "forced path must start at the source and end at the destination",
                        ));
                    }
                    Some(ids)
                }
            };
            demands.push(Demand { source: s, destination: t, start: d.start, rate: d.rate, duration: d.duration, forced_path });
        }

        if !issues.is_empty() {
            return Err(issues);
        }
        Ok(Self {
            name: file.name.clone(),
            seed: file.seed,
            duration: file.duration,
            graph,
            protocol: file.protocol.clone(),
            mac: file.mac.clone(),
            clock_skew,
            attacks,
            demands,
            detection: file.detection.clone(),
        })
    }

    /// Nodes that belong to any attack.
    pub fn malicious_nodes(&self) -> BTreeSet<NodeId> {
        self.attacks.iter().flat_map(AttackConfig::endpoints).collect()
    }

    /// The connectivity graph as the protocols perceive it: honest links
    /// plus one link per tunnel.
    pub fn perceived_graph(&self) -> crate::error::Result<ConnectivityGraph> {
        let mut g = self.graph.clone();
        for (k, a) in self.attacks.iter().enumerate() {
            if let Some(b) = a.endpoint_b {
                if a.has_tunnel() && !g.honest_adjacent(a.endpoint_a, b) {
                    g = g.augment_wormhole(a.endpoint_a, b, k)?;
                }
            }
            if a.has(AttackMode::HighPower) && a.endpoint_b.is_none() {
                g = g.augment_extended_range(a.endpoint_a, a.range_multiplier, k)?;
            }
        }
        Ok(g)
    }
}

fn attack_from_spec(spec: &AttackSpec, a: NodeId, b: Option<NodeId>) -> AttackConfig {
    let mut cfg = AttackConfig::new(spec.modes.iter().copied(), a, b);
    if let Some(v) = spec.visibility {
        cfg = cfg.with_visibility(v);
    }
    if let Some(l) = spec.tunnel_latency {
        cfg = cfg.with_latency(l);
    }
    cfg.range_multiplier = spec
        .range_multiplier
        .unwrap_or(if cfg.has(AttackMode::HighPower) { 2.0 } else { 1.0 });
    if let Some(p) = &spec.exploitation {
        cfg = cfg.with_exploitation(p.clone());
    }
    cfg
}

fn build_topology(spec: &TopologySpec, boundary: Boundary) -> Result<ConnectivityGraph, Issue> {
    let issue = |m: String| Issue::new("TOPOLOGY", "topology", m);
    match spec {
        TopologySpec::Fixture(name) => {
            let file = fixtures::load(name).map_err(|_| {
                Issue::new("UNKNOWN_FIXTURE", "topology.fixture", format!("no shipped fixture named {name:?}"))
            })?;
            file.graph(boundary).map_err(|e| issue(e.to_string()))
        }
        TopologySpec::Explicit { radio_range, nodes } => {
            if nodes.is_empty() {
                return Err(issue("explicit topology needs at least one node".into()));
            }
            let positions: Vec<Position> = nodes.iter().map(|n| Position::new(n.x, n.y)).collect();
            let labels = nodes.iter().map(|n| n.label.clone()).collect();
            ConnectivityGraph::with_boundary(&positions, *radio_range, boundary)
                .and_then(|g| g.with_labels(labels))
                .map_err(|e| issue(e.to_string()))
        }
        TopologySpec::Random { node_count, radio_range, area_width, area_height, seed } => TopologyConfig {
            node_count: *node_count,
            radio_range: *radio_range,
            area_width: *area_width,
            area_height: *area_height,
            placement: Placement::UniformRandom { seed: *seed },
            boundary,
        }
        .build()
        .map_err(|e| issue(e.to_string())),
    }
}

fn parse_issue(e: &serde_json::Error) -> Issue {
    let code = match e.classify() {
        serde_json::error::Category::Data => "SCHEMA",
        _ => "PARSE",
    };
    Issue::new(code, format!("line {} column {}", e.line(), e.column()), e.to_string())
}

/// Every problem with a scenario document; empty means valid.
pub fn validate_scenario(text: &str) -> Vec<Issue> {
    match Scenario::parse(text) {
        Ok(_) => Vec::new(),
        Err(issues) => issues,
    }
}
