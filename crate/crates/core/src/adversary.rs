//! Wormhole attack configurations: the five launch modes, endpoint
//! visibility, second-phase exploitation, and composition of modes into
//! complex attacks.
//!
//! A composed attack is evaluated as a three-stage pipeline. The *form*
//! stage decides whether captured frames are replayed raw or re-framed after
//! encapsulation. The *transport* stage decides how they reach the far end
//! (honest multihop path, private link, local re-emission, or boosted
//! power). The *timing* stage decides whether the malicious nodes back off.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::packet::{Frame, PacketKind, Payload, Tunnel};
use crate::topology::{ConnectivityGraph, NodeId};
use crate::trace::DropReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Encapsulation,
    OutOfBand,
    HighPower,
    PacketRelay,
    ProtocolDeviation,
}

impl AttackMode {
    pub const ALL: [AttackMode; 5] = [
        AttackMode::Encapsulation,
        AttackMode::OutOfBand,
        AttackMode::HighPower,
        AttackMode::PacketRelay,
        AttackMode::ProtocolDeviation,
    ];

    /// Fewest malicious nodes able to launch the mode on its own.
    pub fn min_malicious_nodes(self) -> usize {
        match self {
            AttackMode::Encapsulation | AttackMode::OutOfBand => 2,
            AttackMode::HighPower | AttackMode::PacketRelay | AttackMode::ProtocolDeviation => 1,
        }
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttackMode::Encapsulation => "encapsulation",
            AttackMode::OutOfBand => "out_of_band",
            AttackMode::HighPower => "high_power",
            AttackMode::PacketRelay => "packet_relay",
            AttackMode::ProtocolDeviation => "protocol_deviation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Open,
    HalfOpen,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropSelector {
    AllData,
    ControlOnly,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploitPolicy {
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub drop_selector: DropSelector,
    /// Alternating off/on instants; the link starts up.
    #[serde(default)]
    pub toggle_schedule: Vec<f64>,
    #[serde(default)]
    pub record_only: bool,
}

impl ExploitPolicy {
    pub fn record_only() -> Self {
        Self { record_only: true, ..Self::default() }
    }

    pub fn selective_drop(p: f64, selector: DropSelector) -> Self {
        Self { drop_probability: p, drop_selector: selector, ..Self::default() }
    }

    pub fn toggling(schedule: Vec<f64>) -> Self {
        Self { toggle_schedule: schedule, ..Self::default() }
    }

    fn selects(&self, kind: PacketKind) -> bool {
        match self.drop_selector {
            DropSelector::AllData => kind == PacketKind::Data,
            DropSelector::ControlOnly => kind.is_control(),
            DropSelector::None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Drop,
}

/// Second-phase decision for one packet crossing a wormhole link.
pub fn apply_exploitation<R: Rng + ?Sized>(policy: &ExploitPolicy, kind: PacketKind, rng: &mut R) -> Verdict {
    if policy.record_only || !policy.selects(kind) || policy.drop_probability <= 0.0 {
        return Verdict::Forward;
    }
    if rng.gen::<f64>() < policy.drop_probability {
        Verdict::Drop
    } else {
        Verdict::Forward
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub modes: BTreeSet<AttackMode>,
    pub endpoint_a: NodeId,
    pub endpoint_b: Option<NodeId>,
    pub visibility: Visibility,
    /// Delay across a private link; defaults to the MAC transmission time.
    pub tunnel_latency: Option<f64>,
    pub range_multiplier: f64,
    pub exploitation: ExploitPolicy,
}

/// Machine-readable rejection codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectCode {
    EmptyModes,
    MinNodes,
    MeaninglessCombo,
    UnlistedCombo,
    RangeMultiplier,
    ExploitPolicy,
    ToggleOrder,
    Visibility,
    TunnelLatency,
    SameEndpoint,
    AdjacentEndpoints,
    UnknownNode,
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("codes serialize");
        f.write_str(s.as_str().unwrap_or("UNKNOWN"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: RejectCode,
    pub message: String,
}

impl Rejection {
    fn new(code: RejectCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Multi-mode combinations that compose into a working attack.
pub const VALID_COMBINATIONS: &[&[AttackMode]] = &[
    &[AttackMode::Encapsulation, AttackMode::OutOfBand],
    &[AttackMode::Encapsulation, AttackMode::ProtocolDeviation],
    &[AttackMode::Encapsulation, AttackMode::PacketRelay],
    &[AttackMode::PacketRelay, AttackMode::ProtocolDeviation],
    &[AttackMode::OutOfBand, AttackMode::PacketRelay],
    &[AttackMode::HighPower, AttackMode::PacketRelay],
    &[AttackMode::Encapsulation, AttackMode::PacketRelay, AttackMode::ProtocolDeviation],
    &[AttackMode::Encapsulation, AttackMode::OutOfBand, AttackMode::PacketRelay],
];

fn combination_is_listed(modes: &BTreeSet<AttackMode>) -> bool {
    modes.len() == 1
        || VALID_COMBINATIONS
            .iter()
            .any(|combo| combo.len() == modes.len() && combo.iter().all(|m| modes.contains(m)))
}

/// How captured frames cross from one endpoint to the other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transport {
    /// No tunnel: the attacker only changes its own forwarding behaviour.
    None,
    /// A single relay re-emits what it hears.
    Local,
    /// Private link (wired or directional) with fixed latency.
    Direct { latency: f64 },
    /// Wrapped as data and carried over the honest network.
    Encapsulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// The exit replays the captured frame verbatim, leash included.
    Raw,
    /// The exit transmits a fresh frame built from the decapsulated payload.
    Reframed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline {
    pub form: Form,
    pub transport: Transport,
    pub zero_backoff: bool,
    pub emit_multiplier: f64,
}

impl AttackConfig {
    pub fn new(modes: impl IntoIterator<Item = AttackMode>, endpoint_a: NodeId, endpoint_b: Option<NodeId>) -> Self {
        let modes: BTreeSet<AttackMode> = modes.into_iter().collect();
        let visibility = if modes.contains(&AttackMode::PacketRelay) { Visibility::Closed } else { Visibility::Open };
        Self {
            modes,
            endpoint_a,
            endpoint_b,
            visibility,
            tunnel_latency: None,
            range_multiplier: 1.0,
            exploitation: ExploitPolicy::record_only(),
        }
    }

    pub fn with_visibility(mut self, visibility: Visibility) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn with_latency(mut self, latency: f64) -> Self {
        self.tunnel_latency = Some(latency);
        self
    }

    pub fn with_range_multiplier(mut self, multiplier: f64) -> Self {
        self.range_multiplier = multiplier;
        self
    }

    pub fn with_exploitation(mut self, policy: ExploitPolicy) -> Self {
        self.exploitation = policy;
        self
    }

    pub fn has(&self, mode: AttackMode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn endpoints(&self) -> Vec<NodeId> {
        std::iter::once(self.endpoint_a).chain(self.endpoint_b).collect()
    }

    pub fn partner(&self, endpoint: NodeId) -> Option<NodeId> {
        match self.endpoint_b {
            Some(b) if endpoint == self.endpoint_a => Some(b),
            Some(b) if endpoint == b => Some(self.endpoint_a),
            None if endpoint == self.endpoint_a && self.transport_kind_is_local() => Some(endpoint),
            _ => None,
        }
    }

    fn transport_kind_is_local(&self) -> bool {
        matches!(self.pipeline(1.0).transport, Transport::Local)
    }

    /// Whether `endpoint` appends itself to route records.
    pub fn is_visible(&self, endpoint: NodeId) -> bool {
        match self.visibility {
            Visibility::Open => true,
            Visibility::HalfOpen => endpoint == self.endpoint_a,
            Visibility::Closed => false,
        }
    }

    pub fn has_tunnel(&self) -> bool {
        self.has(AttackMode::Encapsulation) || self.has(AttackMode::OutOfBand) || self.has(AttackMode::PacketRelay)
    }

    pub fn pipeline(&self, default_latency: f64) -> Pipeline {
        let latency = self.tunnel_latency.unwrap_or(default_latency);
        let transport = if self.has(AttackMode::OutOfBand) {
            Transport::Direct { latency }
        } else if self.has(AttackMode::Encapsulation) {
            Transport::Encapsulated
        } else if self.has(AttackMode::PacketRelay) {
            if self.endpoint_b.is_some() {
                Transport::Direct { latency }
            } else {
                Transport::Local
            }
        } else {
            Transport::None
        };
        Pipeline {
            form: if self.has(AttackMode::Encapsulation) { Form::Reframed } else { Form::Raw },
            transport,
            zero_backoff: self.has(AttackMode::ProtocolDeviation),
            emit_multiplier: if self.has(AttackMode::HighPower) { self.range_multiplier } else { 1.0 },
        }
    }

    /// Every rule violation of this configuration, independent of topology.
    pub fn violations(&self) -> Vec<Rejection> {
        let mut out = Vec::new();
        if self.modes.is_empty() {
            out.push(Rejection::new(RejectCode::EmptyModes, "an attack needs at least one mode"));
            return out;
        }
        let needed = self.modes.iter().map(|m| m.min_malicious_nodes()).max().unwrap_or(1);
        let have = self.endpoints().len();
        if have < needed {
            let mode = self.modes.iter().find(|m| m.min_malicious_nodes() == needed).expect("max exists");
            out.push(Rejection::new(
                RejectCode::MinNodes,
                format!("{mode} needs {needed} malicious nodes, {have} given"),
            ));
        }
        if self.endpoint_b == Some(self.endpoint_a) {
            out.push(Rejection::new(RejectCode::SameEndpoint, "endpoints must be distinct nodes"));
        }
        if self.has(AttackMode::Encapsulation) && self.has(AttackMode::HighPower) {
            out.push(Rejection::new(
                RejectCode::MeaninglessCombo,
                "encapsulated packets broadcast at high power reach arbitrary nodes, defeating the targeted tunnel",
            ));
        } else if !combination_is_listed(&self.modes) {
            let names: Vec<String> = self.modes.iter().map(ToString::to_string).collect();
            out.push(Rejection::new(
                RejectCode::UnlistedCombo,
                format!("{{{}}} is not a supported complex attack", names.join(", ")),
            ));
        }
        let boosted = self.range_multiplier > 1.0;
        if !self.range_multiplier.is_finite() || self.range_multiplier < 1.0 || boosted != self.has(AttackMode::HighPower) {
            out.push(Rejection::new(
                RejectCode::RangeMultiplier,
                format!("range multiplier {} must exceed 1 exactly when high_power is used", self.range_multiplier),
            ));
        }
        if self.has(AttackMode::PacketRelay) && self.visibility != Visibility::Closed {
            out.push(Rejection::new(RejectCode::Visibility, "relays are invisible; visibility must be closed"));
        }
        if !self.has_tunnel() && self.visibility != Visibility::Open {
            out.push(Rejection::new(
                RejectCode::Visibility,
                "attacks without a tunnel act as ordinary forwarders; visibility must be open",
            ));
        }
        if let Some(l) = self.tunnel_latency {
            if !(l.is_finite() && l >= 0.0) {
                out.push(Rejection::new(RejectCode::TunnelLatency, "tunnel latency must be non-negative"));
            }
        }
        let policy = &self.exploitation;
        if !(0.0..=1.0).contains(&policy.drop_probability) {
            out.push(Rejection::new(RejectCode::ExploitPolicy, "drop probability must lie in [0, 1]"));
        }
        if policy.record_only && (policy.drop_probability != 0.0 || !policy.toggle_schedule.is_empty()) {
            out.push(Rejection::new(
                RejectCode::ExploitPolicy,
                "record_only forbids dropping and toggling",
            ));
        }
        let toggles = &policy.toggle_schedule;
        if toggles.iter().any(|t| !t.is_finite() || *t < 0.0) || toggles.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Rejection::new(RejectCode::ToggleOrder, "toggle times must be non-negative and strictly increasing"));
        }
        out
    }

    /// Violations that depend on where the endpoints sit.
    pub fn topology_violations(&self, graph: &ConnectivityGraph) -> Vec<Rejection> {
        let mut out = Vec::new();
        for e in self.endpoints() {
            if !graph.contains(e) {
                out.push(Rejection::new(RejectCode::UnknownNode, format!("endpoint {e} is not in the topology")));
            }
        }
        if !out.is_empty() {
            return out;
        }
        if let Some(b) = self.endpoint_b {
            let tunnelled = self.has(AttackMode::Encapsulation) || self.has(AttackMode::OutOfBand);
            if tunnelled && b != self.endpoint_a && graph.honest_adjacent(self.endpoint_a, b) {
                out.push(Rejection::new(
                    RejectCode::AdjacentEndpoints,
                    format!("{} and {} are already neighbours", graph.label(self.endpoint_a), graph.label(b)),
                ));
            }
        }
        out
    }
}

/// Builds and validates a (possibly complex) attack in one step.
pub fn compose_complex_attack(
    modes: impl IntoIterator<Item = AttackMode>,
    endpoint_a: NodeId,
    endpoint_b: Option<NodeId>,
    visibility: Visibility,
) -> Result<AttackConfig, Vec<Rejection>> {
    let mut cfg = AttackConfig::new(modes, endpoint_a, endpoint_b).with_visibility(visibility);
    if cfg.has(AttackMode::HighPower) {
        cfg.range_multiplier = 2.0;
    }
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(v)
    }
}

/// Wraps a captured frame for transport along `path` (entry first).
pub fn encapsulate(inner: &Frame, attack: usize, path: Vec<NodeId>, frame_id: u64) -> Frame {
    let entry = path[0];
    Frame {
        id: frame_id,
        link_src: entry,
        link_dst: path.get(1).copied(),
        leash: None,
        true_path: Vec::new(),
        payload: Payload::Tunnel(Tunnel { attack, path, carried_by: Vec::new(), inner: inner.encode() }),
    }
}

/// Recovers the captured frame and credits the tunnel carriers to its true path.
pub fn decapsulate(tunnel: &Tunnel) -> Result<Frame, DropReason> {
    let mut inner = Frame::decode(&tunnel.inner).ok_or(DropReason::MalformedTunnel)?;
    inner.true_path.extend(tunnel.carried_by.iter().copied());
    Ok(inner)
}
