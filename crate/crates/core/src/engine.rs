//! Deterministic discrete-event loop. Events are ordered by time and then
//! by scheduling sequence; all randomness comes from per-node and
//! per-attack ChaCha streams derived from the run seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{apply_exploitation, decapsulate, encapsulate, AttackConfig, Form, Pipeline, Transport, Verdict};
use crate::aodv::{AodvNode, Neighbor};
use crate::detection::{hop_lower_bound_check, leash_alarms, RULE_HOP_BOUND};
use crate::dv::{trace_route, DvNode, DvTable};
use crate::packet::{Data, Frame, Leash, PacketKind, Payload, Tunnel};
use crate::scenario::{ProtocolConfig, Scenario};
use crate::topology::{NodeId, Position};
use crate::trace::{Channel, DropReason, EndReason, Trace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub tx_time: f64,
    pub backoff_max: f64,
    /// Arrivals at one receiver closer than this collide; zero disables.
    pub collision_window: f64,
    /// Private-link delay; defaults to `tx_time`.
    pub tunnel_latency: Option<f64>,
    pub signal_speed: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self { tx_time: 2.0e-3, backoff_max: 4.0e-5, collision_window: 0.0, tunnel_latency: None, signal_speed: 3.0e8 }
    }
}

impl MacConfig {
    pub fn tunnel_latency(&self) -> f64 {
        self.tunnel_latency.unwrap_or(self.tx_time)
    }

    pub fn check(&self) -> Result<(), String> {
        let finite = [self.tx_time, self.backoff_max, self.collision_window, self.signal_speed]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.tx_time < 0.0 || self.backoff_max <= 0.0 || self.collision_window < 0.0 || self.signal_speed <= 0.0 {
            return Err("MAC times must be non-negative, backoff_max and signal_speed positive".into());
        }
        if self.collision_window > self.tx_time {
            return Err("collision_window may not exceed tx_time".into());
        }
        if self.tunnel_latency.is_some_and(|l| !(l.is_finite() && l >= 0.0)) {
            return Err("tunnel_latency must be non-negative".into());
        }
        Ok(())
    }
}

/// Survival flag per arrival: an arrival survives unless another lies
/// strictly within `window` of it.
pub fn resolve_collisions(arrivals: &[f64], window: f64) -> Vec<bool> {
    arrivals
        .iter()
        .enumerate()
        .map(|(i, t)| window <= 0.0 || !arrivals.iter().enumerate().any(|(j, u)| i != j && (u - t).abs() < window))
        .collect()
}

/// Link-toggle times for an attack: the link starts up and flips at each
/// scheduled time, so even positions switch it off.
pub fn toggle_wormhole(cfg: &AttackConfig) -> Vec<(f64, bool)> {
    cfg.exploitation.toggle_schedule.iter().enumerate().map(|(i, t)| (*t, i % 2 == 1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    Hello,
    DvTick,
    DiscoveryDeadline { destination: NodeId, rreq_id: u32 },
    RetryDiscovery { destination: NodeId, attempt: u32 },
    LinkFailure { next_hop: NodeId, packet: PacketKind, packet_id: u64 },
    Demand { demand: usize, seq: u64 },
}

#[derive(Debug, Clone)]
enum EventKind {
    Transmit { node: NodeId, frame: Frame, restamp: bool },
    Deliver { node: NodeId, frame: Frame, channel: Channel, from: NodeId },
    Timer { node: NodeId, timer: Timer },
    LinkToggle { attack: usize, up: bool },
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CaptureKey {
    Request(NodeId, u32),
    Frame(u64),
}

fn capture_key(frame: &Frame) -> CaptureKey {
    match &frame.payload {
        Payload::Rreq(r) => CaptureKey::Request(r.origin, r.rreq_id),
        _ => CaptureKey::Frame(frame.id),
    }
}

#[derive(Debug, Clone)]
struct AttackState {
    cfg: AttackConfig,
    pipe: Pipeline,
    up: bool,
    seen: BTreeSet<CaptureKey>,
    /// Honest source routes used by encapsulation, keyed by entry.
    paths: BTreeMap<NodeId, Vec<NodeId>>,
}

/// Shared simulation state handed to protocol handlers.
pub struct Core<'a> {
    sc: &'a Scenario,
    now: f64,
    queue: BinaryHeap<Event>,
    seq: u64,
    next_frame: u64,
    trace: Trace,
    node_rng: Vec<ChaCha8Rng>,
    attack_rng: Vec<ChaCha8Rng>,
    roles: Vec<Option<usize>>,
    attacks: Vec<AttackState>,
    arrivals: Vec<Vec<(f64, u64)>>,
    demand_index: BTreeMap<(NodeId, NodeId), usize>,
}

impl<'a> Core<'a> {
    fn new(sc: &'a Scenario, seed: u64) -> Self {
        let n = sc.graph.len();
        let node_rng = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        let attack_rng = (0..sc.attacks.len())
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream((1u64 << 32) + k as u64);
                r
            })
            .collect();
        let mut roles = vec![None; n];
        let mut attacks = Vec::new();
        for (k, cfg) in sc.attacks.iter().enumerate() {
            for e in cfg.endpoints() {
                roles[e.index()] = Some(k);
            }
            let mut paths = BTreeMap::new();
            if let (Some(b), Transport::Encapsulated) = (cfg.endpoint_b, cfg.pipeline(sc.mac.tunnel_latency()).transport) {
                for (from, to) in [(cfg.endpoint_a, b), (b, cfg.endpoint_a)] {
                    if let Ok(Some(p)) = sc.graph.shortest_path(from, to, false) {
                        paths.insert(from, p);
                    }
                }
            }
            attacks.push(AttackState {
                cfg: cfg.clone(),
                pipe: cfg.pipeline(sc.mac.tunnel_latency()),
                up: true,
                seen: BTreeSet::new(),
                paths,
            });
        }
        let mut demand_index = BTreeMap::new();
        for (i, d) in sc.demands.iter().enumerate() {
            demand_index.entry((d.source, d.destination)).or_insert(i);
        }
        Self {
            sc,
            now: 0.0,
            queue: BinaryHeap::new(),
            seq: 0,
            next_frame: 0,
            trace: Trace::new(),
            node_rng,
            attack_rng,
            roles,
            attacks,
            arrivals: vec![Vec::new(); n],
            demand_index,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn position(&self, node: NodeId) -> Position {
        self.sc.graph.position(node)
    }

    pub fn local_clock(&self, node: NodeId) -> f64 {
        self.now + self.sc.clock_skew.get(node.index()).copied().unwrap_or(0.0)
    }

    pub fn uniform(&mut self, node: NodeId, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.node_rng[node.index()].gen_range(lo..=hi)
        } else {
            lo
        }
    }

    pub fn record(&mut self, event: TraceEvent) {
        self.trace.push(self.now, event);
    }

    pub fn drop_frame(&mut self, node: NodeId, frame: &Frame, reason: DropReason) {
        self.record(TraceEvent::Drop { node, packet_id: Some(frame.id), packet: Some(frame.kind()), reason });
    }

    pub fn demand_of(&self, source: NodeId, destination: NodeId) -> Option<usize> {
        self.demand_index.get(&(source, destination)).copied()
    }

    fn schedule(&mut self, time: f64, kind: EventKind) -> u64 {
        debug_assert!(time >= self.now);
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, kind });
        self.seq
    }

    pub fn set_timer(&mut self, node: NodeId, delay: f64, timer: Timer) {
        self.schedule(self.now + delay, EventKind::Timer { node, timer });
    }

    fn frame_id(&mut self) -> u64 {
        self.next_frame += 1;
        self.next_frame
    }

    /// Queues a new link-layer frame from `node`, after a contention backoff
    /// when `backoff` is set.
    pub fn send(&mut self, node: NodeId, dst: Option<NodeId>, payload: Payload, true_path: Vec<NodeId>, backoff: bool) {
        let delay = if backoff && !self.zero_backoff(node) {
            let b = self.sc.mac.backoff_max;
            self.node_rng[node.index()].gen_range(0.0..=b)
        } else {
            0.0
        };
        let frame = Frame { id: self.frame_id(), link_src: node, link_dst: dst, leash: None, true_path, payload };
        self.schedule(self.now + delay, EventKind::Transmit { node, frame, restamp: true });
    }

    /// Applies the in-line hop-count bound at an origin; true means the
    /// reply was discarded.
    pub fn inline_hop_bound_rejects(&mut self, node: NodeId, origin: Position, destination: Position, hops: u32) -> bool {
        let det = &self.sc.detection;
        if !(det.inline && det.hop_bound) || self.is_attacker(node) {
            return false;
        }
        let range = det.leash.radio_range.unwrap_or(self.sc.graph.radio_range());
        if !hop_lower_bound_check(origin, destination, range, hops) {
            return false;
        }
        let bound = crate::detection::hop_lower_bound(origin, destination, range);
        self.record(TraceEvent::Alarm {
            node,
            rule: RULE_HOP_BOUND.into(),
            packet_id: None,
            evidence: vec![hops as f64, bound as f64, origin.distance(&destination)],
        });
        true
    }

    fn attack_of(&self, node: NodeId) -> Option<usize> {
        self.roles.get(node.index()).copied().flatten()
    }

    fn is_attacker(&self, node: NodeId) -> bool {
        self.attack_of(node).is_some()
    }

    /// Hidden endpoints run no protocol and only capture and replay.
    pub fn is_hidden(&self, node: NodeId) -> bool {
        self.attack_of(node).is_some_and(|k| !self.attacks[k].cfg.is_visible(node))
    }

    fn zero_backoff(&self, node: NodeId) -> bool {
        self.attack_of(node).is_some_and(|k| self.attacks[k].pipe.zero_backoff)
    }

    fn multiplier(&self, node: NodeId) -> f64 {
        self.attack_of(node).map_or(1.0, |k| self.attacks[k].pipe.emit_multiplier)
    }

    /// Radio reachability; a high-power node both sends and hears further.
    fn reach(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.sc.graph.in_range(a, b, self.multiplier(a).max(self.multiplier(b)))
    }

    fn tunnel_partner(&self, k: usize, node: NodeId) -> Option<NodeId> {
        let a = &self.attacks[k];
        if matches!(a.pipe.transport, Transport::None) {
            return None;
        }
        a.cfg.partner(node)
    }

    /// Visible endpoint with a tunnel to a distinct partner.
    fn visible_tunnel(&self, node: NodeId) -> Option<usize> {
        let k = self.attack_of(node)?;
        let partner = self.tunnel_partner(k, node)?;
        (partner != node && self.attacks[k].cfg.is_visible(node)).then_some(k)
    }

    fn tunnel_carries_unicast(&self, k: usize, sender: NodeId, dst: NodeId) -> bool {
        let Some(p) = self.tunnel_partner(k, sender) else { return false };
        dst == p || (!self.reach(sender, dst) && !self.attacks[k].cfg.is_visible(p) && self.reach(p, dst))
    }

    /// Whether hidden endpoint `e` would carry a unicast from `sender` to `dst`.
    fn captures_unicast(&self, e: NodeId, sender: NodeId, dst: NodeId) -> bool {
        let Some(k) = self.attack_of(e) else { return false };
        let Some(x) = self.tunnel_partner(k, e) else { return false };
        if dst == e || self.reach(sender, dst) {
            return false;
        }
        if x != e && self.attacks[k].cfg.is_visible(x) {
            dst == x
        } else {
            self.reach(x, dst)
        }
    }

    fn tunnel_usable(&self, k: usize, entry: NodeId) -> bool {
        let a = &self.attacks[k];
        a.up && (!matches!(a.pipe.transport, Transport::Encapsulated) || a.paths.contains_key(&entry))
    }

    fn unicast_reachable(&self, sender: NodeId, dst: NodeId) -> bool {
        if self.reach(sender, dst) {
            return true;
        }
        self.sc.graph.node_ids().any(|e| {
            self.is_hidden(e)
                && self.reach(sender, e)
                && self.captures_unicast(e, sender, dst)
                && self.attack_of(e).is_some_and(|k| self.tunnel_usable(k, e))
        })
    }

    fn link_failure(&mut self, node: NodeId, dst: NodeId, frame: &Frame) {
        if self.is_hidden(node) {
            return;
        }
        let timer = Timer::LinkFailure { next_hop: dst, packet: frame.kind(), packet_id: frame.id };
        self.set_timer(node, self.sc.mac.tx_time, timer);
    }

    fn fire_transmit(&mut self, node: NodeId, mut frame: Frame, restamp: bool) {
        if restamp {
            frame.leash = Some(Leash { stamper: node, position: self.position(node), time: self.local_clock(node) });
        }
        let tunnel = self.visible_tunnel(node);
        if let (Some(k), Some(dst)) = (tunnel, frame.link_dst) {
            if self.tunnel_carries_unicast(k, node, dst) {
                if !self.tunnel_send(k, node, frame.clone()) {
                    self.link_failure(node, dst, &frame);
                }
                return;
            }
        }
        let multiplier = self.multiplier(node);
        self.record(TraceEvent::Transmit {
            node,
            packet_id: frame.id,
            packet: frame.kind(),
            channel: Channel::Radio,
            dst: frame.link_dst,
            range_multiplier: multiplier,
        });
        self.radiate(node, &frame);
        match frame.link_dst {
            None => {
                if let Some(k) = tunnel {
                    self.tunnel_send(k, node, frame);
                }
            }
            Some(dst) => {
                if !self.unicast_reachable(node, dst) {
                    self.link_failure(node, dst, &frame);
                }
            }
        }
    }

    /// Schedules radio deliveries to every node in range of `sender`.
    fn radiate(&mut self, sender: NodeId, frame: &Frame) {
        let mac = &self.sc.mac;
        let (tx, speed, window) = (mac.tx_time, mac.signal_speed, mac.collision_window);
        let receivers: Vec<NodeId> = self.sc.graph.node_ids().filter(|v| self.reach(sender, *v)).collect();
        for v in receivers {
            let at = self.now + tx + self.sc.graph.distance(sender, v) / speed;
            let relevant = frame.is_broadcast() || frame.link_dst == Some(v) || self.is_hidden(v);
            let seq = if relevant {
                self.schedule(at, EventKind::Deliver { node: v, frame: frame.clone(), channel: Channel::Radio, from: sender })
            } else {
                self.seq += 1;
                self.seq
            };
            if window > 0.0 {
                self.arrivals[v.index()].push((at, seq));
            }
        }
    }

    fn collided(&mut self, node: NodeId, seq: u64) -> bool {
        let window = self.sc.mac.collision_window;
        if window <= 0.0 {
            return false;
        }
        let now = self.now;
        let list = &mut self.arrivals[node.index()];
        let hit = list.iter().any(|(t, s)| *s != seq && (t - now).abs() < window);
        list.retain(|(t, _)| *t > now - window);
        hit
    }

    fn mark_seen(&mut self, k: usize, frame: &Frame) -> bool {
        self.attacks[k].seen.insert(capture_key(frame))
    }

    /// Moves a frame from `entry` to its partner. Returns false when the
    /// tunnel could not take it.
    fn tunnel_send(&mut self, k: usize, entry: NodeId, frame: Frame) -> bool {
        let Some(exit) = self.tunnel_partner(k, entry) else { return false };
        if !self.attacks[k].up {
            self.drop_frame(entry, &frame, DropReason::TunnelDown);
            return false;
        }
        self.mark_seen(k, &frame);
        let verdict = {
            let policy = &self.attacks[k].cfg.exploitation;
            apply_exploitation(policy, frame.kind(), &mut self.attack_rng[k])
        };
        let dropped = verdict == Verdict::Drop;
        self.record(TraceEvent::TunnelTransit {
            node: entry,
            exit,
            attack: k,
            packet_id: frame.id,
            packet: frame.kind(),
            dropped,
        });
        if dropped {
            self.drop_frame(entry, &frame, DropReason::WormholeDrop);
            return true;
        }
        let pipe = self.attacks[k].pipe;
        match pipe.transport {
            Transport::None => return false,
            Transport::Local => {
                self.schedule(self.now, EventKind::Transmit { node: entry, frame, restamp: pipe.form == Form::Reframed });
            }
            Transport::Direct { latency } => {
                self.record(TraceEvent::Transmit {
                    node: entry,
                    packet_id: frame.id,
                    packet: frame.kind(),
                    channel: Channel::Tunnel,
                    dst: Some(exit),
                    range_multiplier: 1.0,
                });
                self.schedule(self.now + latency, EventKind::Deliver { node: exit, frame, channel: Channel::Tunnel, from: entry });
            }
            Transport::Encapsulated => {
                let Some(path) = self.attacks[k].paths.get(&entry).cloned() else {
                    self.record(TraceEvent::TunnelFailure { attack: k, node: entry, exit });
                    self.drop_frame(entry, &frame, DropReason::TunnelFailure);
                    return false;
                };
                let id = self.frame_id();
                let wrapped = encapsulate(&frame, k, path, id);
                self.schedule(self.now, EventKind::Transmit { node: entry, frame: wrapped, restamp: true });
            }
        }
        true
    }

    /// A hidden endpoint overhears a radio frame.
    fn capture(&mut self, e: NodeId, mut frame: Frame, from: NodeId) {
        let Some(k) = self.attack_of(e) else { return };
        if matches!(frame.payload, Payload::Tunnel(_)) || self.attacks[k].seen.contains(&capture_key(&frame)) {
            return;
        }
        let eligible = match frame.link_dst {
            None => true,
            Some(dst) => self.captures_unicast(e, from, dst),
        };
        if !eligible {
            return;
        }
        self.record_delivery(e, &frame, Channel::Radio, from);
        frame.true_path.push(e);
        self.tunnel_send(k, e, frame);
    }

    /// A hidden exit puts a tunnelled frame back on the air.
    fn reemit(&mut self, x: NodeId, frame: Frame) {
        let Some(k) = self.attack_of(x) else { return };
        let restamp = self.attacks[k].pipe.form == Form::Reframed;
        self.schedule(self.now, EventKind::Transmit { node: x, frame, restamp });
    }

    fn record_delivery(&mut self, node: NodeId, frame: &Frame, channel: Channel, from: NodeId) {
        let receive_time = match channel {
            Channel::Radio => self.local_clock(node) - self.sc.mac.tx_time,
            Channel::Tunnel => self.local_clock(node),
        };
        self.record(TraceEvent::Deliver {
            node,
            packet_id: frame.id,
            packet: frame.kind(),
            from,
            channel,
            leash: frame.leash,
            receiver_position: self.position(node),
            receive_time,
        });
    }

    /// In-line leash enforcement at honest receivers; true means discard.
    fn leash_rejects(&mut self, node: NodeId, frame: &Frame, channel: Channel) -> bool {
        let det = &self.sc.detection;
        if !det.inline || self.is_attacker(node) {
            return false;
        }
        let Some(leash) = frame.leash else { return false };
        let range = det.leash.radio_range.unwrap_or(self.sc.graph.radio_range());
        let receive_time = match channel {
            Channel::Radio => self.local_clock(node) - self.sc.mac.tx_time,
            Channel::Tunnel => self.local_clock(node),
        };
        let fired = leash_alarms(det, range, leash.position, leash.time, self.position(node), receive_time);
        if fired.is_empty() {
            return false;
        }
        let mut reason = DropReason::TemporalLeash;
        for (rule, evidence) in fired {
            if rule == crate::detection::RULE_GEOGRAPHIC {
                reason = DropReason::GeographicLeash;
            }
            self.record(TraceEvent::Alarm { node, rule: rule.into(), packet_id: Some(frame.id), evidence });
        }
        self.drop_frame(node, frame, reason);
        true
    }

    /// Physical hops behind a perceived link `u -> w`.
    fn physical_link(&self, u: NodeId, w: NodeId) -> Vec<NodeId> {
        if self.reach(u, w) {
            return vec![w];
        }
        let via_tunnel = |entry: NodeId, k: usize| -> Vec<NodeId> {
            let exit = self.tunnel_partner(k, entry).unwrap_or(entry);
            match self.attacks[k].paths.get(&entry) {
                Some(p) => p[1..].to_vec(),
                None if exit != entry => vec![exit],
                None => Vec::new(),
            }
        };
        if let Some(k) = self.visible_tunnel(u) {
            if self.tunnel_partner(k, u) == Some(w) {
                return via_tunnel(u, k);
            }
        }
        for e in self.sc.graph.node_ids() {
            if self.is_hidden(e) && self.reach(u, e) {
                let k = self.attack_of(e).expect("hidden nodes belong to an attack");
                let Some(x) = self.tunnel_partner(k, e) else { continue };
                if self.reach(x, w) || (x == w) {
                    let mut hops = vec![e];
                    hops.extend(via_tunnel(e, k));
                    if x != w {
                        hops.push(w);
                    }
                    return hops;
                }
            }
        }
        vec![w]
    }

    fn physical_route(&self, route: &[NodeId]) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = route.first().copied().into_iter().collect();
        for pair in route.windows(2) {
            out.extend(self.physical_link(pair[0], pair[1]));
        }
        out
    }
}

enum Proto {
    Aodv(Box<AodvNode>),
    Dv(DvNode),
    Silent,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    /// Final distance-vector tables, one per node (empty for on-demand runs;
    /// hidden attack nodes keep an empty table).
    pub dv_tables: Vec<DvTable>,
    /// Final HELLO neighbour tables, one per node (empty for non-AODV nodes).
    pub neighbors: Vec<BTreeMap<NodeId, Neighbor>>,
}

pub struct Simulator<'a> {
    core: Core<'a>,
    protos: Vec<Proto>,
    dv_routes: BTreeMap<usize, Vec<NodeId>>,
}

impl<'a> Simulator<'a> {
    pub fn new(sc: &'a Scenario, seed: u64) -> Self {
        let mut core = Core::new(sc, seed);
        let mut protos = Vec::new();
        for id in sc.graph.node_ids() {
            let p = if core.is_hidden(id) {
                Proto::Silent
            } else {
                match &sc.protocol {
                    ProtocolConfig::Aodv(c) => {
                        let first = core.uniform(id, 0.0, c.hello_interval.1);
                        core.set_timer(id, first, Timer::Hello);
                        Proto::Aodv(Box::new(AodvNode::new(id, c.clone())))
                    }
                    ProtocolConfig::Dv(c) => {
                        let first = core.uniform(id, 0.0, c.update_period);
                        core.set_timer(id, first, Timer::DvTick);
                        Proto::Dv(DvNode::new(id, c.clone()))
                    }
                }
            };
            protos.push(p);
        }
        for k in 0..sc.attacks.len() {
            for (t, up) in toggle_wormhole(&sc.attacks[k]) {
                core.schedule(t, EventKind::LinkToggle { attack: k, up });
            }
        }
        for (i, d) in sc.demands.iter().enumerate() {
            if d.packet_count() > 0 {
                core.schedule(d.start, EventKind::Timer { node: d.source, timer: Timer::Demand { demand: i, seq: 0 } });
            }
        }
        Self { core, protos, dv_routes: BTreeMap::new() }
    }

    pub fn run(mut self) -> RunOutput {
        let limit = self.core.sc.duration;
        let reason = loop {
            let Some(ev) = self.core.queue.pop() else { break EndReason::QueueEmpty };
            if ev.time > limit {
                self.core.now = limit;
                break EndReason::TimeLimit;
            }
            self.core.now = ev.time;
            self.dispatch(ev.seq, ev.kind);
        };
        self.core.record(TraceEvent::End { reason });
        let dv_tables = self
            .protos
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                Proto::Dv(n) => Some(n.table().clone()),
                Proto::Silent if matches!(self.core.sc.protocol, ProtocolConfig::Dv(_)) => {
                    Some(DvTable { owner: NodeId(i as u32), entries: BTreeMap::new() })
                }
                _ => None,
            })
            .collect();
        let neighbors = self
            .protos
            .iter()
            .map(|p| match p {
                Proto::Aodv(n) => n.neighbors().clone(),
                _ => BTreeMap::new(),
            })
            .collect();
        RunOutput { trace: self.core.trace, dv_tables, neighbors }
    }

    fn dispatch(&mut self, seq: u64, kind: EventKind) {
        match kind {
            EventKind::Transmit { node, frame, restamp } => self.core.fire_transmit(node, frame, restamp),
            EventKind::Deliver { node, frame, channel, from } => {
                if channel == Channel::Radio && self.core.collided(node, seq) {
                    self.core.drop_frame(node, &frame, DropReason::Collision);
                    return;
                }
                self.on_deliver(node, frame, channel, from);
            }
            EventKind::Timer { node, timer } => self.on_timer(node, timer),
            EventKind::LinkToggle { attack, up } => {
                self.core.attacks[attack].up = up;
                self.core.record(TraceEvent::LinkToggle { attack, up });
            }
        }
    }

    fn on_deliver(&mut self, v: NodeId, mut frame: Frame, channel: Channel, from: NodeId) {
        let core = &mut self.core;
        if core.is_hidden(v) {
            if matches!(frame.payload, Payload::Tunnel(_)) && frame.link_dst == Some(v) {
                core.record_delivery(v, &frame, channel, from);
                self.on_tunnel_packet(v, frame);
            } else if channel == Channel::Tunnel {
                core.record_delivery(v, &frame, channel, from);
                frame.true_path.push(v);
                core.reemit(v, frame);
            } else {
                core.capture(v, frame, from);
            }
            return;
        }
        if frame.link_dst.is_some_and(|d| d != v) {
            return;
        }
        core.record_delivery(v, &frame, channel, from);
        frame.true_path.push(v);
        if core.leash_rejects(v, &frame, channel) {
            return;
        }
        self.handle(v, frame);
    }

    fn on_tunnel_packet(&mut self, v: NodeId, frame: Frame) {
        let Payload::Tunnel(t) = &frame.payload else { return };
        let Some(i) = t.path.iter().position(|n| *n == v) else {
            self.core.drop_frame(v, &frame, DropReason::MalformedTunnel);
            return;
        };
        if i + 1 < t.path.len() {
            let mut fwd: Tunnel = t.clone();
            if i > 0 {
                fwd.carried_by.push(v);
            }
            let next = t.path[i + 1];
            self.core.send(v, Some(next), Payload::Tunnel(fwd), Vec::new(), false);
            return;
        }
        let mut inner = match decapsulate(t) {
            Ok(f) => f,
            Err(reason) => {
                self.core.drop_frame(v, &frame, reason);
                return;
            }
        };
        inner.true_path.push(v);
        if self.core.is_hidden(v) {
            self.core.reemit(v, inner);
        } else {
            let entry = t.path[0];
            self.core.record_delivery(v, &inner, Channel::Tunnel, entry);
            self.handle(v, inner);
        }
    }

    fn handle(&mut self, v: NodeId, frame: Frame) {
        match &frame.payload {
            Payload::Tunnel(_) => return self.on_tunnel_packet(v, frame),
            Payload::Data(d) => {
                let d = d.clone();
                return self.on_data(v, &frame, d);
            }
            _ => {}
        }
        let core = &mut self.core;
        match (&mut self.protos[v.index()], &frame.payload) {
            (Proto::Aodv(n), Payload::Rreq(r)) => n.on_rreq(core, &frame, r),
            (Proto::Aodv(n), Payload::Rrep(r)) => n.on_rrep(core, &frame, r),
            (Proto::Aodv(n), Payload::Rerr { unreachable }) => n.on_rerr(core, &frame, unreachable),
            (Proto::Aodv(n), Payload::Hello(h)) => n.on_hello(core, h),
            (Proto::Dv(n), Payload::DvUpdate(a)) => n.on_update(core, a, frame.link_src),
            _ => {}
        }
    }

    fn on_data(&mut self, v: NodeId, frame: &Frame, data: Data) {
        if data.destination == v {
            self.core.record(TraceEvent::DataReceived { node: v, packet_id: frame.id, demand: data.demand, seq: data.seq });
            return;
        }
        self.forward_data(v, data, false);
    }

    fn forward_data(&mut self, v: NodeId, data: Data, originating: bool) {
        let now = self.core.now;
        if let Some(route) = &data.source_route {
            let next = route.iter().position(|n| *n == v).and_then(|i| route.get(i + 1)).copied();
            match next {
                Some(n) => self.core.send(v, Some(n), Payload::Data(data), Vec::new(), false),
                None => self.drop_data(v, DropReason::NoRoute),
            }
            return;
        }
        let core = &mut self.core;
        let next = match &mut self.protos[v.index()] {
            Proto::Aodv(n) if originating => return n.send_data(core, data),
            Proto::Aodv(n) => n.forward_hop(data.destination, now),
            Proto::Dv(n) => n.table().next_hop(data.destination),
            Proto::Silent => return,
        };
        match next {
            Some(next) => core.send(v, Some(next), Payload::Data(data), Vec::new(), false),
            None => {
                self.drop_data(v, DropReason::NoRoute);
                if let Proto::Aodv(n) = &mut self.protos[v.index()] {
                    n.on_undeliverable(&mut self.core, data.destination);
                }
            }
        }
    }

    fn drop_data(&mut self, v: NodeId, reason: DropReason) {
        self.core.record(TraceEvent::Drop { node: v, packet_id: None, packet: Some(PacketKind::Data), reason });
    }

    fn on_timer(&mut self, v: NodeId, timer: Timer) {
        let core = &mut self.core;
        match (timer, &mut self.protos[v.index()]) {
            (Timer::Demand { demand, seq }, _) => self.on_demand(demand, seq),
            (Timer::Hello, Proto::Aodv(n)) => n.on_hello_timer(core),
            (Timer::DvTick, Proto::Dv(n)) => n.on_tick(core),
            (Timer::DiscoveryDeadline { destination, rreq_id }, Proto::Aodv(n)) => {
                n.on_discovery_deadline(core, destination, rreq_id)
            }
            (Timer::RetryDiscovery { destination, attempt }, Proto::Aodv(n)) => n.on_retry(core, destination, attempt),
            (Timer::LinkFailure { next_hop, packet, packet_id }, p) => {
                core.record(TraceEvent::Drop { node: v, packet_id: Some(packet_id), packet: Some(packet), reason: DropReason::LinkFailure });
                if let Proto::Aodv(n) = p {
                    n.handle_route_break(core, next_hop);
                }
            }
            _ => {}
        }
    }

    fn on_demand(&mut self, index: usize, seq: u64) {
        let sc = self.core.sc;
        let d = &sc.demands[index];
        if seq + 1 < d.packet_count() {
            let at = d.send_time(seq + 1).max(self.core.now);
            self.core.schedule(at, EventKind::Timer { node: d.source, timer: Timer::Demand { demand: index, seq: seq + 1 } });
        }
        let id = self.core.frame_id();
        self.core.record(TraceEvent::DataSent { node: d.source, packet_id: id, demand: index, seq });
        let data = Data {
            demand: index,
            source: d.source,
            destination: d.destination,
            seq,
            source_route: d.forced_path.clone(),
        };
        if d.source == d.destination {
            self.core.record(TraceEvent::DataReceived { node: d.source, packet_id: id, demand: index, seq });
            return;
        }
        if let Some(path) = &d.forced_path {
            if seq == 0 {
                self.announce_route(index, path.clone());
            }
        } else if let Proto::Dv(_) = self.protos[d.source.index()] {
            if let Some(path) = trace_route(&self.dv_snapshot(), d.source, d.destination) {
                if self.dv_routes.get(&index) != Some(&path) {
                    self.dv_routes.insert(index, path.clone());
                    self.announce_route(index, path);
                }
            }
        }
        self.forward_data(d.source, data, true);
    }

    fn announce_route(&mut self, demand: usize, apparent: Vec<NodeId>) {
        let d = &self.core.sc.demands[demand];
        let actual = self.core.physical_route(&apparent);
        let event = TraceEvent::RouteSelected {
            node: d.source,
            origin: d.source,
            destination: d.destination,
            demand: Some(demand),
            apparent,
            actual,
            origin_position: self.core.position(d.source),
            destination_position: self.core.position(d.destination),
        };
        self.core.record(event);
    }

    fn dv_snapshot(&self) -> Vec<DvTable> {
        self.protos
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                Proto::Dv(n) => n.table().clone(),
                _ => DvTable { owner: NodeId(i as u32), entries: BTreeMap::new() },
            })
            .collect()
    }
}

/// Runs `scenario` with `seed` and returns its trace.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Trace {
    Simulator::new(scenario, seed).run().trace
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_window_examples() {
        assert_eq!(resolve_collisions(&[1.0], 0.01), vec![true]);
        assert_eq!(resolve_collisions(&[1.0, 1.005], 0.01), vec![false, false]);
        assert_eq!(resolve_collisions(&[1.0, 1.02], 0.01), vec![true, true]);
        assert_eq!(resolve_collisions(&[1.0, 1.0], 0.0), vec![true, true]);
    }

    #[test]
    fn toggles_alternate_from_up() {
        let cfg = AttackConfig::new([crate::adversary::AttackMode::OutOfBand], NodeId(0), Some(NodeId(1)))
            .with_exploitation(crate::adversary::ExploitPolicy::toggling(vec![1.0, 2.0, 3.0]));
        assert_eq!(toggle_wormhole(&cfg), vec![(1.0, false), (2.0, true), (3.0, false)]);
        let quiet = AttackConfig::new([crate::adversary::AttackMode::OutOfBand], NodeId(0), Some(NodeId(1)));
        assert!(toggle_wormhole(&quiet).is_empty());
    }

    #[test]
    fn events_order_by_time_then_sequence() {
        let mut heap = BinaryHeap::new();
        let tick = |time, seq| Event { time, seq, kind: EventKind::LinkToggle { attack: 0, up: true } };
        heap.push(tick(2.0, 1));
        heap.push(tick(1.0, 3));
        heap.push(tick(1.0, 2));
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![2, 3, 1]);
    }
}
