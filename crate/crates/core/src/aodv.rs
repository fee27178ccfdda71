//! Simplified on-demand routing: flooded route requests with duplicate
//! suppression, destination-only replies unicast along the reverse path,
//! shortest-apparent-route selection, HELLO neighbour sensing and route
//! error propagation. Sequence numbers are not modelled; routes are chosen
//! by hop count and arrival order only.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::Core;
use crate::packet::{Data, Frame, Hello, Payload, Rrep, Rreq};
use crate::topology::NodeId;
use crate::trace::{DropReason, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AodvConfig {
    pub route_request_retries: u32,
    pub route_request_rate: f64,
    pub active_route_timeout: f64,
    pub hello_interval: (f64, f64),
    pub allowed_hello_loss: u32,
    pub net_diameter: u32,
    pub node_traversal_time: f64,
    pub route_error_rate_limit: f64,
    /// Extra hops of slack in the ring traversal time.
    pub timeout_buffer: u32,
    pub ttl_start: u32,
    pub ttl_increment: u32,
    pub ttl_threshold: u32,
    /// Reject control traffic whose last hop is not a symmetric neighbour.
    pub require_symmetric: bool,
}

impl Default for AodvConfig {
    fn default() -> Self {
        Self::table2()
    }
}

impl AodvConfig {
    /// Parameters of the one- and two-attacker simulation scenarios.
    pub fn table2() -> Self {
        Self {
            route_request_retries: 5,
            route_request_rate: 10.0,
            active_route_timeout: 15.0,
            hello_interval: (5.0, 6.0),
            allowed_hello_loss: 2,
            net_diameter: 35,
            node_traversal_time: 0.04,
            route_error_rate_limit: 10.0,
            timeout_buffer: 2,
            ttl_start: 1,
            ttl_increment: 2,
            ttl_threshold: 7,
            require_symmetric: false,
        }
    }

    /// Parameters of the three-attacker scenario.
    pub fn table3() -> Self {
        Self {
            active_route_timeout: 3.0,
            hello_interval: (1.0, 1.1),
            allowed_hello_loss: 10,
            ttl_threshold: 10,
            ..Self::table2()
        }
    }

    /// How long an origin collects replies to a request sent with `ttl`.
    pub fn discovery_window(&self, ttl: u32) -> f64 {
        let span = if ttl >= self.net_diameter { self.net_diameter } else { ttl + self.timeout_buffer };
        2.0 * self.node_traversal_time * span as f64
    }

    /// Expanding ring: grow by `ttl_increment` while within the threshold,
    /// then flood the whole network diameter.
    pub fn ttl_for_attempt(&self, attempt: u32) -> u32 {
        let ttl = self.ttl_start + attempt * self.ttl_increment;
        if ttl <= self.ttl_threshold {
            ttl
        } else {
            self.net_diameter
        }
    }

    pub fn neighbor_lifetime(&self) -> f64 {
        self.allowed_hello_loss as f64 * self.hello_interval.1
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = self.route_request_retries > 0
            && self.route_request_rate > 0.0
            && self.active_route_timeout > 0.0
            && self.hello_interval.0 > 0.0
            && self.hello_interval.1 >= self.hello_interval.0
            && self.allowed_hello_loss > 0
            && self.net_diameter > 0
            && self.node_traversal_time > 0.0
            && self.route_error_rate_limit > 0.0
            && self.ttl_start > 0
            && self.ttl_threshold > 0;
        if positive {
            Ok(())
        } else {
            Err("AODV parameters must be positive and hello_interval ordered".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub established_time: f64,
    pub expiry: f64,
    pub valid: bool,
    /// Neighbours that forward through this entry.
    pub precursors: BTreeSet<NodeId>,
}

impl RouteEntry {
    fn new(destination: NodeId, next_hop: NodeId, hop_count: u32, now: f64, timeout: f64) -> Self {
        Self {
            destination,
            next_hop,
            hop_count,
            established_time: now,
            expiry: now + timeout,
            valid: true,
            precursors: BTreeSet::new(),
        }
    }

    pub fn is_live(&self, now: f64) -> bool {
        self.valid && now < self.expiry
    }
}

/// A reply collected by an origin during discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub hop_count: u32,
    pub arrival: f64,
    pub next_hop: NodeId,
    pub apparent: Vec<NodeId>,
    pub actual: Vec<NodeId>,
}

/// Minimum hop count wins; ties go to the earliest arrival.
pub fn select_route(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates.iter().min_by(|a, b| {
        a.hop_count
            .cmp(&b.hop_count)
            .then(a.arrival.total_cmp(&b.arrival))
    })
}

#[derive(Debug, Clone)]
struct Discovery {
    rreq_id: u32,
    attempt: u32,
    candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub last_heard: f64,
    pub symmetric: bool,
}

#[derive(Debug, Clone)]
pub struct AodvNode {
    id: NodeId,
    cfg: AodvConfig,
    rreq_counter: u32,
    seen: BTreeSet<(NodeId, u32)>,
    replied: BTreeMap<(NodeId, u32), u32>,
    routes: BTreeMap<NodeId, RouteEntry>,
    discoveries: BTreeMap<NodeId, Discovery>,
    buffered: BTreeMap<NodeId, VecDeque<Data>>,
    neighbors: BTreeMap<NodeId, Neighbor>,
    rreq_sent: VecDeque<f64>,
    rerr_sent: VecDeque<f64>,
}

/// Pops timestamps older than one second and reports whether another send
/// fits under `rate` per second.
fn under_rate(history: &mut VecDeque<f64>, now: f64, rate: f64) -> bool {
    while history.front().is_some_and(|&t| now - t >= 1.0) {
        history.pop_front();
    }
    (history.len() as f64) < rate
}

impl AodvNode {
    pub fn new(id: NodeId, cfg: AodvConfig) -> Self {
        Self {
            id,
            cfg,
            rreq_counter: 0,
            seen: BTreeSet::new(),
            replied: BTreeMap::new(),
            routes: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            buffered: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            rreq_sent: VecDeque::new(),
            rerr_sent: VecDeque::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn route(&self, destination: NodeId) -> Option<&RouteEntry> {
        self.routes.get(&destination)
    }

    pub fn routes(&self) -> &BTreeMap<NodeId, RouteEntry> {
        &self.routes
    }

    pub fn neighbors(&self) -> &BTreeMap<NodeId, Neighbor> {
        &self.neighbors
    }

    pub fn is_symmetric(&self, other: NodeId) -> bool {
        self.neighbors.get(&other).is_some_and(|n| n.symmetric)
    }

    fn install(&mut self, destination: NodeId, next_hop: NodeId, hop_count: u32, now: f64) {
        let timeout = self.cfg.active_route_timeout;
        let replace = match self.routes.get(&destination) {
            None => true,
            Some(e) => !e.is_live(now) || hop_count < e.hop_count || (e.next_hop == next_hop && hop_count == e.hop_count),
        };
        if replace {
            let precursors = self
                .routes
                .get(&destination)
                .filter(|e| e.next_hop == next_hop)
                .map(|e| e.precursors.clone())
                .unwrap_or_default();
            let mut entry = RouteEntry::new(destination, next_hop, hop_count, now, timeout);
            entry.precursors = precursors;
            self.routes.insert(destination, entry);
        }
    }

    /// Next hop for forwarding traffic; forwarding entries are refreshed on use.
    pub fn forward_hop(&mut self, destination: NodeId, now: f64) -> Option<NodeId> {
        let timeout = self.cfg.active_route_timeout;
        let e = self.routes.get_mut(&destination).filter(|e| e.is_live(now))?;
        e.established_time = now;
        e.expiry = now + timeout;
        Some(e.next_hop)
    }

    fn originating_hop(&self, destination: NodeId, now: f64) -> Option<NodeId> {
        self.routes.get(&destination).filter(|e| e.is_live(now)).map(|e| e.next_hop)
    }

    /// A data packet produced locally for `data.destination`.
    pub fn send_data(&mut self, core: &mut Core, data: Data) {
        let now = core.now();
        if let Some(next) = self.originating_hop(data.destination, now) {
            core.send(self.id, Some(next), Payload::Data(data), Vec::new(), false);
            return;
        }
        let destination = data.destination;
        self.buffered.entry(destination).or_default().push_back(data);
        if !self.discoveries.contains_key(&destination) {
            self.originate_rreq(core, destination, 0);
        }
    }

    /// Starts (or retries) discovery for `destination`.
    pub fn originate_rreq(&mut self, core: &mut Core, destination: NodeId, attempt: u32) {
        let now = core.now();
        if destination == self.id {
            let pos = core.position(self.id);
            core.record(TraceEvent::RouteSelected {
                node: self.id,
                origin: self.id,
                destination,
                demand: None,
                apparent: vec![self.id],
                actual: vec![self.id],
                origin_position: pos,
                destination_position: pos,
            });
            return;
        }
        if !under_rate(&mut self.rreq_sent, now, self.cfg.route_request_rate) {
            let wait = 1.0 - (now - self.rreq_sent.front().copied().unwrap_or(now));
            core.set_timer(self.id, wait.max(0.0), crate::engine::Timer::RetryDiscovery { destination, attempt });
            return;
        }
        self.rreq_sent.push_back(now);
        self.rreq_counter += 1;
        let rreq_id = self.rreq_counter;
        let ttl = self.cfg.ttl_for_attempt(attempt);
        self.seen.insert((self.id, rreq_id));
        self.discoveries.insert(destination, Discovery { rreq_id, attempt, candidates: Vec::new() });
        core.record(TraceEvent::RreqOriginated { node: self.id, destination, rreq_id, ttl, attempt });
        let rreq = Rreq {
            origin: self.id,
            destination,
            rreq_id,
            hop_count: 0,
            route_record: vec![self.id],
            ttl,
            sent_time: core.local_clock(self.id),
            origin_position: Some(core.position(self.id)),
        };
        core.send(self.id, None, Payload::Rreq(rreq), vec![self.id], false);
        core.set_timer(
            self.id,
            self.cfg.discovery_window(ttl),
            crate::engine::Timer::DiscoveryDeadline { destination, rreq_id },
        );
    }

    pub fn on_retry(&mut self, core: &mut Core, destination: NodeId, attempt: u32) {
        if !self.discoveries.contains_key(&destination) {
            self.originate_rreq(core, destination, attempt);
        }
    }

    fn accept_control(&self, core: &mut Core, frame: &Frame) -> bool {
        if self.cfg.require_symmetric && !self.is_symmetric(frame.link_src) {
            core.drop_frame(self.id, frame, DropReason::Asymmetric);
            return false;
        }
        true
    }

    pub fn on_rreq(&mut self, core: &mut Core, frame: &Frame, rreq: &Rreq) {
        if !self.accept_control(core, frame) {
            return;
        }
        let now = core.now();
        let key = (rreq.origin, rreq.rreq_id);
        if rreq.origin == self.id || rreq.route_record.contains(&self.id) {
            core.drop_frame(self.id, frame, DropReason::Duplicate);
            return;
        }
        let hops = rreq.route_record.len() as u32;
        if rreq.destination == self.id {
            let better = self.replied.get(&key).is_none_or(|&best| hops < best);
            if !better {
                core.drop_frame(self.id, frame, DropReason::Duplicate);
                return;
            }
            self.replied.insert(key, hops);
            self.install(rreq.origin, frame.link_src, hops, now);
            let mut apparent = rreq.route_record.clone();
            apparent.push(self.id);
            core.record(TraceEvent::RouteSelected {
                node: self.id,
                origin: rreq.origin,
                destination: self.id,
                demand: None,
                apparent: apparent.clone(),
                actual: frame.true_path.clone(),
                origin_position: rreq.origin_position.unwrap_or_else(|| core.position(rreq.origin)),
                destination_position: core.position(self.id),
            });
            let rrep = Rrep {
                origin: rreq.origin,
                destination: self.id,
                rreq_id: rreq.rreq_id,
                hop_count: 0,
                route_record: apparent,
                true_path: frame.true_path.clone(),
                destination_position: Some(core.position(self.id)),
            };
            core.send(self.id, Some(frame.link_src), Payload::Rrep(rrep), vec![self.id], false);
            return;
        }
        if !self.seen.insert(key) {
            core.drop_frame(self.id, frame, DropReason::Duplicate);
            return;
        }
        self.install(rreq.origin, frame.link_src, hops, now);
        if rreq.ttl <= 1 {
            core.drop_frame(self.id, frame, DropReason::Ttl);
            return;
        }
        let mut fwd = rreq.clone();
        fwd.ttl -= 1;
        fwd.hop_count += 1;
        fwd.route_record.push(self.id);
        core.send(self.id, None, Payload::Rreq(fwd), frame.true_path.clone(), true);
    }

    pub fn on_rrep(&mut self, core: &mut Core, frame: &Frame, rrep: &Rrep) {
        if !self.accept_control(core, frame) {
            return;
        }
        let now = core.now();
        if rrep.origin == self.id {
            match self.discoveries.get_mut(&rrep.destination) {
                Some(d) if d.rreq_id == rrep.rreq_id => {
                    let hop_count = rrep.route_record.len().saturating_sub(1) as u32;
                    let origin_pos = core.position(self.id);
                    let dest_pos = rrep.destination_position.unwrap_or_else(|| core.position(rrep.destination));
                    if core.inline_hop_bound_rejects(self.id, origin_pos, dest_pos, hop_count) {
                        return;
                    }
                    d.candidates.push(Candidate {
                        hop_count,
                        arrival: now,
                        next_hop: frame.link_src,
                        apparent: rrep.route_record.clone(),
                        actual: rrep.true_path.clone(),
                    });
                }
                _ => core.drop_frame(self.id, frame, DropReason::LateReply),
            }
            return;
        }
        self.install(rrep.destination, frame.link_src, rrep.hop_count + 1, now);
        let Some(back) = self.forward_hop(rrep.origin, now) else {
            core.drop_frame(self.id, frame, DropReason::NoRoute);
            return;
        };
        if let Some(e) = self.routes.get_mut(&rrep.destination) {
            e.precursors.insert(back);
        }
        let mut fwd = rrep.clone();
        fwd.hop_count += 1;
        core.send(self.id, Some(back), Payload::Rrep(fwd), vec![self.id], false);
    }

    pub fn on_discovery_deadline(&mut self, core: &mut Core, destination: NodeId, rreq_id: u32) {
        let Some(d) = self.discoveries.get(&destination) else { return };
        if d.rreq_id != rreq_id {
            return;
        }
        let d = self.discoveries.remove(&destination).expect("checked above");
        let now = core.now();
        if let Some(best) = select_route(&d.candidates).cloned() {
            let mut entry = RouteEntry::new(destination, best.next_hop, best.hop_count, now, self.cfg.active_route_timeout);
            if let Some(old) = self.routes.get(&destination) {
                entry.precursors = old.precursors.clone();
            }
            self.routes.insert(destination, entry);
            core.record(TraceEvent::RouteSelected {
                node: self.id,
                origin: self.id,
                destination,
                demand: core.demand_of(self.id, destination),
                apparent: best.apparent.clone(),
                actual: best.actual.clone(),
                origin_position: core.position(self.id),
                destination_position: core.position(destination),
            });
            for data in self.buffered.remove(&destination).unwrap_or_default() {
                core.send(self.id, Some(best.next_hop), Payload::Data(data), Vec::new(), false);
            }
        } else if d.attempt + 1 < self.cfg.route_request_retries {
            self.originate_rreq(core, destination, d.attempt + 1);
        } else {
            core.record(TraceEvent::RouteFailure { node: self.id, destination });
            for _ in self.buffered.remove(&destination).unwrap_or_default() {
                core.record(TraceEvent::Drop {
                    node: self.id,
                    packet_id: None,
                    packet: Some(crate::packet::PacketKind::Data),
                    reason: DropReason::DiscoveryFailed,
                });
            }
        }
    }

    /// Invalidates routes through `broken` and tells dependants.
    pub fn handle_route_break(&mut self, core: &mut Core, broken: NodeId) {
        let lost: Vec<NodeId> = self
            .routes
            .values()
            .filter(|e| e.valid && e.next_hop == broken)
            .map(|e| e.destination)
            .collect();
        self.invalidate_and_report(core, &lost);
    }

    fn invalidate_and_report(&mut self, core: &mut Core, lost: &[NodeId]) {
        let mut report = Vec::new();
        for d in lost {
            if let Some(e) = self.routes.get_mut(d) {
                e.valid = false;
                if !e.precursors.is_empty() {
                    report.push(*d);
                }
            }
        }
        if !report.is_empty() {
            self.send_rerr(core, report);
        }
    }

    fn send_rerr(&mut self, core: &mut Core, unreachable: Vec<NodeId>) {
        let now = core.now();
        if !under_rate(&mut self.rerr_sent, now, self.cfg.route_error_rate_limit) {
            core.record(TraceEvent::Drop {
                node: self.id,
                packet_id: None,
                packet: Some(crate::packet::PacketKind::Rerr),
                reason: DropReason::RateLimit,
            });
            return;
        }
        self.rerr_sent.push_back(now);
        core.send(self.id, None, Payload::Rerr { unreachable }, vec![self.id], false);
    }

    pub fn on_rerr(&mut self, core: &mut Core, frame: &Frame, unreachable: &[NodeId]) {
        if !self.accept_control(core, frame) {
            return;
        }
        let lost: Vec<NodeId> = unreachable
            .iter()
            .copied()
            .filter(|d| self.routes.get(d).is_some_and(|e| e.valid && e.next_hop == frame.link_src))
            .collect();
        self.invalidate_and_report(core, &lost);
    }

    /// Data arrived here for someone else and no live route exists.
    pub fn on_undeliverable(&mut self, core: &mut Core, destination: NodeId) {
        if self.routes.get(&destination).is_some_and(|e| e.valid) {
            self.routes.get_mut(&destination).expect("present").valid = false;
        }
        self.send_rerr(core, vec![destination]);
    }

    pub fn on_hello_timer(&mut self, core: &mut Core) {
        let now = core.now();
        let lifetime = self.cfg.neighbor_lifetime();
        let expired: Vec<NodeId> = self
            .neighbors
            .iter()
            .filter(|(_, n)| now - n.last_heard > lifetime)
            .map(|(id, _)| *id)
            .collect();
        for id in expired {
            self.neighbors.remove(&id);
            self.handle_route_break(core, id);
        }
        let hello = Hello { sender: self.id, heard: self.neighbors.keys().copied().collect() };
        core.send(self.id, None, Payload::Hello(hello), vec![self.id], false);
        let (lo, hi) = self.cfg.hello_interval;
        let wait = core.uniform(self.id, lo, hi);
        core.set_timer(self.id, wait, crate::engine::Timer::Hello);
    }

    pub fn on_hello(&mut self, core: &mut Core, hello: &Hello) {
        let now = core.now();
        let symmetric = hello.heard.contains(&self.id);
        self.neighbors.insert(hello.sender, Neighbor { last_heard: now, symmetric });
    }
}
