//! Proactive distance-vector routing: periodic full-table broadcasts and a
//! Bellman-Ford merge. A synchronous round-based solver over a graph is
//! provided as the reference the event-driven protocol must agree with.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Core, Timer};
use crate::error::{Error, Result};
use crate::packet::{DvAdvert, Payload};
use crate::topology::{ConnectivityGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DvConfig {
    pub update_period: f64,
    /// Costs above this are treated as unreachable.
    pub net_diameter: u32,
    /// Entries whose next hop is silent for this many periods are purged.
    pub neighbor_timeout_periods: u32,
}

impl Default for DvConfig {
    fn default() -> Self {
        Self { update_period: 1.0, net_diameter: 35, neighbor_timeout_periods: 3 }
    }
}

impl DvConfig {
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.update_period > 0.0 && self.net_diameter > 0 && self.neighbor_timeout_periods > 0 {
            Ok(())
        } else {
            Err("DV parameters must be positive".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvEntry {
    pub cost: u32,
    pub next_hop: NodeId,
    #[serde(skip)]
    pub heard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvTable {
    pub owner: NodeId,
    pub entries: BTreeMap<NodeId, DvEntry>,
}

impl DvTable {
    pub fn new(owner: NodeId) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(owner, DvEntry { cost: 0, next_hop: owner, heard: 0.0 });
        Self { owner, entries }
    }

    pub fn cost(&self, destination: NodeId) -> Option<u32> {
        self.entries.get(&destination).map(|e| e.cost)
    }

    pub fn next_hop(&self, destination: NodeId) -> Option<NodeId> {
        if destination == self.owner {
            return None;
        }
        self.entries.get(&destination).map(|e| e.next_hop)
    }

    pub fn advert(&self) -> DvAdvert {
        DvAdvert { owner: self.owner, entries: self.entries.iter().map(|(d, e)| (*d, e.cost)).collect() }
    }

    /// Merges a neighbour's advertisement. A candidate replaces the current
    /// entry when strictly cheaper, or equally cheap through a lower next-hop
    /// id. Returns whether anything changed.
    pub fn merge_update(&mut self, advert: &DvAdvert, via: NodeId, now: f64, cap: u32) -> bool {
        let mut changed = false;
        for &(destination, cost) in &advert.entries {
            if destination == self.owner {
                continue;
            }
            let candidate = cost.saturating_add(1);
            if candidate > cap {
                continue;
            }
            let fresh = DvEntry { cost: candidate, next_hop: via, heard: now };
            match self.entries.get_mut(&destination) {
                None => {
                    self.entries.insert(destination, fresh);
                    changed = true;
                }
                Some(e) => {
                    if candidate < e.cost || (candidate == e.cost && via < e.next_hop) {
                        *e = fresh;
                        changed = true;
                    } else if candidate == e.cost && via == e.next_hop {
                        e.heard = now;
                    }
                }
            }
        }
        changed
    }

    /// Drops entries whose next hop has gone quiet.
    pub fn purge(&mut self, now: f64, max_age: f64) -> bool {
        let owner = self.owner;
        let before = self.entries.len();
        self.entries.retain(|d, e| *d == owner || now - e.heard <= max_age);
        before != self.entries.len()
    }

    /// `(destination, cost, next_hop)` rows without timestamps.
    pub fn snapshot(&self) -> Vec<(NodeId, u32, NodeId)> {
        self.entries.iter().map(|(d, e)| (*d, e.cost, e.next_hop)).collect()
    }
}

/// Synchronous rounds of full exchange over `graph` (wormhole links
/// included) until a fixed point. Returns the tables and the number of
/// rounds that changed at least one entry.
pub fn converge(graph: &ConnectivityGraph, net_diameter: u32) -> Result<(Vec<DvTable>, usize)> {
    let mut tables: Vec<DvTable> = graph.node_ids().map(DvTable::new).collect();
    let limit = net_diameter as usize + 1;
    let mut rounds = 0;
    loop {
        let adverts: Vec<DvAdvert> = tables.iter().map(DvTable::advert).collect();
        let mut changed = false;
        for table in tables.iter_mut() {
            for via in graph.neighbors(table.owner, true) {
                changed |= table.merge_update(&adverts[via.index()], via, 0.0, net_diameter);
            }
        }
        if !changed {
            return Ok((tables, rounds));
        }
        rounds += 1;
        if rounds > limit {
            return Err(Error::NoConvergence { rounds });
        }
    }
}

/// Follows next-hop pointers from `source`; `None` on a loop or dead end.
pub fn trace_route(tables: &[DvTable], source: NodeId, destination: NodeId) -> Option<Vec<NodeId>> {
    let mut path = vec![source];
    let mut at = source;
    while at != destination {
        let next = tables.get(at.index())?.next_hop(destination)?;
        if path.contains(&next) {
            return None;
        }
        path.push(next);
        at = next;
    }
    Some(path)
}

/// Event-driven protocol state of one node.
#[derive(Debug, Clone)]
pub struct DvNode {
    cfg: DvConfig,
    table: DvTable,
}

impl DvNode {
    pub fn new(id: NodeId, cfg: DvConfig) -> Self {
        Self { cfg, table: DvTable::new(id) }
    }

    pub fn table(&self) -> &DvTable {
        &self.table
    }

    pub fn on_tick(&mut self, core: &mut Core) {
        let now = core.now();
        let period = self.cfg.update_period;
        self.table.purge(now, self.cfg.neighbor_timeout_periods as f64 * period);
        let owner = self.table.owner;
        core.send(owner, None, Payload::DvUpdate(self.table.advert()), vec![owner], true);
        core.set_timer(owner, period, Timer::DvTick);
    }

    pub fn on_update(&mut self, core: &mut Core, advert: &DvAdvert, via: NodeId) {
        self.table.merge_update(advert, via, core.now(), self.cfg.net_diameter);
    }
}
