//! Impact metrics computed purely from a trace: sinkhole capture, hop
//! distortion, delivery ratio, route oscillation and route-error bursts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::packet::PacketKind;
use crate::topology::NodeId;
use crate::trace::{Channel, Trace, TraceEvent};

/// Gap (seconds) that separates two route-error bursts.
pub const RERR_BURST_GAP: f64 = 1.0;

/// A route chosen by its origin, as reported in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRoute {
    pub time: f64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: Option<usize>,
    pub apparent: Vec<NodeId>,
    pub actual: Vec<NodeId>,
}

impl SelectedRoute {
    pub fn apparent_hops(&self) -> usize {
        self.apparent.len().saturating_sub(1)
    }

    pub fn actual_hops(&self) -> usize {
        self.actual.len().saturating_sub(1)
    }
}

/// Routes selected at their origin, in trace order.
pub fn selected_routes(trace: &Trace) -> Vec<SelectedRoute> {
    trace
        .records()
        .iter()
        .filter_map(|r| match &r.event {
            TraceEvent::RouteSelected { node, origin, destination, demand, apparent, actual, .. } if node == origin => {
                Some(SelectedRoute {
                    time: r.time,
                    origin: *origin,
                    destination: *destination,
                    demand: *demand,
                    apparent: apparent.clone(),
                    actual: actual.clone(),
                })
            }
            _ => None,
        })
        .collect()
}

/// Actual hops minus apparent hops.
pub fn hop_distortion(route: &SelectedRoute) -> usize {
    route.actual_hops().saturating_sub(route.apparent_hops())
}

/// Fraction of selected routes whose physical traversal touches a
/// malicious node; `None` when no route was selected.
pub fn sinkhole_fraction(trace: &Trace, malicious: &BTreeSet<NodeId>) -> Option<f64> {
    let routes = selected_routes(trace);
    sinkhole_fraction_of(&routes, malicious)
}

pub fn sinkhole_fraction_of(routes: &[SelectedRoute], malicious: &BTreeSet<NodeId>) -> Option<f64> {
    if routes.is_empty() {
        return None;
    }
    let captured = routes.iter().filter(|r| r.actual.iter().any(|n| malicious.contains(n))).count();
    Some(captured as f64 / routes.len() as f64)
}

/// Distinct data packets of `demand` received over those sent; `None` when
/// nothing was sent.
pub fn delivery_ratio(trace: &Trace, demand: usize) -> Option<f64> {
    let mut sent = BTreeSet::new();
    let mut received = BTreeSet::new();
    for e in trace.events() {
        match e {
            TraceEvent::DataSent { demand: d, seq, .. } if *d == demand => {
                sent.insert(*seq);
            }
            TraceEvent::DataReceived { demand: d, seq, .. } if *d == demand => {
                received.insert(*seq);
            }
            _ => {}
        }
    }
    if sent.is_empty() {
        None
    } else {
        Some(received.intersection(&sent).count() as f64 / sent.len() as f64)
    }
}

/// Number of times the demand's apparent route changed.
pub fn oscillation_count(trace: &Trace, demand: usize) -> usize {
    let routes: Vec<Vec<NodeId>> = selected_routes(trace)
        .into_iter()
        .filter(|r| r.demand == Some(demand))
        .map(|r| r.apparent)
        .collect();
    let mut distinct = 0usize;
    let mut last: Option<&Vec<NodeId>> = None;
    for r in &routes {
        if last != Some(r) {
            distinct += 1;
            last = Some(r);
        }
    }
    distinct.saturating_sub(1)
}

/// Route-error transmissions grouped into bursts separated by more than
/// [`RERR_BURST_GAP`].
pub fn rerr_bursts(trace: &Trace) -> usize {
    let times: Vec<f64> = trace
        .records()
        .iter()
        .filter(|r| {
            matches!(r.event, TraceEvent::Transmit { packet: PacketKind::Rerr, channel: Channel::Radio, .. })
        })
        .map(|r| r.time)
        .collect();
    let mut bursts = 0;
    let mut last: Option<f64> = None;
    for t in times {
        if last.is_none_or(|l| t - l > RERR_BURST_GAP) {
            bursts += 1;
        }
        last = Some(t);
    }
    bursts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandMetrics {
    pub demand: usize,
    pub source: NodeId,
    pub destination: NodeId,
    pub sent: usize,
    pub delivered: usize,
    pub delivery_ratio: Option<f64>,
    pub routes_selected: usize,
    pub oscillation_count: usize,
    pub apparent_hops: Option<usize>,
    pub actual_hops: Option<usize>,
    pub hop_distortion: Option<usize>,
    pub sinkhole_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sinkhole_fraction: Option<f64>,
    pub mean_hop_distortion: Option<f64>,
    pub delivery_ratio: Option<f64>,
    pub oscillation_count: usize,
    pub rerr_bursts: usize,
    pub routes_selected: usize,
    pub demands: Vec<DemandMetrics>,
}

/// Whole-run summary. `demands` lists `(source, destination)` per demand
/// index.
pub fn run_metrics(trace: &Trace, malicious: &BTreeSet<NodeId>, demands: &[(NodeId, NodeId)]) -> RunMetrics {
    let routes = selected_routes(trace);
    let mut sent: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    let mut got: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
    for e in trace.events() {
        match e {
            TraceEvent::DataSent { demand, seq, .. } => {
                sent.entry(*demand).or_default().insert(*seq);
            }
            TraceEvent::DataReceived { demand, seq, .. } => {
                got.entry(*demand).or_default().insert(*seq);
            }
            _ => {}
        }
    }
    let mut per_demand = Vec::new();
    for (i, (source, destination)) in demands.iter().enumerate() {
        let mine: Vec<SelectedRoute> = routes.iter().filter(|r| r.demand == Some(i)).cloned().collect();
        let s = sent.get(&i).map_or(0, BTreeSet::len);
        let d = match (sent.get(&i), got.get(&i)) {
            (Some(a), Some(b)) => a.intersection(b).count(),
            _ => 0,
        };
        let last = mine.last();
        per_demand.push(DemandMetrics {
            demand: i,
            source: *source,
            destination: *destination,
            sent: s,
            delivered: d,
            delivery_ratio: (s > 0).then(|| d as f64 / s as f64),
            routes_selected: mine.len(),
            oscillation_count: oscillation_count(trace, i),
            apparent_hops: last.map(SelectedRoute::apparent_hops),
            actual_hops: last.map(SelectedRoute::actual_hops),
            hop_distortion: last.map(hop_distortion),
            sinkhole_fraction: sinkhole_fraction_of(&mine, malicious),
        });
    }
    let total_sent: usize = sent.values().map(BTreeSet::len).sum();
    let total_got: usize = per_demand.iter().map(|d| d.delivered).sum();
    RunMetrics {
        sinkhole_fraction: sinkhole_fraction_of(&routes, malicious),
        mean_hop_distortion: (!routes.is_empty())
            .then(|| routes.iter().map(hop_distortion).sum::<usize>() as f64 / routes.len() as f64),
        delivery_ratio: (total_sent > 0).then(|| total_got as f64 / total_sent as f64),
        oscillation_count: per_demand.iter().map(|d| d.oscillation_count).sum(),
        rerr_bursts: rerr_bursts(trace),
        routes_selected: routes.len(),
        demands: per_demand,
    }
}
