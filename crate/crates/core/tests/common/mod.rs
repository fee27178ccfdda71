#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use serde_json::{json, Value};
use wormsim::scenario::Scenario;
use wormsim::topology::{ConnectivityGraph, NodeId};

pub const RANGE: f64 = 100.0;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Every scenario shipped under `scenarios/`, sorted by name.
pub fn shipped_scenarios() -> Vec<(String, PathBuf)> {
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(manifest_dir().join("scenarios"))
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    out
}

pub fn load(name: &str) -> Scenario {
    let path = manifest_dir().join("scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap_or_else(|issues| panic!("{name}: {issues:?}"))
}

pub fn build(v: &Value) -> Scenario {
    Scenario::parse(&v.to_string()).unwrap_or_else(|issues| panic!("{issues:?}"))
}

pub fn base(name: &str, topology: Value, protocol: Value, duration: f64) -> Value {
    json!({
        "schema": "wormsim/1",
        "name": name,
        "seed": 1,
        "duration": duration,
        "topology": topology,
        "protocol": protocol,
        "attacks": [],
        "demands": [],
    })
}

pub fn demand(source: &str, destination: &str, start: f64, rate: f64, duration: f64) -> Value {
    json!({"source": source, "destination": destination, "start": start, "rate": rate, "duration": duration})
}

/// Random unit-disk layout of 10 to 50 nodes sized for a mean degree near 8.
pub fn random_topology(case: u64) -> Value {
    let n = 10 + (case * 7) % 41;
    let side = (n as f64 * PI * RANGE * RANGE / 8.0).sqrt();
    json!({"random": {"node_count": n, "radio_range": RANGE, "area_width": side, "area_height": side, "seed": case}})
}

/// Up to `count` connected pairs with pairwise distinct endpoints, each
/// source paired with its farthest free node. Returns
/// `(source, destination, bfs hops)`.
pub fn far_pairs(g: &ConnectivityGraph, count: usize) -> Vec<(NodeId, NodeId, u32)> {
    let mut out = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    for s in g.node_ids() {
        if out.len() == count {
            break;
        }
        if used.contains(&s) {
            continue;
        }
        let hops = g.bfs_all(s, false).expect("bfs");
        let best = hops
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(&NodeId(*i as u32)))
            .filter_map(|(i, h)| h.filter(|h| *h > 0).map(|h| (h, std::cmp::Reverse(i))))
            .max();
        if let Some((h, std::cmp::Reverse(d))) = best {
            let d = NodeId(d as u32);
            used.extend([s, d]);
            out.push((s, d, h));
        }
    }
    out
}

/// Largest finite BFS distance in the graph.
pub fn diameter(g: &ConnectivityGraph) -> u32 {
    g.node_ids()
        .flat_map(|s| g.bfs_all(s, false).expect("bfs"))
        .flatten()
        .max()
        .unwrap_or(0)
}

/// Honest random case: scenario text plus the BFS oracle per demand.
pub struct HonestCase {
    pub scenario: Scenario,
    pub expected: Vec<u32>,
}

pub fn honest_case(case: u64, dv: bool) -> HonestCase {
    let topo = random_topology(case);
    let probe = build(&base("probe", topo.clone(), json!({"aodv": {}}), 1.0));
    let g = &probe.graph;
    let pairs = far_pairs(g, 4);
    let (protocol, start, tail) =
        if dv { (json!({"dv": {}}), diameter(g) as f64 + 3.0, 4.0) } else { (json!({"aodv": {}}), 1.0, 12.0) };
    let mut v = base(&format!("honest{case}"), topo, protocol, start + tail);
    v["seed"] = json!(case);
    v["demands"] =
        pairs.iter().map(|(s, d, _)| demand(g.label(*s), g.label(*d), start, 1.0, 2.0)).collect::<Vec<_>>().into();
    HonestCase { scenario: build(&v), expected: pairs.iter().map(|p| p.2).collect() }
}
