//! Wormhole countermeasures: geographic and temporal packet leashes, the
//! hop-count lower bound, and route-frequency statistics. All checks are
//! pure; [`analyze`] applies them to a finished trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, Position};
use crate::trace::{Channel, Trace, TraceEvent};

pub const RULE_GEOGRAPHIC: &str = "geographic_leash";
pub const RULE_TEMPORAL: &str = "temporal_leash";
pub const RULE_CLOCK: &str = "clock_anomaly";
pub const RULE_HOP_BOUND: &str = "hop_lower_bound";
pub const RULE_FREQUENCY: &str = "route_frequency";

/// Relative tolerance so that a distance of exactly `r` compares as in range.
const DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeashConfig {
    /// Falls back to the topology's radio range when absent.
    pub radio_range: Option<f64>,
    pub signal_speed: f64,
    pub clock_skew_bound: f64,
    pub slack: f64,
}

impl Default for LeashConfig {
    fn default() -> Self {
        Self { radio_range: None, signal_speed: 3.0e8, clock_skew_bound: 0.0, slack: 1.0e-6 }
    }
}

impl LeashConfig {
    pub fn check(&self) -> Result<(), String> {
        let ok = self.radio_range.is_none_or(|r| r > 0.0)
            && self.signal_speed > 0.0
            && self.clock_skew_bound >= 0.0
            && self.slack >= 0.0;
        if ok {
            Ok(())
        } else {
            Err("leash parameters must be non-negative and the signal speed positive".into())
        }
    }

    pub fn max_elapsed(&self, range: f64) -> f64 {
        range / self.signal_speed + self.slack + 2.0 * self.clock_skew_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeashVerdict {
    Pass,
    Discard,
    ClockAnomaly,
}

pub fn geographic_leash_check(sender: Position, receiver: Position, range: f64) -> LeashVerdict {
    if sender.distance(&receiver) > range * (1.0 + DISTANCE_EPS) {
        LeashVerdict::Discard
    } else {
        LeashVerdict::Pass
    }
}

pub fn temporal_leash_check(send_time: f64, receive_time: f64, range: f64, cfg: &LeashConfig) -> LeashVerdict {
    let elapsed = receive_time - send_time;
    if elapsed < -(2.0 * cfg.clock_skew_bound + cfg.slack) {
        LeashVerdict::ClockAnomaly
    } else if elapsed > cfg.max_elapsed(range) {
        LeashVerdict::Discard
    } else {
        LeashVerdict::Pass
    }
}

/// Fewest hops any unit-disk route between the two positions can have.
pub fn hop_lower_bound(source: Position, destination: Position, range: f64) -> u32 {
    let ratio = source.distance(&destination) / range;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= DISTANCE_EPS * ratio.max(1.0) {
        nearest as u32
    } else {
        ratio.ceil() as u32
    }
}

/// True when the advertised route is shorter than physically possible.
pub fn hop_lower_bound_check(source: Position, destination: Position, range: f64, advertised_hops: u32) -> bool {
    advertised_hops < hop_lower_bound(source, destination, range)
}

/// Nodes appearing as intermediates in more than `threshold` routes, with
/// their counts.
pub fn route_frequency_analysis(routes: &[Vec<NodeId>], threshold: usize) -> BTreeMap<NodeId, usize> {
    let mut counts: BTreeMap<NodeId, usize> = BTreeMap::new();
    for route in routes {
        if route.len() > 2 {
            let mut inner: Vec<NodeId> = route[1..route.len() - 1].to_vec();
            inner.sort();
            inner.dedup();
            for n in inner {
                *counts.entry(n).or_default() += 1;
            }
        }
    }
    counts.retain(|_, c| *c > threshold);
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub geographic: bool,
    pub temporal: bool,
    pub hop_bound: bool,
    pub route_frequency_threshold: Option<usize>,
    /// Enforce checks during the run so that discards feed back into routing.
    pub inline: bool,
    pub leash: LeashConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            geographic: true,
            temporal: true,
            hop_bound: true,
            route_frequency_threshold: None,
            inline: false,
            leash: LeashConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub time: f64,
    pub rule: String,
    pub node: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_id: Option<u64>,
    pub evidence: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub alarms: Vec<Alarm>,
    pub alarm_counts: BTreeMap<String, usize>,
    /// Leash-checked deliveries by channel, used as false-positive bookkeeping.
    pub checked_deliveries: BTreeMap<String, usize>,
    pub unleashed_deliveries: usize,
    pub tunnel_deliveries: usize,
    pub tunnel_deliveries_discarded: usize,
    pub routes_checked: usize,
    pub suspicious_nodes: BTreeMap<NodeId, usize>,
}

impl DetectionReport {
    pub fn count(&self, rule: &str) -> usize {
        self.alarm_counts.get(rule).copied().unwrap_or(0)
    }

    pub fn leash_alarms(&self) -> usize {
        self.count(RULE_GEOGRAPHIC) + self.count(RULE_TEMPORAL) + self.count(RULE_CLOCK)
    }

    pub fn is_clean(&self) -> bool {
        self.alarms.is_empty() && self.suspicious_nodes.is_empty()
    }

    fn raise(&mut self, alarm: Alarm) {
        *self.alarm_counts.entry(alarm.rule.clone()).or_default() += 1;
        self.alarms.push(alarm);
    }
}

/// Leash verdicts for one delivery, in rule order (geographic, temporal).
pub fn leash_alarms(
    cfg: &DetectionConfig,
    range: f64,
    sender: Position,
    send_time: f64,
    receiver: Position,
    receive_time: f64,
) -> Vec<(&'static str, Vec<f64>)> {
    let mut out = Vec::new();
    if cfg.geographic && geographic_leash_check(sender, receiver, range) == LeashVerdict::Discard {
        out.push((RULE_GEOGRAPHIC, vec![sender.distance(&receiver), range]));
    }
    if cfg.temporal {
        let elapsed = receive_time - send_time;
        match temporal_leash_check(send_time, receive_time, range, &cfg.leash) {
            LeashVerdict::Discard => out.push((RULE_TEMPORAL, vec![elapsed, cfg.leash.max_elapsed(range)])),
            LeashVerdict::ClockAnomaly => out.push((RULE_CLOCK, vec![elapsed, cfg.leash.clock_skew_bound])),
            LeashVerdict::Pass => {}
        }
    }
    out
}

/// Runs every enabled check over a finished trace. `range` is used when
/// the leash configuration does not name one.
pub fn analyze(trace: &Trace, cfg: &DetectionConfig, range: f64) -> DetectionReport {
    let range = cfg.leash.radio_range.unwrap_or(range);
    let mut report = DetectionReport::default();
    let mut routes = Vec::new();
    for rec in trace.records() {
        match &rec.event {
            TraceEvent::Deliver { node, packet_id, from, channel, leash, receiver_position, receive_time, .. } => {
                let channel_name = match channel {
                    Channel::Radio => "radio",
                    Channel::Tunnel => "tunnel",
                };
                if *channel == Channel::Tunnel {
                    report.tunnel_deliveries += 1;
                }
                let Some(leash) = leash else {
                    report.unleashed_deliveries += 1;
                    continue;
                };
                if leash.stamper == *node && *from == *node {
                    continue;
                }
                *report.checked_deliveries.entry(channel_name.to_string()).or_default() += 1;
                let fired = leash_alarms(cfg, range, leash.position, leash.time, *receiver_position, *receive_time);
                if *channel == Channel::Tunnel && fired.iter().any(|(r, _)| *r != RULE_CLOCK) {
                    report.tunnel_deliveries_discarded += 1;
                }
                for (rule, evidence) in fired {
                    report.raise(Alarm { time: rec.time, rule: rule.into(), node: *node, packet_id: Some(*packet_id), evidence });
                }
            }
            TraceEvent::RouteSelected { node, origin, apparent, origin_position, destination_position, .. }
                if node == origin =>
            {
                routes.push(apparent.clone());
                if cfg.hop_bound {
                    report.routes_checked += 1;
                    let hops = apparent.len().saturating_sub(1) as u32;
                    let bound = hop_lower_bound(*origin_position, *destination_position, range);
                    if hops < bound {
                        report.raise(Alarm {
                            time: rec.time,
                            rule: RULE_HOP_BOUND.into(),
                            node: *node,
                            packet_id: None,
                            evidence: vec![hops as f64, bound as f64, origin_position.distance(destination_position)],
                        });
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(threshold) = cfg.route_frequency_threshold {
        report.suspicious_nodes = route_frequency_analysis(&routes, threshold);
        let flagged: Vec<(NodeId, usize)> = report.suspicious_nodes.iter().map(|(n, c)| (*n, *c)).collect();
        for (node, count) in flagged {
            let alarm = Alarm {
                time: trace.records().last().map_or(0.0, |r| r.time),
                rule: RULE_FREQUENCY.into(),
                node,
                packet_id: None,
                evidence: vec![count as f64, threshold as f64],
            };
            report.raise(alarm);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64) -> Position {
        Position::new(x, 0.0)
    }

    #[test]
    fn geographic_boundary() {
        assert_eq!(geographic_leash_check(p(0.0), p(0.0), 100.0), LeashVerdict::Pass);
        assert_eq!(geographic_leash_check(p(0.0), p(100.0), 100.0), LeashVerdict::Pass);
        assert_eq!(geographic_leash_check(p(0.0), p(150.0), 100.0), LeashVerdict::Discard);
    }

    #[test]
    fn temporal_threshold_arithmetic() {
        let cfg = LeashConfig::default();
        assert_eq!(temporal_leash_check(1.0, 1.0, 250.0, &cfg), LeashVerdict::Pass);
        let bound = 250.0 / 3.0e8 + 1.0e-6;
        assert!((cfg.max_elapsed(250.0) - bound).abs() < 1e-15);
        assert_eq!(temporal_leash_check(0.0, 1.0e-3, 250.0, &cfg), LeashVerdict::Discard);
        assert_eq!(temporal_leash_check(0.0, 250.0 / 3.0e8, 250.0, &cfg), LeashVerdict::Pass);
        assert_eq!(temporal_leash_check(1.0, 0.9, 250.0, &cfg), LeashVerdict::ClockAnomaly);
    }

    #[test]
    fn skew_widens_the_window() {
        let cfg = LeashConfig { clock_skew_bound: 1.0e-3, ..LeashConfig::default() };
        assert_eq!(temporal_leash_check(0.0, 1.5e-3, 250.0, &cfg), LeashVerdict::Pass);
        assert_eq!(temporal_leash_check(0.0, -1.5e-3, 250.0, &cfg), LeashVerdict::Pass);
    }

    #[test]
    fn hop_bound_ceiling() {
        assert_eq!(hop_lower_bound(p(0.0), p(0.0), 100.0), 0);
        assert!(hop_lower_bound_check(p(0.0), p(350.0), 100.0, 3));
        assert!(!hop_lower_bound_check(p(0.0), p(350.0), 100.0, 4));
        assert_eq!(hop_lower_bound(p(0.0), p(300.0), 100.0), 3);
        assert_eq!(hop_lower_bound(p(0.0), p(300.001), 100.0), 4);
    }

    #[test]
    fn frequency_counts_intermediates_only() {
        assert!(route_frequency_analysis(&[], 0).is_empty());
        let n = NodeId;
        let routes = vec![vec![n(24), n(36), n(0)], vec![n(24), n(36), n(6)], vec![n(24), n(36), n(48)]];
        let flagged = route_frequency_analysis(&routes, 2);
        assert_eq!(flagged.into_iter().collect::<Vec<_>>(), vec![(n(36), 3)]);
        assert!(route_frequency_analysis(&routes, 3).is_empty());
    }
}
