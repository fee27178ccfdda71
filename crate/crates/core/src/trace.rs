//! The ordered event log of one run, persisted as JSON lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::packet::{Leash, PacketKind};
use crate::topology::{NodeId, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Radio,
    Tunnel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Collision,
    Duplicate,
    Ttl,
    NoRoute,
    LinkFailure,
    TunnelDown,
    TunnelFailure,
    WormholeDrop,
    RateLimit,
    Asymmetric,
    GeographicLeash,
    TemporalLeash,
    MalformedTunnel,
    LateReply,
    DiscoveryFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    QueueEmpty,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Transmit {
        node: NodeId,
        packet_id: u64,
        packet: PacketKind,
        channel: Channel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dst: Option<NodeId>,
        range_multiplier: f64,
    },
    Deliver {
        node: NodeId,
        packet_id: u64,
        packet: PacketKind,
        /// Physical transmitter (tunnel entry for tunnel deliveries).
        from: NodeId,
        channel: Channel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        leash: Option<Leash>,
        receiver_position: Position,
        /// Receiver's local clock at the start of reception.
        receive_time: f64,
    },
    Drop {
        node: NodeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        packet_id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        packet: Option<PacketKind>,
        reason: DropReason,
    },
    RreqOriginated {
        node: NodeId,
        destination: NodeId,
        rreq_id: u32,
        ttl: u32,
        attempt: u32,
    },
    RouteSelected {
        node: NodeId,
        origin: NodeId,
        destination: NodeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        demand: Option<usize>,
        /// Route as the protocol sees it, origin first.
        apparent: Vec<NodeId>,
        /// Nodes the route's packets physically traverse.
        actual: Vec<NodeId>,
        origin_position: Position,
        destination_position: Position,
    },
    RouteFailure {
        node: NodeId,
        destination: NodeId,
    },
    DataSent {
        node: NodeId,
        packet_id: u64,
        demand: usize,
        seq: u64,
    },
    DataReceived {
        node: NodeId,
        packet_id: u64,
        demand: usize,
        seq: u64,
    },
    TunnelTransit {
        node: NodeId,
        exit: NodeId,
        attack: usize,
        packet_id: u64,
        packet: PacketKind,
        dropped: bool,
    },
    TunnelFailure {
        attack: usize,
        node: NodeId,
        exit: NodeId,
    },
    LinkToggle {
        attack: usize,
        up: bool,
    },
    Alarm {
        node: NodeId,
        rule: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        packet_id: Option<u64>,
        evidence: Vec<f64>,
    },
    End {
        reason: EndReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: TraceEvent) {
        debug_assert!(
            self.records.last().is_none_or(|r| r.time <= time),
            "trace timestamps must not decrease"
        );
        self.records.push(TraceRecord { time, event });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Self { records }
    }
}
