//! Frames exchanged by nodes. A [`Frame`] is what travels over the air: a
//! link header, a leash stamp, and one typed [`Payload`].

use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketKind {
    Rreq,
    Rrep,
    Rerr,
    Hello,
    DvUpdate,
    Data,
    Tunnel,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        !matches!(self, PacketKind::Data | PacketKind::Tunnel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rreq {
    pub origin: NodeId,
    pub destination: NodeId,
    pub rreq_id: u32,
    pub hop_count: u32,
    /// Visible forwarders, origin first.
    pub route_record: Vec<NodeId>,
    pub ttl: u32,
    pub sent_time: f64,
    pub origin_position: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rrep {
    pub origin: NodeId,
    pub destination: NodeId,
    pub rreq_id: u32,
    pub hop_count: u32,
    /// Apparent route as accepted by the destination, origin first.
    pub route_record: Vec<NodeId>,
    /// Nodes that physically handled the answered request.
    pub true_path: Vec<NodeId>,
    pub destination_position: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub sender: NodeId,
    pub heard: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvAdvert {
    pub owner: NodeId,
    pub entries: Vec<(NodeId, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Data {
    pub demand: usize,
    pub source: NodeId,
    pub destination: NodeId,
    pub seq: u64,
    /// Set for demands pinned to an explicit path.
    pub source_route: Option<Vec<NodeId>>,
}

/// An encapsulated frame travelling as ordinary data between two colluding
/// nodes along a fixed path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tunnel {
    pub attack: usize,
    pub path: Vec<NodeId>,
    /// Nodes that carried the tunnel packet so far; appended to the inner
    /// frame's true path on decapsulation.
    pub carried_by: Vec<NodeId>,
    /// The captured frame, serialized and never touched in transit.
    pub inner: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr { unreachable: Vec<NodeId> },
    Hello(Hello),
    DvUpdate(DvAdvert),
    Data(Data),
    Tunnel(Tunnel),
}

impl Payload {
    pub fn kind(&self) -> PacketKind {
        match self {
            Payload::Rreq(_) => PacketKind::Rreq,
            Payload::Rrep(_) => PacketKind::Rrep,
            Payload::Rerr { .. } => PacketKind::Rerr,
            Payload::Hello(_) => PacketKind::Hello,
            Payload::DvUpdate(_) => PacketKind::DvUpdate,
            Payload::Data(_) => PacketKind::Data,
            Payload::Tunnel(_) => PacketKind::Tunnel,
        }
    }
}

/// Position and time inserted by the transmitter of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leash {
    pub stamper: NodeId,
    pub position: Position,
    /// Stamper's local clock at transmission start.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub id: u64,
    /// The node the receiver believes sent this frame.
    pub link_src: NodeId,
    /// `None` for broadcasts.
    pub link_dst: Option<NodeId>,
    pub leash: Option<Leash>,
    /// Every node that physically received this frame (or its payload), in order.
    pub true_path: Vec<NodeId>,
    pub payload: Payload,
}

impl Frame {
    pub fn kind(&self) -> PacketKind {
        self.payload.kind()
    }

    pub fn is_broadcast(&self) -> bool {
        self.link_dst.is_none()
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("frames always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Option<Frame> {
        serde_json::from_slice(bytes).ok()
    }
}
