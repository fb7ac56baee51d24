//! Wire-level packet representation shared by SCDP and NDP endpoints.

use crate::topology::NodeId;

pub const SYMBOL_WIRE_BYTES: u32 = 1500;
pub const CTRL_WIRE_BYTES: u32 = 64;

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SessionId(pub u64);

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum PacketType {
    Symbol,
    Header,
    Pull,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Unicast,
    OneToMany,
    ManyToOne,
}

impl std::fmt::Display for TransferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TransferMode::Unicast => "unicast",
            TransferMode::OneToMany => "one_to_many",
            TransferMode::ManyToOne => "many_to_one",
        };
        f.write_str(s)
    }
}

/// Session options carried on syn-flagged packets (and preserved on trimmed
/// headers, so a receiver can establish from a header alone).
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct SessionOpts {
    pub mode: TransferMode,
    pub total_len: u64,
    pub num_blocks: u32,
    pub symbol_size: u32,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct GroupId(pub u32);

/// How a packet traverses the fabric: a sprayed source route, or replication
/// along a pre-established multicast tree.
#[derive(Clone, Debug)]
pub enum Route {
    Unicast { path: Vec<NodeId>, hop: usize },
    Multicast(GroupId),
}

#[derive(Clone, Debug)]
pub struct Packet {
    pub session: SessionId,
    /// Index of the emitting sender within the session (0 for unicast).
    pub sender_index: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub typ: PacketType,
    /// MLFQ data priority, 0 (highest) .. N-1. Ignored for Header/Pull,
    /// which always ride the dedicated control queue.
    pub pri: u8,
    pub sbn: u32,
    pub esi: u32,
    /// Pull sequence number (Pull only).
    pub seq: u64,
    pub syn: bool,
    pub fin: bool,
    pub opts: Option<SessionOpts>,
    /// NDP: sequence number to retransmit, piggybacked on a pull.
    pub retx: Option<u32>,
    pub wire_bytes: u32,
    pub route: Route,
}

impl Packet {
    pub fn is_control(&self) -> bool {
        matches!(self.typ, PacketType::Header | PacketType::Pull)
    }

    /// Strips the payload, turning a symbol packet into a trimmed header
    /// that keeps SBN/ESI/flags/options.
    pub fn trim(&mut self) {
        debug_assert_eq!(self.typ, PacketType::Symbol);
        self.typ = PacketType::Header;
        self.wire_bytes = CTRL_WIRE_BYTES;
    }
}
