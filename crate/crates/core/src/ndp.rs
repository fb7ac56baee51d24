//! NDP baseline endpoints: sequence-numbered packets, trimming-aware
//! retransmission, receiver-driven pulls. The NDP+ variant additionally tags
//! packets with MLFQ priorities like SCDP does.
//!
//! Unlike SCDP every packet is unique, so a trimmed packet must be
//! retransmitted by sequence number: the receiver echoes the trimmed seq in
//! its next pull and the sender queues that exact packet again.

use std::collections::{BTreeSet, VecDeque};

use crate::scdp::mlfq_priority;

/// One NDP data packet the sender should put on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NdpEmit {
    /// Packet sequence number, 0-based; doubles as the payload identity.
    pub seq: u32,
    pub pri: u8,
    pub syn: bool,
    pub is_retx: bool,
}

/// NDP sender: pushes an initial window, thereafter clocks one packet per
/// pull; retransmissions requested via the pull's `retx` field take
/// precedence over first transmissions.
pub struct NdpSender {
    total_packets: u32,
    next_new: u32,
    retx_queue: VecDeque<u32>,
    queued_retx: BTreeSet<u32>,
    expected_pull_seq: u64,
    pub bytes_sent: u64,
    packet_bytes: u32,
    mlfq: bool,
    thresholds: [u64; 4],
    pub to_be_garbage_collected: bool,
}

impl NdpSender {
    pub fn new(total_packets: u32, packet_bytes: u32, mlfq: bool, thresholds: [u64; 4]) -> Self {
        assert!(total_packets > 0);
        NdpSender {
            total_packets,
            next_new: 0,
            retx_queue: VecDeque::new(),
            queued_retx: BTreeSet::new(),
            expected_pull_seq: 0,
            bytes_sent: 0,
            packet_bytes,
            mlfq,
            thresholds,
            to_be_garbage_collected: false,
        }
    }

    fn pri(&self) -> u8 {
        if self.mlfq {
            mlfq_priority(self.bytes_sent, &self.thresholds)
        } else {
            0
        }
    }

    fn next_packet(&mut self, highest_pri: bool) -> Option<NdpEmit> {
        let (seq, is_retx) = if let Some(seq) = self.retx_queue.pop_front() {
            self.queued_retx.remove(&seq);
            (seq, true)
        } else if self.next_new < self.total_packets {
            self.next_new += 1;
            (self.next_new - 1, false)
        } else {
            return None;
        };
        let pri = if highest_pri { 0 } else { self.pri() };
        self.bytes_sent += self.packet_bytes as u64;
        Some(NdpEmit {
            seq,
            pri,
            syn: seq == 0 && !is_retx,
            is_retx,
        })
    }

    /// Initial window push at line rate, at the highest priority like the
    /// connection-establishment window of the coded protocol.
    pub fn init_session(&mut self, w: u32) -> Vec<NdpEmit> {
        (0..w).filter_map(|_| self.next_packet(true)).collect()
    }

    /// Handles one pull: queues any requested retransmission, then releases
    /// `gap` packets (retransmissions first, then new data).
    pub fn on_pull(&mut self, seq: u64, retx: Option<u32>, fin: bool) -> Vec<NdpEmit> {
        if let Some(r) = retx {
            if r < self.total_packets && self.queued_retx.insert(r) {
                self.retx_queue.push_back(r);
            }
        }
        let gap = seq.saturating_sub(self.expected_pull_seq);
        if gap > 0 {
            self.expected_pull_seq = seq;
        }
        let out: Vec<NdpEmit> = (0..gap).filter_map(|_| self.next_packet(fin)).collect();
        if fin {
            self.to_be_garbage_collected = true;
        }
        out
    }
}

/// A pull request the NDP receiver wants paced out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NdpPull {
    pub seq: u64,
    /// Trimmed packet to retransmit, if this pull was triggered by a header.
    pub retx: Option<u32>,
    pub fin: bool,
}

/// What the receiver wants done after one arrival.
#[derive(Clone, Debug, Default)]
pub struct NdpActions {
    pub pulls: Vec<NdpPull>,
    pub completed: bool,
}

/// NDP receiver: tracks received sequence numbers; every header converts to
/// a retransmission request carried on a pull.
pub struct NdpReceiver {
    total_packets: u32,
    /// Flow-control window: the unsolicited initial push is pre-credited
    /// and pulls never raise in-flight packets above this.
    window: u32,
    received: BTreeSet<u32>,
    pull_seq: u64,
    inflight: i64,
    pub pulls_sent: u64,
    pub complete: bool,
    pub packets_received: u64,
    pub headers_received: u64,
    pub duplicates: u64,
}

impl NdpReceiver {
    pub fn new(total_packets: u32, window: u32) -> Self {
        assert!(total_packets > 0 && window > 0);
        NdpReceiver {
            total_packets,
            window,
            received: BTreeSet::new(),
            pull_seq: 0,
            inflight: window as i64,
            pulls_sent: 0,
            complete: false,
            packets_received: 0,
            headers_received: 0,
            duplicates: 0,
        }
    }

    fn needed(&self) -> u64 {
        (self.total_packets as u64) - self.received.len() as u64
    }

    fn push_pull(&mut self, retx: Option<u32>, out: &mut Vec<NdpPull>) {
        self.pull_seq += 1;
        self.pulls_sent += 1;
        self.inflight += 1;
        out.push(NdpPull {
            seq: self.pull_seq,
            retx,
            // last pull of the transfer: in-flight now covers everything
            fin: self.inflight == self.needed() as i64,
        });
    }

    fn refill(&mut self, out: &mut Vec<NdpPull>) {
        while !self.complete
            && self.inflight < self.needed() as i64
            && self.inflight < self.window as i64
        {
            self.push_pull(None, out);
        }
    }

    /// Full data packet arrived.
    pub fn on_packet(&mut self, seq: u32, _syn: bool) -> NdpActions {
        let mut act = NdpActions::default();
        self.inflight -= 1;
        if self.complete {
            return act;
        }
        self.packets_received += 1;
        if !self.received.insert(seq) {
            self.duplicates += 1;
        }
        if self.received.len() as u32 == self.total_packets {
            self.complete = true;
            act.completed = true;
            return act;
        }
        self.refill(&mut act.pulls);
        act
    }

    /// Trimmed header arrived: request retransmission of that seq.
    pub fn on_header(&mut self, seq: u32, _syn: bool) -> NdpActions {
        let mut act = NdpActions::default();
        self.inflight -= 1;
        if self.complete {
            return act;
        }
        self.headers_received += 1;
        if !self.received.contains(&seq) && self.inflight < self.needed() as i64 {
            self.push_pull(Some(seq), &mut act.pulls);
        }
        self.refill(&mut act.pulls);
        act
    }

    /// Re-resolves a retransmission request at transmit time. Pulls can sit
    /// in the pacer long enough for the requested packet to arrive through
    /// another path; retransmitting it then only wastes downlink capacity.
    /// Returns the original seq if still missing, otherwise the current
    /// lowest missing seq (None when nothing is missing).
    pub fn refresh_retx(&self, seq: u32) -> Option<u32> {
        if self.complete {
            return None;
        }
        if !self.received.contains(&seq) {
            return Some(seq);
        }
        (0..self.total_packets).find(|s| !self.received.contains(s))
    }

    #[doc(hidden)]
    pub fn debug_state(&self) -> (u32, Option<u32>, i64, u64, u64, u64) {
        (
            self.received.len() as u32,
            (0..self.total_packets).find(|s| !self.received.contains(s)),
            self.inflight,
            self.pulls_sent,
            self.headers_received,
            self.duplicates,
        )
    }

    /// Timeout recovery: pull for the lowest missing seq.
    pub fn timeout_pull(&mut self) -> Option<NdpPull> {
        if self.complete {
            return None;
        }
        let missing = (0..self.total_packets).find(|s| !self.received.contains(s));
        let mut out = Vec::new();
        self.push_pull(missing, &mut out);
        out.pop()
    }
}
