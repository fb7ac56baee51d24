//! Output-queued switch port: one header/pull queue plus N data queues that
//! statically split the buffer budget (each priority band owns its slots),
//! packet trimming on overflow, weighted round-robin between the control and
//! data classes, and round-robin service among backlogged data queues.

use std::collections::VecDeque;

use crate::packet::{Packet, PacketType, SessionId};

#[derive(Clone, Debug)]
pub struct PortConfig {
    /// Number of data priority bands (default 5 per the MLFQ thresholds).
    pub data_queues: usize,
    /// Total data-buffer budget, split evenly across the data queues (each
    /// priority band owns budget / queues slots, at least one).
    pub data_budget: usize,
    /// Header/pull queue capacity in packets.
    pub header_capacity: usize,
    /// WRR quanta, packets per round for the header class.
    pub w_hdr: u32,
    /// WRR quanta, packets per round for the data class.
    pub w_data: u32,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            data_queues: 5,
            data_budget: 100,
            // headers are 64 B; a deep queue is cheap and a dropped trim
            // notification costs the victim a full RTO
            header_capacity: 1000,
            w_hdr: 1,
            w_data: 1,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum EnqueueOutcome {
    Queued,
    /// The named session had a symbol trimmed to a header.
    Trimmed(SessionId),
    Dropped(SessionId),
}

#[derive(Clone, Debug, Default)]
pub struct PortCounters {
    pub enqueued_data: u64,
    pub enqueued_ctrl: u64,
    pub trimmed: u64,
    pub dropped_data: u64,
    pub dropped_ctrl: u64,
    pub dequeued_by_pri: Vec<u64>,
    pub dequeued_ctrl: u64,
}

pub struct SwitchPort {
    cfg: PortConfig,
    /// Per-priority data queue capacity (static allocation of the budget).
    queue_cap: usize,
    header_queue: VecDeque<Packet>,
    data_queues: Vec<VecDeque<Packet>>,
    data_occupancy: usize,
    // per-round WRR credits; refilled when both classes exhaust them
    hdr_credit: u32,
    data_credit: u32,
    /// Round-robin cursor over the data queues.
    rr_next: usize,
    pub counters: PortCounters,
}

impl SwitchPort {
    pub fn new(cfg: PortConfig) -> Self {
        let n = cfg.data_queues;
        let (w_hdr, w_data) = (cfg.w_hdr, cfg.w_data);
        let queue_cap = (cfg.data_budget / n.max(1)).max(1);
        SwitchPort {
            cfg,
            queue_cap,
            header_queue: VecDeque::new(),
            data_queues: (0..n).map(|_| VecDeque::new()).collect(),
            data_occupancy: 0,
            hdr_credit: w_hdr,
            data_credit: w_data,
            rr_next: 0,
            counters: PortCounters {
                dequeued_by_pri: vec![0; n],
                ..Default::default()
            },
        }
    }

    /// Host NIC variant: effectively unbounded queues, so no trimming at the
    /// sending host itself.
    pub fn host_nic(data_queues: usize, w_hdr: u32, w_data: u32) -> Self {
        SwitchPort::new(PortConfig {
            data_queues,
            data_budget: usize::MAX / 2,
            header_capacity: usize::MAX / 2,
            w_hdr,
            w_data,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.header_queue.is_empty() && self.data_occupancy == 0
    }

    pub fn data_occupancy(&self) -> usize {
        self.data_occupancy
    }

    pub fn header_occupancy(&self) -> usize {
        self.header_queue.len()
    }

    /// Header/pull packets go to the control queue (dropped only when it is
    /// full). Symbol packets go to their priority's data queue if that queue
    /// has a free slot; otherwise the payload is stripped and the header is
    /// enqueued in the control queue ("trimmed"); if that is also full, the
    /// packet is dropped. A backlogged priority band can never displace or
    /// crowd out another band: each owns its slice of the buffer.
    pub fn enqueue(&mut self, mut pkt: Packet) -> EnqueueOutcome {
        if pkt.is_control() {
            if self.header_queue.len() >= self.cfg.header_capacity {
                self.counters.dropped_ctrl += 1;
                return EnqueueOutcome::Dropped(pkt.session);
            }
            self.counters.enqueued_ctrl += 1;
            self.header_queue.push_back(pkt);
            return EnqueueOutcome::Queued;
        }
        debug_assert_eq!(pkt.typ, PacketType::Symbol);
        let pri = (pkt.pri as usize).min(self.cfg.data_queues - 1);
        if self.data_queues[pri].len() < self.queue_cap {
            self.counters.enqueued_data += 1;
            self.data_queues[pri].push_back(pkt);
            self.data_occupancy += 1;
            return EnqueueOutcome::Queued;
        }
        let session = pkt.session;
        if self.header_queue.len() < self.cfg.header_capacity {
            pkt.trim();
            self.counters.trimmed += 1;
            self.header_queue.push_back(pkt);
            EnqueueOutcome::Trimmed(session)
        } else {
            self.counters.dropped_data += 1;
            EnqueueOutcome::Dropped(session)
        }
    }

    /// WRR between the control queue and the data-queue group; within the
    /// data group, round-robin over the backlogged queues, so no priority
    /// band can be starved outright while it still holds packets. Work
    /// conserving: a class with no backlog yields its slots.
    pub fn dequeue(&mut self) -> Option<Packet> {
        let have_hdr = !self.header_queue.is_empty();
        let have_data = self.data_occupancy > 0;
        if !have_hdr && !have_data {
            return None;
        }
        if self.hdr_credit == 0 && self.data_credit == 0 {
            self.hdr_credit = self.cfg.w_hdr;
            self.data_credit = self.cfg.w_data;
        }
        let serve_hdr = if have_hdr && have_data {
            if self.hdr_credit > 0 {
                true
            } else {
                false
            }
        } else {
            have_hdr
        };
        if serve_hdr {
            self.hdr_credit = self.hdr_credit.saturating_sub(1);
            self.counters.dequeued_ctrl += 1;
            self.header_queue.pop_front()
        } else {
            self.data_credit = self.data_credit.saturating_sub(1);
            let n = self.data_queues.len();
            let q = (0..n)
                .map(|i| (self.rr_next + i) % n)
                .find(|&i| !self.data_queues[i].is_empty())
                .unwrap();
            self.rr_next = (q + 1) % n;
            self.data_occupancy -= 1;
            self.counters.dequeued_by_pri[q] += 1;
            self.data_queues[q].pop_front()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{
        PacketType, Route, SessionId, CTRL_WIRE_BYTES, SYMBOL_WIRE_BYTES,
    };
    use crate::topology::NodeId;

    fn symbol(pri: u8, esi: u32) -> Packet {
        Packet {
            session: SessionId(1),
            sender_index: 0,
            src: NodeId(0),
            dst: NodeId(1),
            typ: PacketType::Symbol,
            pri,
            sbn: 0,
            esi,
            seq: 0,
            syn: false,
            fin: false,
            opts: None,
            retx: None,
            wire_bytes: SYMBOL_WIRE_BYTES,
            route: Route::Unicast {
                path: vec![],
                hop: 0,
            },
        }
    }

    fn pull(seq: u64) -> Packet {
        let mut p = symbol(0, 0);
        p.typ = PacketType::Pull;
        p.seq = seq;
        p.wire_bytes = CTRL_WIRE_BYTES;
        p
    }

    #[test]
    fn empty_port_accepts_symbol() {
        let mut port = SwitchPort::new(PortConfig::default());
        assert_eq!(port.enqueue(symbol(0, 0)), EnqueueOutcome::Queued);
        assert_eq!(port.data_occupancy(), 1);
    }

    #[test]
    fn fifth_symbol_of_a_band_is_trimmed() {
        // 20-packet budget over 5 queues = 4 slots per band
        let cfg = PortConfig {
            data_budget: 20,
            ..PortConfig::default()
        };
        let mut port = SwitchPort::new(cfg);
        for i in 0..4 {
            assert_eq!(port.enqueue(symbol(2, i)), EnqueueOutcome::Queued);
        }
        let outcome = port.enqueue(symbol(2, 4));
        assert_eq!(outcome, EnqueueOutcome::Trimmed(SessionId(1)));
        assert_eq!(port.counters.trimmed, 1);
        // drain the control queue; the trimmed header keeps SBN/ESI and
        // shrinks to 64 B
        let hdr = port.dequeue().unwrap();
        assert_eq!(hdr.typ, PacketType::Header);
        assert_eq!(hdr.esi, 4);
        assert_eq!(hdr.wire_bytes, CTRL_WIRE_BYTES);
    }

    #[test]
    fn bands_cannot_crowd_each_other_out() {
        let cfg = PortConfig {
            data_budget: 20,
            ..PortConfig::default()
        };
        let mut port = SwitchPort::new(cfg);
        // saturate the lowest-priority band
        for i in 0..10 {
            port.enqueue(symbol(4, i));
        }
        assert_eq!(port.data_occupancy(), 4);
        // a high-priority arrival still has its own slots
        assert_eq!(port.enqueue(symbol(0, 99)), EnqueueOutcome::Queued);
    }

    #[test]
    fn drop_when_both_full() {
        let cfg = PortConfig {
            data_queues: 1,
            data_budget: 2,
            header_capacity: 3,
            ..Default::default()
        };
        let mut port = SwitchPort::new(cfg);
        port.enqueue(symbol(0, 0));
        port.enqueue(symbol(0, 1));
        // next three trim into the header queue
        for i in 2..5 {
            assert_eq!(
                port.enqueue(symbol(0, i)),
                EnqueueOutcome::Trimmed(SessionId(1))
            );
        }
        assert_eq!(
            port.enqueue(symbol(0, 5)),
            EnqueueOutcome::Dropped(SessionId(1))
        );
        assert_eq!(port.enqueue(pull(0)), EnqueueOutcome::Dropped(SessionId(1)));
        assert_eq!(port.counters.dropped_data, 1);
        assert_eq!(port.counters.dropped_ctrl, 1);
    }

    #[test]
    fn round_robin_across_data_bands() {
        let mut port = SwitchPort::new(PortConfig::default());
        port.enqueue(symbol(4, 40));
        port.enqueue(symbol(1, 10));
        port.enqueue(symbol(1, 11));
        port.enqueue(symbol(4, 41));
        let order: Vec<u32> = std::iter::from_fn(|| port.dequeue()).map(|p| p.esi).collect();
        // bands alternate; neither backlog starves the other
        assert_eq!(order, vec![10, 40, 11, 41]);
    }

    #[test]
    fn wrr_alternates_when_both_backlogged() {
        let mut port = SwitchPort::new(PortConfig::default());
        for i in 0..4 {
            port.enqueue(symbol(0, i));
            port.enqueue(pull(i as u64));
        }
        let kinds: Vec<PacketType> = (0..8).map(|_| port.dequeue().unwrap().typ).collect();
        // 1:1 quanta: strict alternation
        for pair in kinds.chunks(2) {
            assert_eq!(pair[0], PacketType::Pull);
            assert_eq!(pair[1], PacketType::Symbol);
        }
    }

    #[test]
    fn work_conservation_when_one_class_empty() {
        let mut port = SwitchPort::new(PortConfig::default());
        for i in 0..4 {
            port.enqueue(symbol(3, i));
        }
        for i in 0..4 {
            assert_eq!(port.dequeue().unwrap().esi, i);
        }
        assert!(port.dequeue().is_none());
        for i in 0..4 {
            port.enqueue(pull(i));
        }
        assert_eq!(
            (0..4).filter_map(|_| port.dequeue()).count(),
            4,
            "control class served alone"
        );
    }

    #[test]
    fn data_share_under_saturation() {
        // With W_hdr:W_data = 1:1 and both classes saturated, data packets
        // get 1/2 the packet slots, i.e. >= 1/(1+W_hdr/W_data).
        let mut port = SwitchPort::new(PortConfig::default());
        let mut data_slots = 0u32;
        let mut total = 0u32;
        for round in 0..200 {
            port.enqueue(symbol(0, round));
            port.enqueue(pull(round as u64));
            if port.data_occupancy() > 0 && port.header_occupancy() > 0 {
                let p = port.dequeue().unwrap();
                total += 1;
                if p.typ == PacketType::Symbol {
                    data_slots += 1;
                }
            }
        }
        assert!(data_slots as f64 / total as f64 >= 0.5);
    }
}
