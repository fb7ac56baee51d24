//! SCDP endpoint state machines: sender and receiver sessions for unicast,
//! one-to-many and many-to-one transport, with MLFQ priority tagging, block
//! pipelining and fin/garbage-collection semantics.
//!
//! The state machines are pure: they consume packet views and emit symbol
//! and pull descriptors. The simulation layer turns those into packets,
//! sprays them, and paces pulls.

use std::collections::HashSet;

use crate::packet::{SessionOpts, TransferMode};

/// Default MLFQ demotion thresholds in cumulative bytes sent: 10KB, 100KB,
/// 1MB, 10MB.
pub const DEFAULT_THRESHOLDS: [u64; 4] = [10_000, 100_000, 1_000_000, 10_000_000];

/// Priority is the number of thresholds strictly exceeded by bytes_sent
/// (0 is highest; a session at exactly a threshold is not yet demoted).
pub fn mlfq_priority(bytes_sent: u64, thresholds: &[u64]) -> u8 {
    thresholds.iter().filter(|&&t| bytes_sent > t).count() as u8
}

/// Splits a transfer of `total_len` bytes into pipelined sub-blocks of at
/// most `pipeline_symbols` symbols of `symbol_size` bytes each; returns the
/// per-block source symbol counts K_z.
pub fn block_plan(total_len: u64, symbol_size: u32, pipeline_symbols: u32) -> Vec<u32> {
    assert!(total_len > 0 && symbol_size > 0 && pipeline_symbols > 0);
    let total_symbols = total_len.div_ceil(symbol_size as u64) as u32;
    let full = total_symbols / pipeline_symbols;
    let rem = total_symbols % pipeline_symbols;
    let mut ks = vec![pipeline_symbols; full as usize];
    if rem > 0 {
        ks.push(rem);
    }
    ks
}

/// Receiver-side derivation of the per-block K values from syn options.
pub fn ks_from_opts(opts: &SessionOpts, pipeline_symbols: u32) -> Vec<u32> {
    let ks = block_plan(opts.total_len, opts.symbol_size, pipeline_symbols);
    debug_assert_eq!(ks.len() as u32, opts.num_blocks);
    ks
}

/// A symbol the sender wants on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolEmit {
    pub sbn: u32,
    pub esi: u32,
    pub pri: u8,
    pub syn: bool,
}

/// A pull request the receiver wants enqueued on its host's pull queue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PullEmit {
    /// Which sender of the session the pull is addressed to.
    pub sender_index: u32,
    pub seq: u64,
    pub sbn: u32,
    pub fin: bool,
}

/// SCDP sender session (Algorithm 1 shape). One instance per sender host;
/// many-to-one sessions run one instance per replica with disjoint ESI
/// streams (sender i emits ESIs congruent to i mod n).
pub struct SenderSession {
    pub mode: TransferMode,
    pub w: u32,
    pub sender_index: u32,
    pub n_senders: u32,
    ks: Vec<u32>,
    /// Per-block count of symbols this sender has emitted (its own stream).
    emitted: Vec<u32>,
    expected_pull_seq: u64,
    pub bytes_sent: u64,
    symbol_size: u32,
    thresholds: [u64; 4],
    pub num_sent_symbols: u64,
    pub to_be_garbage_collected: bool,
    // one-to-many state: per-receiver pull credit and liveness
    credits: Vec<i64>,
    rx_expected_seq: Vec<u64>,
    rx_active: Vec<bool>,
    /// Lowest block any active receiver still pulls for.
    rx_current_sbn: Vec<u32>,
}

impl SenderSession {
    pub fn new(
        mode: TransferMode,
        w: u32,
        sender_index: u32,
        n_senders: u32,
        n_receivers: usize,
        ks: Vec<u32>,
        symbol_size: u32,
        thresholds: [u64; 4],
    ) -> Self {
        let blocks = ks.len();
        SenderSession {
            mode,
            w,
            sender_index,
            n_senders,
            ks,
            emitted: vec![0; blocks],
            expected_pull_seq: 0,
            bytes_sent: 0,
            symbol_size,
            thresholds,
            num_sent_symbols: 0,
            to_be_garbage_collected: false,
            credits: vec![0; n_receivers],
            rx_expected_seq: vec![0; n_receivers],
            rx_active: vec![true; n_receivers],
            rx_current_sbn: vec![0; n_receivers],
        }
    }

    pub fn num_blocks(&self) -> u32 {
        self.ks.len() as u32
    }

    /// Next symbol of this sender's stream for `sbn`: source fragments
    /// first, then repair symbols — the stream never ends (rateless).
    fn next_symbol(&mut self, sbn: u32, highest_pri: bool) -> SymbolEmit {
        let b = sbn as usize;
        let counter = self.emitted[b];
        self.emitted[b] += 1;
        let esi = self.sender_index + self.n_senders * counter;
        let pri = if highest_pri {
            0
        } else {
            mlfq_priority(self.bytes_sent, &self.thresholds)
        };
        self.bytes_sent += self.symbol_size as u64;
        self.num_sent_symbols += 1;
        SymbolEmit {
            sbn,
            esi,
            pri,
            syn: false,
        }
    }

    /// Initial window push: w syn-flagged symbols of block 0 at the highest
    /// data priority, paced by the host NIC at line rate.
    pub fn init_session(&mut self) -> Vec<SymbolEmit> {
        debug_assert_eq!(self.num_sent_symbols, 0);
        (0..self.w)
            .map(|_| {
                let mut s = self.next_symbol(0, true);
                s.syn = true;
                s
            })
            .collect()
    }

    /// This sender's share of source symbols in block `b` (ESI-partitioned
    /// across senders for many-to-one; the full block for single-sender
    /// modes).
    fn sources_in_block(&self, b: usize) -> u32 {
        let k = self.ks[b];
        if self.sender_index >= k {
            0
        } else {
            (k - self.sender_index).div_ceil(self.n_senders)
        }
    }

    /// Block to serve for a pull hinting at `hint` (the receiver's lowest
    /// incomplete block): remaining source symbols of that block first, then
    /// later blocks' sources (pipelining keeps new data flowing while the
    /// hinted block's tail is still in flight), and repair symbols for the
    /// hinted block only once every source symbol is on the wire.
    fn pick_block(&self, hint: u32) -> u32 {
        let h = hint as usize;
        if self.emitted[h] < self.sources_in_block(h) {
            return hint;
        }
        for b in h + 1..self.ks.len() {
            if self.emitted[b] < self.sources_in_block(b) {
                return b as u32;
            }
        }
        hint
    }

    /// Unicast / many-to-one pull handling: fills the seq gap (covers
    /// reordered pulls), ignores already-served sequence numbers. Fin pulls
    /// elicit one symbol at the highest priority and arm garbage collection.
    pub fn on_pull(&mut self, seq: u64, sbn: u32, fin: bool) -> Vec<SymbolEmit> {
        debug_assert_ne!(self.mode, TransferMode::OneToMany);
        let gap = seq.saturating_sub(self.expected_pull_seq);
        if gap > 0 {
            self.expected_pull_seq = seq;
        }
        let sbn = sbn.min(self.num_blocks() - 1);
        let out = (0..gap)
            .map(|_| {
                let serve = self.pick_block(sbn);
                self.next_symbol(serve, fin)
            })
            .collect();
        if fin {
            self.to_be_garbage_collected = true;
        }
        out
    }

    /// One-to-many gate: credits the pulling receiver, then multicasts one
    /// new symbol for every unit of credit held by *all* active receivers.
    pub fn on_pull_multicast(
        &mut self,
        rx_index: usize,
        seq: u64,
        sbn: u32,
        fin: bool,
    ) -> Vec<SymbolEmit> {
        debug_assert_eq!(self.mode, TransferMode::OneToMany);
        let gap = seq.saturating_sub(self.rx_expected_seq[rx_index]);
        if gap > 0 {
            self.rx_expected_seq[rx_index] = seq;
            self.credits[rx_index] += gap as i64;
        }
        self.rx_current_sbn[rx_index] = self.rx_current_sbn[rx_index].max(sbn);
        if fin {
            // last receiver nearing completion; release is armed once all
            // receivers are done (see mark_receiver_done)
            self.to_be_garbage_collected = true;
        }
        self.drain_gate()
    }

    fn drain_gate(&mut self) -> Vec<SymbolEmit> {
        let mut out = Vec::new();
        loop {
            let active: Vec<usize> = (0..self.credits.len())
                .filter(|&i| self.rx_active[i])
                .collect();
            if active.is_empty() {
                return out;
            }
            if active.iter().any(|&i| self.credits[i] < 1) {
                return out;
            }
            for &i in &active {
                self.credits[i] -= 1;
            }
            // serve the lowest block any active receiver still needs
            let sbn = active
                .iter()
                .map(|&i| self.rx_current_sbn[i])
                .min()
                .unwrap()
                .min(self.num_blocks() - 1);
            let serve = self.pick_block(sbn);
            out.push(self.next_symbol(serve, false));
        }
    }

    /// Removes a completed receiver from the gate; remaining receivers'
    /// credit may now release symbols.
    pub fn mark_receiver_done(&mut self, rx_index: usize) -> Vec<SymbolEmit> {
        self.rx_active[rx_index] = false;
        if self.rx_active.iter().all(|a| !a) {
            self.to_be_garbage_collected = true;
            return Vec::new();
        }
        self.drain_gate()
    }

    pub fn all_receivers_done(&self) -> bool {
        self.rx_active.iter().all(|a| !a)
    }
}

/// Receiver-side view of an arriving SCDP packet.
#[derive(Clone, Debug)]
pub struct RxPacket {
    pub is_header: bool,
    pub sbn: u32,
    pub esi: u32,
    pub syn: bool,
    pub opts: Option<SessionOpts>,
    pub sender_index: u32,
}

#[derive(Clone, Debug, Default)]
pub struct RxStats {
    pub symbols_received: u64,
    pub headers_received: u64,
    /// Symbols received for already-delivered blocks (one-to-many overhead).
    pub unnecessary_symbols: u64,
    /// Symbols beyond K per block actually consumed by decoding.
    pub overhead_symbols: u64,
    pub decode_invoked: bool,
    pub decode_attempts: u64,
}

struct BlockRx {
    k: u32,
    esis: HashSet<u32>,
    source_count: u32,
    overhead: u8,
    delivered: bool,
    decode_used: bool,
}

impl BlockRx {
    fn target(&self) -> u32 {
        self.k + self.overhead as u32
    }
    fn received(&self) -> u32 {
        self.esis.len() as u32
    }
}

/// What the receiver wants done after processing one packet.
#[derive(Clone, Debug, Default)]
pub struct RxActions {
    pub pulls: Vec<PullEmit>,
    pub delivered_blocks: Vec<u32>,
    /// Session completed; when decode was required for the final sub-block,
    /// carries its K so the decode latency can be charged to the FCT.
    pub completed: Option<CompletionInfo>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CompletionInfo {
    pub final_block_decoded: Option<u32>,
}

/// SCDP receiver session (Algorithm 2 shape), generalised to pipelined
/// blocks and multiple senders.
pub struct ReceiverSession {
    pub established: bool,
    pub mode: TransferMode,
    pipeline_symbols: u32,
    blocks: Vec<BlockRx>,
    n_senders: u32,
    /// Total unsolicited initial window across all senders (n_senders * w).
    window: u32,
    pull_seq: Vec<u64>,
    /// Packets expected to still arrive: initial window plus pulls sent,
    /// minus arrivals. The pull window never exceeds `window`, so pulls are
    /// clocked out by arrivals (one for one) in steady state.
    inflight: i64,
    pub pulls_sent: u64,
    pub complete: bool,
    pub stats: RxStats,
    /// Round-robin cursor for unsolicited pulls (timeout recovery).
    rr_sender: u32,
}

impl ReceiverSession {
    pub fn new(n_senders: u32, window: u32, pipeline_symbols: u32) -> Self {
        ReceiverSession {
            established: false,
            mode: TransferMode::Unicast,
            pipeline_symbols,
            blocks: Vec::new(),
            n_senders,
            window,
            pull_seq: vec![0; n_senders as usize],
            inflight: 0,
            pulls_sent: 0,
            complete: false,
            stats: RxStats::default(),
            rr_sender: 0,
        }
    }

    fn establish(&mut self, opts: &SessionOpts) {
        self.established = true;
        self.mode = opts.mode;
        self.inflight = self.window as i64;
        self.blocks = ks_from_opts(opts, self.pipeline_symbols)
            .into_iter()
            .map(|k| BlockRx {
                k,
                esis: HashSet::new(),
                source_count: 0,
                overhead: 0,
                delivered: false,
                decode_used: false,
            })
            .collect();
    }

    /// Total symbols still needed across undelivered blocks.
    fn needed(&self) -> u64 {
        self.blocks
            .iter()
            .filter(|b| !b.delivered)
            .map(|b| b.target().saturating_sub(b.received()) as u64)
            .sum()
    }

    /// Lowest undelivered block still short of its target.
    fn current_block(&self) -> u32 {
        self.blocks
            .iter()
            .position(|b| !b.delivered)
            .unwrap_or(self.blocks.len().saturating_sub(1)) as u32
    }

    pub fn blocks_delivered(&self) -> u32 {
        self.blocks.iter().filter(|b| b.delivered).count() as u32
    }

    /// Per-block (K, symbols received, overhead armed, decode used) view
    /// for conservation checks.
    pub fn block_report(&self) -> Vec<(u32, u32, u8, bool)> {
        self.blocks
            .iter()
            .map(|b| (b.k, b.received(), b.overhead, b.decode_used))
            .collect()
    }

    fn push_pull(&mut self, to_sender: u32, out: &mut Vec<PullEmit>) {
        let s = to_sender as usize;
        self.pull_seq[s] += 1;
        self.pulls_sent += 1;
        self.inflight += 1;
        out.push(PullEmit {
            sender_index: to_sender,
            seq: self.pull_seq[s],
            sbn: self.current_block(),
            // last pull of the transfer: in-flight now covers everything
            fin: self.inflight == self.needed() as i64,
        });
    }

    /// Issues pulls until in-flight packets cover what is still needed,
    /// never exceeding the flow-control window. `origin` addresses the
    /// pulls (the sender whose packet triggered them), which lets each
    /// sender self-clock at the rate its symbols get through — the
    /// load-balancing mechanism for many-to-one.
    fn refill_pulls(&mut self, origin: u32, out: &mut Vec<PullEmit>) {
        while !self.complete
            && self.inflight < self.needed() as i64
            && self.inflight < self.window as i64
        {
            self.push_pull(origin, out);
        }
    }

    #[doc(hidden)]
    pub fn debug_inflight(&self) -> i64 {
        self.inflight
    }

    /// Timeout path: pull and header losses are recovered by re-issuing a
    /// pull after a quiet period.
    pub fn timeout_pull(&mut self) -> Option<PullEmit> {
        if self.complete || !self.established {
            return None;
        }
        let origin = self.rr_sender % self.n_senders;
        self.rr_sender += 1;
        let mut out = Vec::new();
        self.push_pull(origin, &mut out);
        out.pop()
    }

    pub fn on_packet(
        &mut self,
        pkt: &RxPacket,
        mut decode_fail_sample: impl FnMut() -> bool,
    ) -> RxActions {
        let mut act = RxActions::default();
        if pkt.syn && !self.established {
            match &pkt.opts {
                Some(opts) => self.establish(opts),
                None => return act, // malformed syn; nothing to do
            }
        }
        if !self.established {
            return act; // stale packet for an unknown session
        }
        // every arrival consumes an outstanding credit (the initial window
        // is pre-credited at establishment)
        self.inflight -= 1;
        if self.complete {
            if !pkt.is_header {
                self.stats.unnecessary_symbols += 1;
            }
            return act;
        }
        if pkt.is_header {
            self.stats.headers_received += 1;
            let b = pkt.sbn as usize;
            if b < self.blocks.len() && !self.blocks[b].delivered {
                if self.blocks[b].overhead == 0 {
                    self.blocks[b].overhead = 2;
                }
                // one pull per trimmed header (Alg. 2 processHeader), plus
                // any catch-up the new target requires
                if self.inflight < self.needed() as i64 {
                    self.push_pull(pkt.sender_index, &mut act.pulls);
                }
            }
            self.refill_pulls(pkt.sender_index, &mut act.pulls);
            return act;
        }
        // symbol packet
        self.stats.symbols_received += 1;
        let b = pkt.sbn as usize;
        if b >= self.blocks.len() {
            return act;
        }
        if self.blocks[b].delivered {
            self.stats.unnecessary_symbols += 1;
            self.refill_pulls(pkt.sender_index, &mut act.pulls);
            return act;
        }
        let block = &mut self.blocks[b];
        let new = block.esis.insert(pkt.esi);
        if new && pkt.esi < block.k {
            block.source_count += 1;
        }
        let all_source = block.source_count == block.k;
        if all_source && block.overhead == 0 {
            // skip decoding entirely: systematic, loss-free block
            block.delivered = true;
            act.delivered_blocks.push(pkt.sbn);
        } else if block.received() >= block.target() {
            if all_source {
                // every source fragment present: decoding is the identity
                block.delivered = true;
                act.delivered_blocks.push(pkt.sbn);
            } else {
                self.stats.decode_attempts += 1;
                if decode_fail_sample() {
                    block.overhead += 1; // very rare: request one more
                } else {
                    block.decode_used = true;
                    self.stats.decode_invoked = true;
                    self.stats.overhead_symbols +=
                        (block.received() - block.k) as u64;
                    block.delivered = true;
                    act.delivered_blocks.push(pkt.sbn);
                }
            }
        }
        if self.blocks.iter().all(|b| b.delivered) {
            self.complete = true;
            let last = self.blocks.last().unwrap();
            act.completed = Some(CompletionInfo {
                final_block_decoded: last.decode_used.then_some(last.k),
            });
            return act;
        }
        self.refill_pulls(pkt.sender_index, &mut act.pulls);
        act
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(total_len: u64, pipeline: u32) -> SessionOpts {
        SessionOpts {
            mode: TransferMode::Unicast,
            total_len,
            num_blocks: block_plan(total_len, 1500, pipeline).len() as u32,
            symbol_size: 1500,
        }
    }

    fn sym(sbn: u32, esi: u32, syn: bool, o: Option<SessionOpts>) -> RxPacket {
        RxPacket {
            is_header: false,
            sbn,
            esi,
            syn,
            opts: o,
            sender_index: 0,
        }
    }

    fn hdr(sbn: u32, esi: u32) -> RxPacket {
        RxPacket {
            is_header: true,
            sbn,
            esi,
            syn: false,
            opts: None,
            sender_index: 0,
        }
    }

    #[test]
    fn mlfq_thresholds() {
        let t = DEFAULT_THRESHOLDS;
        assert_eq!(mlfq_priority(5_000, &t), 0);
        assert_eq!(mlfq_priority(10_000, &t), 0); // boundary: strictly greater
        assert_eq!(mlfq_priority(10_001, &t), 1);
        assert_eq!(mlfq_priority(150_000, &t), 2);
        assert_eq!(mlfq_priority(2_000_000, &t), 3);
        assert_eq!(mlfq_priority(20_000_000, &t), 4);
    }

    #[test]
    fn block_plan_arithmetic() {
        // 2 MiB at T=1500 is 1399 symbols: 13 blocks of 100 plus one of 99
        let ks = block_plan(2 * 1024 * 1024, 1500, 100);
        assert_eq!(ks.len(), 14);
        assert_eq!(ks[..13], vec![100; 13][..]);
        assert_eq!(ks[13], 99);
        assert_eq!(ks.iter().sum::<u32>(), 1399);

        assert_eq!(block_plan(1500, 1500, 100), vec![1]);
        assert_eq!(block_plan(1501, 1500, 100), vec![2]);
        assert_eq!(block_plan(150_000, 1500, 100), vec![100]);
    }

    #[test]
    fn sender_initial_window() {
        let mut s = SenderSession::new(
            TransferMode::Unicast,
            12,
            0,
            1,
            1,
            vec![100],
            1500,
            DEFAULT_THRESHOLDS,
        );
        let push = s.init_session();
        assert_eq!(push.len(), 12);
        for (i, e) in push.iter().enumerate() {
            assert!(e.syn);
            assert_eq!(e.esi, i as u32);
            assert_eq!(e.pri, 0);
            assert_eq!(e.sbn, 0);
        }
    }

    #[test]
    fn sender_small_block_pushes_repair_to_fill_window() {
        // K=8 < w=12: push source 0..7 then repair 8..11
        let mut s = SenderSession::new(
            TransferMode::Unicast,
            12,
            0,
            1,
            1,
            vec![8],
            1500,
            DEFAULT_THRESHOLDS,
        );
        let push = s.init_session();
        assert_eq!(push.len(), 12);
        assert_eq!(push.last().unwrap().esi, 11);
    }

    #[test]
    fn many_to_one_esi_partition() {
        let mut s1 = SenderSession::new(
            TransferMode::ManyToOne,
            6,
            1,
            3,
            1,
            vec![99],
            1500,
            DEFAULT_THRESHOLDS,
        );
        let esis: Vec<u32> = s1.init_session().iter().map(|e| e.esi).collect();
        assert_eq!(esis, vec![1, 4, 7, 10, 13, 16]);
    }

    #[test]
    fn pull_gap_and_replay() {
        let mut s = SenderSession::new(
            TransferMode::Unicast,
            12,
            0,
            1,
            1,
            vec![100],
            1500,
            DEFAULT_THRESHOLDS,
        );
        s.init_session();
        assert_eq!(s.on_pull(5, 0, false).len(), 5);
        // reordered: seq 7 before seq 6 => gap of 2, then 6 is ignored
        assert_eq!(s.on_pull(7, 0, false).len(), 2);
        assert_eq!(s.on_pull(6, 0, false).len(), 0);
    }

    #[test]
    fn fin_pull_highest_priority_and_gc() {
        let mut s = SenderSession::new(
            TransferMode::Unicast,
            12,
            0,
            1,
            1,
            vec![100],
            1500,
            DEFAULT_THRESHOLDS,
        );
        s.init_session();
        // demote the session first
        for seq in 1..=20 {
            s.on_pull(seq, 0, false);
        }
        assert!(s.bytes_sent > 10_000);
        let out = s.on_pull(21, 0, true);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pri, 0);
        assert!(s.to_be_garbage_collected);
    }

    #[test]
    fn lossless_receiver_sends_k_minus_w_pulls() {
        let k = 100u32;
        let w = 12u32;
        let o = opts(k as u64 * 1500, 100);
        let mut r = ReceiverSession::new(1, w, 100);
        let mut esi = 0u32;
        let mut completed = false;
        // deliver the initial window (syn), then one symbol per pull
        let mut pending: u64 = 0;
        for _ in 0..w {
            let a = r.on_packet(&sym(0, esi, true, Some(o)), || false);
            esi += 1;
            pending += a.pulls.len() as u64;
            completed |= a.completed.is_some();
        }
        while pending > 0 && !completed {
            let a = r.on_packet(&sym(0, esi, false, None), || false);
            esi += 1;
            pending -= 1;
            pending += a.pulls.len() as u64;
            completed |= a.completed.is_some();
        }
        assert!(completed);
        assert_eq!(r.pulls_sent, (k - w) as u64);
        assert_eq!(r.stats.symbols_received, k as u64);
        assert!(!r.stats.decode_invoked);
        assert_eq!(r.stats.overhead_symbols, 0);
    }

    #[test]
    fn single_trim_delivers_k_plus_2() {
        // K=100, w=12, symbol esi=50 trimmed: total delivered symbols 102,
        // pulls = 88 + 2 + 1.
        let k = 100u32;
        let w = 12u32;
        let o = opts(k as u64 * 1500, 100);
        let mut r = ReceiverSession::new(1, w, 100);
        let mut next_esi = 0u32;
        let mut pending = 0u64;
        let mut completed = false;
        let lost = 50u32;
        for _ in 0..w {
            let a = r.on_packet(&sym(0, next_esi, true, Some(o)), || false);
            next_esi += 1;
            pending += a.pulls.len() as u64;
        }
        while pending > 0 && !completed {
            let esi = next_esi;
            next_esi += 1;
            pending -= 1;
            let a = if esi == lost {
                r.on_packet(&hdr(0, esi), || false)
            } else {
                r.on_packet(&sym(0, esi, false, None), || false)
            };
            pending += a.pulls.len() as u64;
            completed |= a.completed.is_some();
        }
        assert!(completed);
        assert_eq!(r.stats.symbols_received, (k + 2) as u64);
        assert_eq!(r.pulls_sent, (k - w + 3) as u64);
        assert!(r.stats.decode_invoked);
        assert_eq!(r.stats.overhead_symbols, 2);
    }

    #[test]
    fn forced_decode_failure_delivers_k_plus_3() {
        let k = 20u32;
        let w = 4u32;
        let o = opts(k as u64 * 1500, 100);
        let mut r = ReceiverSession::new(1, w, 100);
        let mut next_esi = 0u32;
        let mut pending = 0u64;
        let mut completed = false;
        let mut fail_once = true;
        for _ in 0..w {
            let a = r.on_packet(&sym(0, next_esi, true, Some(o)), || false);
            next_esi += 1;
            pending += a.pulls.len() as u64;
        }
        while pending > 0 && !completed {
            let esi = next_esi;
            next_esi += 1;
            pending -= 1;
            let a = if esi == 2 + w {
                r.on_packet(&hdr(0, esi), || false)
            } else {
                r.on_packet(&sym(0, esi, false, None), || {
                    let f = fail_once;
                    fail_once = false;
                    f
                })
            };
            pending += a.pulls.len() as u64;
            completed |= a.completed.is_some();
        }
        assert!(completed);
        assert_eq!(r.stats.symbols_received, (k + 3) as u64);
        assert_eq!(r.stats.decode_attempts, 2);
        assert_eq!(r.stats.overhead_symbols, 3);
    }

    #[test]
    fn header_before_any_symbol_establishes_session() {
        let o = opts(100 * 1500, 100);
        let mut r = ReceiverSession::new(1, 12, 100);
        let a = r.on_packet(
            &RxPacket {
                is_header: true,
                sbn: 0,
                esi: 0,
                syn: true,
                opts: Some(o),
                sender_index: 0,
            },
            || false,
        );
        assert!(r.established);
        assert!(!a.pulls.is_empty());
        assert_eq!(r.block_report()[0].2, 2); // overhead armed
    }

    #[test]
    fn duplicate_syn_does_not_reinitialise() {
        let o = opts(100 * 1500, 100);
        let mut r = ReceiverSession::new(1, 12, 100);
        r.on_packet(&sym(0, 0, true, Some(o)), || false);
        r.on_packet(&sym(0, 1, false, None), || false);
        let before = r.stats.symbols_received;
        r.on_packet(&sym(0, 0, true, Some(o)), || false); // dup establish+esi
        assert_eq!(r.stats.symbols_received, before + 1);
        assert_eq!(r.block_report()[0].1, 2); // esi 0 deduped
    }

    #[test]
    fn header_after_delivery_elicits_no_pull() {
        let o = opts(4 * 1500, 100);
        let mut r = ReceiverSession::new(1, 12, 100);
        for esi in 0..4 {
            r.on_packet(&sym(0, esi, true, Some(o)), || false);
        }
        assert!(r.complete);
        let a = r.on_packet(&hdr(0, 9), || false);
        assert!(a.pulls.is_empty());
    }

    #[test]
    fn fin_set_at_target_minus_one() {
        let k = 6u32;
        let o = opts(k as u64 * 1500, 100);
        let mut r = ReceiverSession::new(1, 2, 100);
        // w = 2 pushed, rest pulled
        r.on_packet(&sym(0, 0, true, Some(o)), || false);
        let mut fin_seen = vec![];
        for esi in 1..k {
            let a = r.on_packet(&sym(0, esi, esi == 1, None), || false);
            for p in &a.pulls {
                fin_seen.push((esi, p.fin));
            }
        }
        // the final pull carries fin (in-flight covers the remainder)
        assert!(fin_seen.iter().any(|&(_, f)| f));
        let &(last_esi, fin) = fin_seen.last().unwrap();
        assert!(fin);
        assert_eq!(last_esi, k - 3);
    }

    #[test]
    fn multicast_gate_min_rule() {
        let mut s = SenderSession::new(
            TransferMode::OneToMany,
            12,
            0,
            1,
            3,
            vec![100],
            1500,
            DEFAULT_THRESHOLDS,
        );
        s.init_session();
        // credits (2,1,1) -> exactly one symbol, credits (1,0,0)
        assert_eq!(s.on_pull_multicast(0, 2, 0, false).len(), 0);
        assert_eq!(s.on_pull_multicast(1, 1, 0, false).len(), 0);
        assert_eq!(s.on_pull_multicast(2, 1, 0, false).len(), 1);
        // topping up rx1 and rx2 releases the second symbol
        assert_eq!(s.on_pull_multicast(1, 2, 0, false).len(), 0);
        assert_eq!(s.on_pull_multicast(2, 2, 0, false).len(), 1);
    }

    #[test]
    fn multicast_completed_receiver_leaves_gate() {
        let mut s = SenderSession::new(
            TransferMode::OneToMany,
            12,
            0,
            1,
            2,
            vec![100],
            1500,
            DEFAULT_THRESHOLDS,
        );
        s.init_session();
        s.on_pull_multicast(0, 3, 0, false);
        // rx1 never pulls but completes; rx0's credit now drains
        let out = s.mark_receiver_done(1);
        assert_eq!(out.len(), 3);
        assert!(!s.all_receivers_done());
        s.mark_receiver_done(0);
        assert!(s.all_receivers_done());
        assert!(s.to_be_garbage_collected);
    }
}
