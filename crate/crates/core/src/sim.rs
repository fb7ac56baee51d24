//! The simulation world: wires the event engine, a fat-tree fabric of
//! output-queued trimming ports, and the SCDP/NDP endpoint state machines
//! into one deterministic packet-level simulator.
//!
//! Structure: every directed link owns a `SwitchPort` at its sending node
//! and a transmitter that serialises one packet at a time. Hosts additionally
//! own a pull pacer that spaces control packets at one symbol-serialisation
//! interval, which is the receiver-driven flow control. Endpoint logic lives
//! in `scdp`/`ndp`; this module only moves packets and timestamps.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::codec::{DecodeLatencyModel, MODEL_FAILURE_PROB};
use crate::engine::{rng_stream, Engine, SimTime, StreamId};
use crate::fabric::{EnqueueOutcome, PortConfig, SwitchPort};
use crate::ndp::{NdpReceiver, NdpSender};
use crate::packet::{
    GroupId, Packet, PacketType, Route, SessionId, SessionOpts, TransferMode,
    CTRL_WIRE_BYTES, SYMBOL_WIRE_BYTES,
};
use crate::scdp::{block_plan, PullEmit, ReceiverSession, RxPacket, SenderSession, SymbolEmit};
use crate::topology::{MulticastTree, NodeId, NodeKind, PathSet, Topology};

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Scdp,
    Ndp,
    NdpPlus,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Scdp => "scdp",
            Protocol::Ndp => "ndp",
            Protocol::NdpPlus => "ndp_plus",
        })
    }
}

/// Simulation-wide parameters. Defaults: 1 Gbps links, 10 µs per-hop delay,
/// 20-packet shared data budget, w=12, 100-symbol pipelined sub-blocks,
/// MLFQ thresholds 10KB/100KB/1MB/10MB, RTO 200 µs.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub link_capacity_bps: u64,
    pub link_delay: SimTime,
    pub port: PortConfig,
    /// Initial window for unicast and one-to-many sessions (symbols).
    pub w_unicast: u32,
    /// Initial window per sender for many-to-one sessions (symbols).
    pub w_many_to_one: u32,
    pub thresholds: [u64; 4],
    pub pipeline_symbols: u32,
    pub symbol_size: u32,
    pub rto: SimTime,
    pub seed: u64,
    /// Per-host uplink capacity overrides (host index -> bps), e.g. a
    /// throttled storage server.
    pub host_tx_bps: BTreeMap<u32, u64>,
    /// Test hook: force this many decode attempts (globally, in order) to
    /// report failure, exercising the o=3 path.
    pub force_decode_failures: u32,
    /// Count delivered application bytes per session inside this window.
    pub measure_window: Option<(SimTime, SimTime)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            link_capacity_bps: 1_000_000_000,
            link_delay: SimTime::from_micros(10),
            port: PortConfig::default(),
            w_unicast: 12,
            w_many_to_one: 6,
            thresholds: crate::scdp::DEFAULT_THRESHOLDS,
            pipeline_symbols: 100,
            symbol_size: SYMBOL_WIRE_BYTES,
            rto: SimTime::from_micros(200),
            seed: 1,
            host_tx_bps: BTreeMap::new(),
            force_decode_failures: 0,
            measure_window: None,
        }
    }
}

/// One transfer session to simulate.
#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub id: u64,
    pub protocol: Protocol,
    pub mode: TransferMode,
    /// Host indices. Unicast/one-to-many: exactly one sender; many-to-one:
    /// one per replica.
    pub senders: Vec<u32>,
    /// Host indices. Unicast/many-to-one: exactly one receiver.
    pub receivers: Vec<u32>,
    pub size_bytes: u64,
    pub start: SimTime,
    /// Logical grouping for composite operations (multi-unicast writes,
    /// daisy chains): metrics aggregate sessions sharing a group.
    pub group: Option<u64>,
    /// Daisy chaining: start only once this session has delivered its first
    /// sub-block.
    pub start_after: Option<u64>,
    /// Pin all sprayed paths to ones containing this node (outcast setups).
    pub via: Option<NodeId>,
    /// Terminate the session at this time even if incomplete (long-running
    /// convergence flows).
    pub stop_at: Option<SimTime>,
    /// Background sessions do not gate run completion.
    pub background: bool,
}

impl SessionSpec {
    pub fn unicast(id: u64, protocol: Protocol, from: u32, to: u32, size: u64, start: SimTime) -> Self {
        SessionSpec {
            id,
            protocol,
            mode: TransferMode::Unicast,
            senders: vec![from],
            receivers: vec![to],
            size_bytes: size,
            start,
            group: None,
            start_after: None,
            via: None,
            stop_at: None,
            background: false,
        }
    }
}

/// Raw per-session outcome; the metrics module turns these into records.
#[derive(Clone, Debug)]
pub struct SessionResult {
    pub id: u64,
    pub protocol: Protocol,
    pub mode: TransferMode,
    pub size_bytes: u64,
    pub group: Option<u64>,
    pub background: bool,
    pub start_ns: Option<u64>,
    /// Completion time (all receivers done, final decode latency included).
    pub end_ns: Option<u64>,
    pub trimmed: u64,
    pub overhead_symbols: u64,
    pub decode_invoked: bool,
    pub unnecessary_symbols: u64,
    pub pulls_sent: u64,
    pub sent_instances: u64,
    pub delivered_instances: u64,
    pub dropped_instances: u64,
    /// Application bytes delivered inside the measurement window.
    pub window_bytes: u64,
    /// Receiver-0 per-block (K, received, overhead, decode_used) report
    /// (SCDP only).
    pub block_reports: Vec<(u32, u32, u8, bool)>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("session {0}: {1}")]
    BadSession(u64, String),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
}

#[derive(Debug, Error)]
#[error("conservation audit failed for session {session}: sent={sent} delivered={delivered} dropped={dropped}")]
pub struct AuditError {
    pub session: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

enum Ev {
    Start(usize),
    Stop(usize),
    TxDone(usize),
    Deliver { node: NodeId, pkt: Packet },
    PacerFire(u32),
    Timeout { session: usize, rx: usize },
}

struct LinkState {
    from: NodeId,
    to: NodeId,
    capacity_bps: u64,
    delay: SimTime,
    port: SwitchPort,
    busy: bool,
    in_flight: Option<Packet>,
}

struct Pacer {
    queue: std::collections::VecDeque<Packet>,
    next_free: SimTime,
    scheduled: bool,
    interval: SimTime,
}

enum Endpoints {
    Scdp {
        tx: Vec<SenderSession>,
        rx: Vec<ReceiverSession>,
    },
    Ndp {
        tx: NdpSender,
        rx: NdpReceiver,
    },
}

struct SessionRt {
    spec: SessionSpec,
    endpoints: Option<Endpoints>,
    started: bool,
    stopped: bool,
    start_time: Option<SimTime>,
    end_time: Option<SimTime>,
    rx_done: Vec<bool>,
    // conservation counters, in packet instances
    sent_instances: u64,
    delivered_instances: u64,
    dropped_instances: u64,
    trimmed: u64,
    window_bytes: u64,
    group_id: Option<GroupId>,
    last_activity: Vec<SimTime>,
    /// Pulls waiting in the receiver-host pacer; while non-zero the flow is
    /// paced, not stalled, so RTO recovery stays quiet.
    pending_pulls: u64,
    first_block_fired: bool,
    counted_done: bool,
}

pub struct Simulation {
    cfg: SimConfig,
    topo: Topology,
    engine: Engine<Ev>,
    links: Vec<LinkState>,
    link_index: BTreeMap<(NodeId, NodeId), usize>,
    pacers: BTreeMap<u32, Pacer>,
    sessions: Vec<SessionRt>,
    session_index: BTreeMap<u64, usize>,
    dependents: BTreeMap<u64, Vec<usize>>,
    groups: Vec<MulticastTree>,
    path_cache: BTreeMap<(NodeId, NodeId, Option<NodeId>), PathSet>,
    rng_spray: ChaCha12Rng,
    rng_codec: ChaCha12Rng,
    forced_failures_left: u32,
    latency_model: DecodeLatencyModel,
    /// Foreground sessions not yet completed or stopped.
    fg_remaining: usize,
}

impl Simulation {
    pub fn new(cfg: SimConfig, topo: Topology, specs: Vec<SessionSpec>) -> Result<Self, SimError> {
        let mut links = Vec::new();
        let mut link_index = BTreeMap::new();
        for l in &topo.links {
            let mut capacity = cfg.link_capacity_bps;
            if topo.is_host(l.from) {
                if let Some(&bps) = cfg.host_tx_bps.get(&l.from.0) {
                    capacity = bps;
                }
            }
            let port = if topo.is_host(l.from) {
                SwitchPort::host_nic(cfg.port.data_queues, cfg.port.w_hdr, cfg.port.w_data)
            } else {
                SwitchPort::new(cfg.port.clone())
            };
            link_index.insert((l.from, l.to), links.len());
            links.push(LinkState {
                from: l.from,
                to: l.to,
                capacity_bps: capacity,
                delay: l.delay,
                port,
                busy: false,
                in_flight: None,
            });
        }
        let mut pacers = BTreeMap::new();
        for h in 0..topo.num_hosts() {
            // pulls pace at the receiver's downlink symbol time (12 µs at
            // 1 Gbps for 1500 B symbols)
            let interval =
                SimTime::serialization(cfg.symbol_size as u64, cfg.link_capacity_bps);
            pacers.insert(
                h,
                Pacer {
                    queue: std::collections::VecDeque::new(),
                    next_free: SimTime::ZERO,
                    scheduled: false,
                    interval,
                },
            );
        }

        let mut engine = Engine::new();
        let mut sessions = Vec::new();
        let mut session_index = BTreeMap::new();
        let mut dependents: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut groups = Vec::new();
        for (i, spec) in specs.into_iter().enumerate() {
            Self::validate(&spec, &topo)?;
            let group_id = if spec.mode == TransferMode::OneToMany && spec.protocol == Protocol::Scdp
            {
                let root = topo.host(spec.senders[0]);
                let members: Vec<NodeId> =
                    spec.receivers.iter().map(|&r| topo.host(r)).collect();
                groups.push(topo.build_multicast_tree(root, &members)?);
                Some(GroupId(groups.len() as u32 - 1))
            } else {
                None
            };
            if let Some(dep) = spec.start_after {
                dependents.entry(dep).or_default().push(i);
            } else {
                engine
                    .schedule(spec.start, Ev::Start(i))
                    .expect("session start in the past");
            }
            if let Some(t) = spec.stop_at {
                engine.schedule(t, Ev::Stop(i)).expect("stop in the past");
            }
            session_index.insert(spec.id, i);
            let nrx = spec.receivers.len();
            sessions.push(SessionRt {
                spec,
                endpoints: None,
                started: false,
                stopped: false,
                start_time: None,
                end_time: None,
                rx_done: vec![false; nrx],
                sent_instances: 0,
                delivered_instances: 0,
                dropped_instances: 0,
                trimmed: 0,
                window_bytes: 0,
                group_id,
                last_activity: vec![SimTime::ZERO; nrx],
                pending_pulls: 0,
                first_block_fired: false,
                counted_done: false,
            });
        }

        let latency_model = DecodeLatencyModel::calibrated(cfg.symbol_size);
        let fg_remaining = sessions.iter().filter(|s| !s.spec.background).count();
        Ok(Simulation {
            rng_spray: rng_stream(cfg.seed, StreamId::Spraying),
            rng_codec: rng_stream(cfg.seed, StreamId::CodecFailure),
            forced_failures_left: cfg.force_decode_failures,
            latency_model,
            cfg,
            topo,
            engine,
            links,
            link_index,
            pacers,
            sessions,
            session_index,
            dependents,
            groups,
            path_cache: BTreeMap::new(),
            fg_remaining,
        })
    }

    fn validate(spec: &SessionSpec, topo: &Topology) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::BadSession(spec.id, m.to_string()));
        if spec.size_bytes == 0 {
            return bad("size_bytes must be positive");
        }
        match spec.mode {
            TransferMode::Unicast => {
                if spec.senders.len() != 1 || spec.receivers.len() != 1 {
                    return bad("unicast needs exactly one sender and one receiver");
                }
            }
            TransferMode::OneToMany => {
                if spec.senders.len() != 1 || spec.receivers.is_empty() {
                    return bad("one-to-many needs one sender and >=1 receivers");
                }
            }
            TransferMode::ManyToOne => {
                if spec.senders.is_empty() || spec.receivers.len() != 1 {
                    return bad("many-to-one needs >=1 senders and one receiver");
                }
                if spec.protocol != Protocol::Scdp {
                    return bad("many-to-one is only defined for scdp");
                }
            }
        }
        if spec.protocol != Protocol::Scdp && spec.mode != TransferMode::Unicast {
            return bad("ndp sessions must be unicast (compose groups instead)");
        }
        for &h in spec.senders.iter().chain(&spec.receivers) {
            if h >= topo.num_hosts() {
                return bad("host index out of range");
            }
        }
        if spec
            .senders
            .iter()
            .any(|s| spec.receivers.contains(s))
        {
            return bad("sender and receiver hosts must be disjoint");
        }
        Ok(())
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    /// Runs until every foreground session completed (or was stopped), or
    /// `max_time` elapses; then drains in-flight traffic so the conservation
    /// audit can balance.
    pub fn run(&mut self, max_time: SimTime) -> SimTime {
        loop {
            if self.foreground_done() {
                break;
            }
            match self.engine.pop_due(max_time) {
                Some((_, ev)) => self.handle(ev),
                None => break,
            }
        }
        let finished_at = self.engine.now();
        // drain: stop every session, let queued packets reach an endpoint
        for i in 0..self.sessions.len() {
            self.stop_session(i);
        }
        let drain_end = SimTime(max_time.0.saturating_add(SimTime::from_secs(1).0));
        while let Some((_, ev)) = self.engine.pop_due(drain_end) {
            self.handle(ev);
        }
        finished_at
    }

    fn foreground_done(&self) -> bool {
        self.fg_remaining == 0
    }

    fn mark_done(&mut self, i: usize) {
        let s = &mut self.sessions[i];
        if !s.counted_done && !s.spec.background {
            s.counted_done = true;
            self.fg_remaining -= 1;
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Start(i) => self.start_session(i),
            Ev::Stop(i) => self.stop_session(i),
            Ev::TxDone(l) => self.tx_done(l),
            Ev::Deliver { node, pkt } => self.deliver(node, pkt),
            Ev::PacerFire(h) => self.pacer_fire(h),
            Ev::Timeout { session, rx } => self.timeout(session, rx),
        }
    }

    // ----- session lifecycle -------------------------------------------

    fn start_session(&mut self, i: usize) {
        let now = self.engine.now();
        let (emits, nrx) = {
            let s = &mut self.sessions[i];
            if s.started || s.stopped {
                return;
            }
            s.started = true;
            s.start_time = Some(now);
            let nrx = s.spec.receivers.len();
            s.last_activity = vec![now; nrx];
            let emits: Vec<(u32, SymbolEmit)> = match s.spec.protocol {
                Protocol::Scdp => {
                    let ks = block_plan(
                        s.spec.size_bytes,
                        self.cfg.symbol_size,
                        self.cfg.pipeline_symbols,
                    );
                    let n_senders = s.spec.senders.len() as u32;
                    let w = match s.spec.mode {
                        TransferMode::ManyToOne => self.cfg.w_many_to_one,
                        _ => self.cfg.w_unicast,
                    };
                    let mut tx: Vec<SenderSession> = (0..n_senders)
                        .map(|si| {
                            SenderSession::new(
                                s.spec.mode,
                                w,
                                si,
                                n_senders,
                                nrx,
                                ks.clone(),
                                self.cfg.symbol_size,
                                self.cfg.thresholds,
                            )
                        })
                        .collect();
                    let window = w * n_senders;
                    let rx = (0..nrx)
                        .map(|_| {
                            ReceiverSession::new(n_senders, window, self.cfg.pipeline_symbols)
                        })
                        .collect();
                    let emits = tx
                        .iter_mut()
                        .enumerate()
                        .flat_map(|(si, t)| {
                            t.init_session().into_iter().map(move |e| (si as u32, e))
                        })
                        .collect();
                    s.endpoints = Some(Endpoints::Scdp { tx, rx });
                    emits
                }
                Protocol::Ndp | Protocol::NdpPlus => {
                    let total = s.spec.size_bytes.div_ceil(self.cfg.symbol_size as u64) as u32;
                    let mut tx = NdpSender::new(
                        total,
                        self.cfg.symbol_size,
                        s.spec.protocol == Protocol::NdpPlus,
                        self.cfg.thresholds,
                    );
                    let w = self.cfg.w_unicast.min(total);
                    let rx = NdpReceiver::new(total, w);
                    let emits = tx
                        .init_session(w)
                        .into_iter()
                        .map(|e| {
                            (
                                0u32,
                                SymbolEmit {
                                    sbn: 0,
                                    esi: e.seq,
                                    pri: e.pri,
                                    syn: e.syn,
                                },
                            )
                        })
                        .collect();
                    s.endpoints = Some(Endpoints::Ndp { tx, rx });
                    emits
                }
            };
            (emits, nrx)
        };
        for (si, e) in emits {
            self.send_symbol(i, si, e);
        }
        for rx in 0..nrx {
            self.engine.schedule_in(self.cfg.rto, Ev::Timeout { session: i, rx });
        }
    }

    fn stop_session(&mut self, i: usize) {
        if !self.sessions[i].stopped {
            self.sessions[i].stopped = true;
            self.mark_done(i);
        }
    }

    fn complete_receiver(&mut self, i: usize, rx_index: usize, end: SimTime) {
        let s = &mut self.sessions[i];
        if s.rx_done[rx_index] {
            return;
        }
        s.rx_done[rx_index] = true;
        let all_done = s.rx_done.iter().all(|&d| d);
        if all_done && s.end_time.is_none() {
            s.end_time = Some(end);
            self.mark_done(i);
        }
        // one-to-many: out-of-band completion notification removes this
        // receiver from the credit gate, possibly releasing symbols
        let emits = {
            let s = &mut self.sessions[i];
            if let Some(Endpoints::Scdp { tx, .. }) = &mut s.endpoints {
                if s.spec.mode == TransferMode::OneToMany {
                    tx[0].mark_receiver_done(rx_index)
                } else {
                    Vec::new()
                }
            } else {
                Vec::new()
            }
        };
        for e in emits {
            self.send_symbol(i, 0, e);
        }
        // daisy chains waiting on completion of very small upstreams
        self.fire_first_block_trigger(i);
    }

    /// Starts dependent sessions once this one has delivered its first
    /// sub-block (models store-and-forward replication pipelines).
    fn fire_first_block_trigger(&mut self, i: usize) {
        if self.sessions[i].first_block_fired {
            return;
        }
        self.sessions[i].first_block_fired = true;
        let id = self.sessions[i].spec.id;
        if let Some(deps) = self.dependents.get(&id).cloned() {
            for d in deps {
                self.start_session(d);
            }
        }
    }

    // ----- packet construction -----------------------------------------

    fn paths_for(&mut self, src: NodeId, dst: NodeId, via: Option<NodeId>) -> &PathSet {
        let key = (src, dst, via);
        if !self.path_cache.contains_key(&key) {
            let mut set = self.topo.ecmp_paths(src, dst).expect("valid host pair");
            if let Some(v) = via {
                set.paths.retain(|p| p.contains(&v));
                assert!(
                    !set.paths.is_empty(),
                    "via-pin {v:?} excludes all paths {src:?}->{dst:?}"
                );
            }
            self.path_cache.insert(key, set);
        }
        self.path_cache.get(&key).unwrap()
    }

    fn sprayed_route(&mut self, src: NodeId, dst: NodeId, via: Option<NodeId>) -> Route {
        let n = self.paths_for(src, dst, via).paths.len();
        let pick = self.rng_spray.gen_range(0..n);
        let path = self.paths_for(src, dst, via).paths[pick].clone();
        Route::Unicast { path, hop: 0 }
    }

    fn send_symbol(&mut self, i: usize, sender_index: u32, e: SymbolEmit) {
        let spec = &self.sessions[i].spec;
        let src = self.topo.host(spec.senders[sender_index as usize]);
        let opts = e.syn.then(|| SessionOpts {
            mode: spec.mode,
            total_len: spec.size_bytes,
            num_blocks: block_plan(
                spec.size_bytes,
                self.cfg.symbol_size,
                self.cfg.pipeline_symbols,
            )
            .len() as u32,
            symbol_size: self.cfg.symbol_size,
        });
        let (dst, route) = match spec.mode {
            TransferMode::OneToMany => (src, Route::Multicast(self.sessions[i].group_id.unwrap())),
            _ => {
                let dst = self.topo.host(spec.receivers[0]);
                let via = spec.via;
                (dst, self.sprayed_route(src, dst, via))
            }
        };
        let pkt = Packet {
            session: SessionId(self.sessions[i].spec.id),
            sender_index,
            src,
            dst,
            typ: PacketType::Symbol,
            pri: e.pri,
            sbn: e.sbn,
            esi: e.esi,
            seq: 0,
            syn: e.syn,
            fin: false,
            opts,
            retx: None,
            wire_bytes: SYMBOL_WIRE_BYTES,
            route,
        };
        self.sessions[i].sent_instances += 1;
        self.inject(pkt);
    }

    fn send_pull(&mut self, i: usize, rx_index: usize, p: PullEmit) {
        let spec = &self.sessions[i].spec;
        let src = self.topo.host(spec.receivers[rx_index]);
        let dst = self.topo.host(spec.senders[p.sender_index as usize]);
        let via = spec.via;
        let route = self.sprayed_route(src, dst, via);
        let pkt = Packet {
            session: SessionId(self.sessions[i].spec.id),
            sender_index: p.sender_index,
            src,
            dst,
            typ: PacketType::Pull,
            pri: 0,
            sbn: p.sbn,
            esi: 0,
            seq: p.seq,
            syn: false,
            fin: p.fin,
            opts: None,
            retx: None,
            wire_bytes: CTRL_WIRE_BYTES,
            route,
        };
        self.sessions[i].sent_instances += 1;
        self.sessions[i].pending_pulls += 1;
        self.pace_pull(src.0, pkt);
    }

    fn send_ndp_pull(&mut self, i: usize, p: crate::ndp::NdpPull) {
        let spec = &self.sessions[i].spec;
        let src = self.topo.host(spec.receivers[0]);
        let dst = self.topo.host(spec.senders[0]);
        let via = spec.via;
        let route = self.sprayed_route(src, dst, via);
        let pkt = Packet {
            session: SessionId(self.sessions[i].spec.id),
            sender_index: 0,
            src,
            dst,
            typ: PacketType::Pull,
            pri: 0,
            sbn: 0,
            esi: 0,
            seq: p.seq,
            syn: false,
            fin: p.fin,
            opts: None,
            retx: p.retx,
            wire_bytes: CTRL_WIRE_BYTES,
            route,
        };
        self.sessions[i].sent_instances += 1;
        self.sessions[i].pending_pulls += 1;
        self.pace_pull(src.0, pkt);
    }

    // ----- fabric -------------------------------------------------------

    fn pace_pull(&mut self, host: u32, pkt: Packet) {
        let now = self.engine.now();
        let pacer = self.pacers.get_mut(&host).unwrap();
        pacer.queue.push_back(pkt);
        if !pacer.scheduled {
            pacer.scheduled = true;
            let at = pacer.next_free.max(now);
            self.engine
                .schedule(at, Ev::PacerFire(host))
                .expect("pacer fire in the past");
        }
    }

    fn pacer_fire(&mut self, host: u32) {
        let now = self.engine.now();
        let (mut pkt, interval) = {
            let pacer = self.pacers.get_mut(&host).unwrap();
            pacer.scheduled = false;
            // control-packet debt may have pushed next_free past this fire
            if pacer.next_free > now {
                if !pacer.queue.is_empty() {
                    pacer.scheduled = true;
                    let at = pacer.next_free;
                    self.engine
                        .schedule(at, Ev::PacerFire(host))
                        .expect("pacer fire in the past");
                }
                return;
            }
            match pacer.queue.pop_front() {
                Some(p) => (p, pacer.interval),
                None => return,
            }
        };
        if let Some(&si) = self.session_index.get(&pkt.session.0) {
            self.sessions[si].pending_pulls = self.sessions[si].pending_pulls.saturating_sub(1);
            // late-bind NDP retransmission requests: pacing can delay a pull
            // past the arrival of the packet it asked for
            if let Some(seq) = pkt.retx {
                if let Some(Endpoints::Ndp { rx, .. }) = &self.sessions[si].endpoints {
                    pkt.retx = rx.refresh_retx(seq);
                }
            }
        }
        // forward onto the host uplink
        self.forward(pkt);
        let pacer = self.pacers.get_mut(&host).unwrap();
        pacer.next_free = SimTime(pacer.next_free.max(now).0 + interval.0);
        if !pacer.queue.is_empty() {
            pacer.scheduled = true;
            let at = pacer.next_free;
            self.engine
                .schedule(at, Ev::PacerFire(host))
                .expect("pacer fire in the past");
        }
    }

    /// Puts a freshly created packet onto its first link (replicating at
    /// the root immediately for multicast routes).
    fn inject(&mut self, pkt: Packet) {
        match pkt.route {
            Route::Unicast { .. } => self.forward(pkt),
            Route::Multicast(g) => {
                let root = pkt.src;
                self.replicate(root, pkt, g);
            }
        }
    }

    /// Enqueues `pkt` on the next link along its route; the current node is
    /// derived from the route state.
    fn forward(&mut self, mut pkt: Packet) {
        let (from, to) = match &mut pkt.route {
            Route::Unicast { path, hop } => {
                let from = path[*hop];
                let to = path[*hop + 1];
                *hop += 1;
                (from, to)
            }
            Route::Multicast(_) => unreachable!("multicast forwards via replicate()"),
        };
        self.enqueue_link(from, to, pkt);
    }

    fn enqueue_link(&mut self, from: NodeId, to: NodeId, pkt: Packet) {
        let li = *self
            .link_index
            .get(&(from, to))
            .unwrap_or_else(|| panic!("no link {from:?}->{to:?}"));
        let outcome = self.links[li].port.enqueue(pkt);
        match outcome {
            EnqueueOutcome::Queued => {}
            EnqueueOutcome::Trimmed(victim) => {
                if std::env::var("SCDP_TRACE_TRIMS").is_ok() {
                    eprintln!(
                        "TRIM t={} link={from:?}->{to:?} victim={}",
                        self.now().as_nanos(),
                        victim.0
                    );
                }
                if let Some(&si) = self.session_index.get(&victim.0) {
                    self.sessions[si].trimmed += 1;
                }
            }
            EnqueueOutcome::Dropped(victim) => {
                if let Some(&si) = self.session_index.get(&victim.0) {
                    self.sessions[si].dropped_instances += 1;
                }
            }
        }
        self.kick_link(li);
    }

    fn kick_link(&mut self, li: usize) {
        let now = self.engine.now();
        let link = &mut self.links[li];
        if link.busy {
            return;
        }
        if let Some(pkt) = link.port.dequeue() {
            link.busy = true;
            let tx_time = SimTime::serialization(pkt.wire_bytes as u64, link.capacity_bps);
            link.in_flight = Some(pkt);
            self.engine
                .schedule(SimTime(now.0 + tx_time.0), Ev::TxDone(li))
                .expect("txdone in the past");
        }
    }

    fn tx_done(&mut self, li: usize) {
        let (pkt, to, delay) = {
            let link = &mut self.links[li];
            link.busy = false;
            (link.in_flight.take().expect("txdone without packet"), link.to, link.delay)
        };
        let now = self.engine.now();
        self.engine
            .schedule(SimTime(now.0 + delay.0), Ev::Deliver { node: to, pkt })
            .expect("deliver in the past");
        self.kick_link(li);
    }

    fn deliver(&mut self, node: NodeId, pkt: Packet) {
        match self.topo.kind(node) {
            NodeKind::Host => self.deliver_to_host(node, pkt),
            _ => match pkt.route {
                Route::Unicast { .. } => self.forward(pkt),
                Route::Multicast(g) => self.replicate(node, pkt, g),
            },
        }
    }

    fn replicate(&mut self, node: NodeId, pkt: Packet, g: GroupId) {
        let children = self.groups[g.0 as usize]
            .children
            .get(&node)
            .cloned()
            .unwrap_or_default();
        debug_assert!(!children.is_empty(), "multicast packet at a leaf switch");
        // replication: c children means c-1 additional packet instances
        if children.len() > 1 {
            if let Some(&si) = self.session_index.get(&pkt.session.0) {
                self.sessions[si].sent_instances += children.len() as u64 - 1;
            }
        }
        for child in children {
            let mut clone = pkt.clone();
            if self.topo.is_host(child) {
                clone.dst = child;
            }
            self.enqueue_link(node, child, clone);
        }
    }

    // ----- endpoint delivery -------------------------------------------

    fn deliver_to_host(&mut self, host: NodeId, pkt: Packet) {
        // Packets the pull pacer did not request -- control packets and
        // syn-flagged initial-window pushes -- still consume downlink
        // capacity. Charge their serialization time against the pacer so the
        // requested symbol rate tracks the residual downlink capacity.
        // Without this the downlink queue of a busy receiver grows without
        // bound and eventually trims.
        if pkt.typ != PacketType::Symbol || pkt.syn {
            let debt =
                SimTime::serialization(pkt.wire_bytes as u64, self.cfg.link_capacity_bps);
            if let Some(pacer) = self.pacers.get_mut(&host.0) {
                let now = self.engine.now();
                pacer.next_free = SimTime(pacer.next_free.max(now).0 + debt.0);
            }
        }
        let si = match self.session_index.get(&pkt.session.0) {
            Some(&si) => si,
            None => return,
        };
        self.sessions[si].delivered_instances += 1;
        if pkt.typ == PacketType::Symbol {
            if let Some((w0, w1)) = self.cfg.measure_window {
                let now = self.engine.now();
                if now >= w0 && now < w1 {
                    self.sessions[si].window_bytes += self.cfg.symbol_size as u64;
                }
            }
        }
        if !self.sessions[si].started {
            return;
        }
        match pkt.typ {
            PacketType::Pull => self.on_pull_at_sender(si, &pkt),
            PacketType::Symbol | PacketType::Header => self.on_data_at_receiver(si, host, &pkt),
        }
    }

    fn on_pull_at_sender(&mut self, si: usize, pkt: &Packet) {
        if self.sessions[si].stopped {
            return;
        }
        let emits: Vec<(u32, SymbolEmit)> = {
            let s = &mut self.sessions[si];
            match &mut s.endpoints {
                Some(Endpoints::Scdp { tx, .. }) => match s.spec.mode {
                    TransferMode::OneToMany => {
                        let rx_index = s
                            .spec
                            .receivers
                            .iter()
                            .position(|&r| r == pkt.src.0)
                            .expect("pull from non-member");
                        tx[0]
                            .on_pull_multicast(rx_index, pkt.seq, pkt.sbn, pkt.fin)
                            .into_iter()
                            .map(|e| (0, e))
                            .collect()
                    }
                    _ => {
                        let sx = pkt.sender_index as usize;
                        tx[sx]
                            .on_pull(pkt.seq, pkt.sbn, pkt.fin)
                            .into_iter()
                            .map(|e| (sx as u32, e))
                            .collect()
                    }
                },
                Some(Endpoints::Ndp { tx, .. }) => tx
                    .on_pull(pkt.seq, pkt.retx, pkt.fin)
                    .into_iter()
                    .map(|e| {
                        (
                            0,
                            SymbolEmit {
                                sbn: 0,
                                esi: e.seq,
                                pri: e.pri,
                                syn: e.syn,
                            },
                        )
                    })
                    .collect(),
                None => Vec::new(),
            }
        };
        for (sx, e) in emits {
            self.send_symbol(si, sx, e);
        }
    }

    fn on_data_at_receiver(&mut self, si: usize, host: NodeId, pkt: &Packet) {
        let now = self.engine.now();
        let rx_index = match self.sessions[si]
            .spec
            .receivers
            .iter()
            .position(|&r| r == host.0)
        {
            Some(x) => x,
            None => return, // e.g. stray packet after a stop
        };
        self.sessions[si].last_activity[rx_index] = now;
        if self.sessions[si].stopped {
            return;
        }
        enum After {
            Scdp(crate::scdp::RxActions),
            Ndp(crate::ndp::NdpActions),
        }
        let after = {
            let forced = &mut self.forced_failures_left;
            let rng = &mut self.rng_codec;
            let s = &mut self.sessions[si];
            match &mut s.endpoints {
                Some(Endpoints::Scdp { rx, .. }) => {
                    let view = RxPacket {
                        is_header: pkt.typ == PacketType::Header,
                        sbn: pkt.sbn,
                        esi: pkt.esi,
                        syn: pkt.syn,
                        opts: pkt.opts,
                        sender_index: pkt.sender_index,
                    };
                    After::Scdp(rx[rx_index].on_packet(&view, || {
                        if *forced > 0 {
                            *forced -= 1;
                            true
                        } else {
                            rng.gen_bool(MODEL_FAILURE_PROB)
                        }
                    }))
                }
                Some(Endpoints::Ndp { rx, .. }) => {
                    if pkt.typ == PacketType::Header {
                        After::Ndp(rx.on_header(pkt.esi, pkt.syn))
                    } else {
                        After::Ndp(rx.on_packet(pkt.esi, pkt.syn))
                    }
                }
                None => return,
            }
        };
        match after {
            After::Scdp(act) => {
                for p in act.pulls {
                    self.send_pull(si, rx_index, p);
                }
                if !act.delivered_blocks.is_empty() {
                    self.fire_first_block_trigger(si);
                }
                if let Some(info) = act.completed {
                    // only the final sub-block's decode sits on the critical
                    // path; earlier decodes overlap subsequent transfers
                    let end = match info.final_block_decoded {
                        Some(k) => SimTime(now.0 + self.latency_model.latency(k).0),
                        None => now,
                    };
                    self.complete_receiver(si, rx_index, end);
                }
            }
            After::Ndp(act) => {
                for p in act.pulls {
                    self.send_ndp_pull(si, p);
                }
                let got_first_block = {
                    let s = &self.sessions[si];
                    match &s.endpoints {
                        Some(Endpoints::Ndp { rx, .. }) => {
                            rx.packets_received >= self.cfg.pipeline_symbols as u64
                        }
                        _ => false,
                    }
                };
                if got_first_block {
                    self.fire_first_block_trigger(si);
                }
                if act.completed {
                    self.complete_receiver(si, rx_index, now);
                }
            }
        }
    }

    fn timeout(&mut self, si: usize, rx_index: usize) {
        let now = self.engine.now();
        let (deadline, active) = {
            let s = &self.sessions[si];
            let active = s.started && !s.stopped && !s.rx_done[rx_index];
            (
                SimTime(s.last_activity[rx_index].0 + self.cfg.rto.0),
                active,
            )
        };
        if !active {
            return;
        }
        if now < deadline {
            self.engine
                .schedule(deadline, Ev::Timeout { session: si, rx: rx_index })
                .expect("timeout reschedule");
            return;
        }
        // pulls still waiting in the pacer mean the flow is paced, not
        // stalled: recovery pulls would only duplicate them
        if self.sessions[si].pending_pulls > 0 {
            self.sessions[si].last_activity[rx_index] = now;
            self.engine
                .schedule_in(self.cfg.rto, Ev::Timeout { session: si, rx: rx_index });
            return;
        }
        // quiet for a full RTO: recover lost pulls/headers with a fresh pull
        let pull = {
            let s = &mut self.sessions[si];
            match &mut s.endpoints {
                Some(Endpoints::Scdp { rx, .. }) => {
                    rx[rx_index].timeout_pull().map(|p| (true, p.sender_index, p.seq, p.sbn, p.fin, None))
                }
                Some(Endpoints::Ndp { rx, .. }) => rx
                    .timeout_pull()
                    .map(|p| (false, 0, p.seq, 0, p.fin, p.retx)),
                None => None,
            }
        };
        if let Some((is_scdp, sender_index, seq, sbn, fin, retx)) = pull {
            if is_scdp {
                self.send_pull(
                    si,
                    rx_index,
                    PullEmit { sender_index, seq, sbn, fin },
                );
            } else {
                self.send_ndp_pull(si, crate::ndp::NdpPull { seq, retx, fin });
            }
        }
        self.sessions[si].last_activity[rx_index] = now;
        self.engine.schedule_in(self.cfg.rto, Ev::Timeout { session: si, rx: rx_index });
    }

    // ----- results -------------------------------------------------------

    pub fn results(&self) -> Vec<SessionResult> {
        self.sessions
            .iter()
            .map(|s| {
                let (pulls, overhead, decode, unnecessary, reports) = match &s.endpoints {
                    Some(Endpoints::Scdp { rx, .. }) => (
                        rx.iter().map(|r| r.pulls_sent).sum(),
                        rx.iter().map(|r| r.stats.overhead_symbols).sum(),
                        rx.iter().any(|r| r.stats.decode_invoked),
                        rx.iter().map(|r| r.stats.unnecessary_symbols).sum(),
                        rx[0].block_report(),
                    ),
                    Some(Endpoints::Ndp { rx, .. }) => {
                        (rx.pulls_sent, 0, false, rx.duplicates, Vec::new())
                    }
                    None => (0, 0, false, 0, Vec::new()),
                };
                SessionResult {
                    id: s.spec.id,
                    protocol: s.spec.protocol,
                    mode: s.spec.mode,
                    size_bytes: s.spec.size_bytes,
                    group: s.spec.group,
                    background: s.spec.background,
                    start_ns: s.start_time.map(|t| t.0),
                    end_ns: s.end_time.map(|t| t.0),
                    trimmed: s.trimmed,
                    overhead_symbols: overhead,
                    decode_invoked: decode,
                    unnecessary_symbols: unnecessary,
                    pulls_sent: pulls,
                    sent_instances: s.sent_instances,
                    delivered_instances: s.delivered_instances,
                    dropped_instances: s.dropped_instances,
                    window_bytes: s.window_bytes,
                    block_reports: reports,
                }
            })
            .collect()
    }

    /// Conservation audit: every packet instance ever created must have been
    /// delivered to a host or dropped at a full queue (trimmed packets
    /// continue as headers and are not separate instances).
    pub fn audit(&self) -> Result<(), AuditError> {
        for s in &self.sessions {
            if s.sent_instances != s.delivered_instances + s.dropped_instances {
                return Err(AuditError {
                    session: s.spec.id,
                    sent: s.sent_instances,
                    delivered: s.delivered_instances,
                    dropped: s.dropped_instances,
                });
            }
        }
        Ok(())
    }

    /// Diagnostic snapshot for NDP sessions: (received, first missing seq,
    /// inflight, pulls_sent, headers, duplicates).
    #[doc(hidden)]
    pub fn debug_ndp_state(&self, id: u64) -> Option<(u32, Option<u32>, i64, u64, u64, u64)> {
        let s = self.sessions.iter().find(|s| s.spec.id == id)?;
        match &s.endpoints {
            Some(Endpoints::Ndp { rx, .. }) => Some(rx.debug_state()),
            _ => None,
        }
    }

    pub fn total_trimmed(&self) -> u64 {
        self.links.iter().map(|l| l.port.counters.trimmed).sum()
    }

    /// Event-stepping variant of [`run`](Self::run) without the final drain,
    /// so callers can sample state mid-flight.
    #[doc(hidden)]
    pub fn run_until(&mut self, max_time: SimTime) {
        while !self.foreground_done() {
            match self.engine.pop_due(max_time) {
                Some((_, ev)) => self.handle(ev),
                None => break,
            }
        }
    }

    /// (pull-pacer backlog, pending pulls across sessions) for one host.
    #[doc(hidden)]
    pub fn debug_pacer_depth(&self, host: u32) -> usize {
        self.pacers.get(&host).map_or(0, |p| p.queue.len())
    }

    /// Port counters for one directed link: (per-band dequeues, trims,
    /// enqueued data, data occupancy, header occupancy).
    #[doc(hidden)]
    pub fn debug_port(
        &self,
        from: NodeId,
        to: NodeId,
    ) -> Option<(Vec<u64>, u64, u64, usize, usize)> {
        let li = *self.link_index.get(&(from, to))?;
        let c = &self.links[li].port.counters;
        Some((
            c.dequeued_by_pri.clone(),
            c.trimmed,
            c.enqueued_data,
            self.links[li].port.data_occupancy(),
            self.links[li].port.header_occupancy(),
        ))
    }

    /// SCDP receiver-0 view: (inflight, pulls_sent, complete).
    #[doc(hidden)]
    pub fn debug_scdp_state(&self, id: u64) -> Option<(i64, u64, bool)> {
        let s = self.sessions.iter().find(|s| s.spec.id == id)?;
        match &s.endpoints {
            Some(Endpoints::Scdp { rx, .. }) => {
                let r = rx.first()?;
                Some((r.debug_inflight(), r.pulls_sent, r.complete))
            }
            _ => None,
        }
    }
}
