//! Traffic and scenario generation: empirical flow-size distributions,
//! Poisson session arrivals, HDFS-style replica placement, permutation
//! background traffic, and the canned evaluation scenarios (storage
//! read/write, incast, outcast, convergence, window sweep).

use rand::Rng;

use crate::engine::SimTime;
use crate::packet::TransferMode;
use crate::sim::{Protocol, SessionSpec};
use crate::topology::{NodeId, Topology};

/// Flow sizes in bytes. The empirical workloads are heavy-tailed bin
/// distributions (0–10KB / 10–100KB / 100KB–1MB / >1MB); sampling inside a
/// bin is log-uniform, and the top bin's upper bound is solved numerically
/// so the overall mean matches the published average flow size (1.6 MB for
/// web search, 7.4 MB for data mining).
#[derive(Copy, Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeDist {
    WebSearch,
    DataMining,
    Fixed(u64),
}

const BIN_EDGES: [f64; 4] = [100.0, 10_000.0, 100_000.0, 1_000_000.0];
const WEB_SEARCH_P: [f64; 4] = [0.19, 0.43, 0.18, 0.20];
const WEB_SEARCH_MEAN: f64 = 1.6e6;
const DATA_MINING_P: [f64; 4] = [0.78, 0.05, 0.08, 0.09];
const DATA_MINING_MEAN: f64 = 7.4e6;

/// Mean of a log-uniform variate on (a, b).
fn log_uniform_mean(a: f64, b: f64) -> f64 {
    (b - a) / (b / a).ln()
}

/// Upper bound U of the top bin such that the bin's log-uniform mean equals
/// `target` (bisection; the mean is monotone in U).
fn solve_upper_bound(a: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (a * 1.001, 1e13);
    assert!(log_uniform_mean(a, hi) > target);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_uniform_mean(a, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl SizeDist {
    fn params(&self) -> Option<([f64; 4], f64)> {
        match self {
            SizeDist::WebSearch => Some((WEB_SEARCH_P, WEB_SEARCH_MEAN)),
            SizeDist::DataMining => Some((DATA_MINING_P, DATA_MINING_MEAN)),
            SizeDist::Fixed(_) => None,
        }
    }

    /// Bin boundaries including the solved top edge (cached: the bisection
    /// only runs once per variant).
    fn edges(&self) -> Option<[f64; 5]> {
        use std::sync::OnceLock;
        static WS: OnceLock<[f64; 5]> = OnceLock::new();
        static DM: OnceLock<[f64; 5]> = OnceLock::new();
        let cell = match self {
            SizeDist::WebSearch => &WS,
            SizeDist::DataMining => &DM,
            SizeDist::Fixed(_) => return None,
        };
        Some(*cell.get_or_init(|| self.solve_edges()))
    }

    fn solve_edges(&self) -> [f64; 5] {
        let (p, mean) = self.params().unwrap();
        // mean contribution required from the top bin
        let fixed: f64 = p[0] * log_uniform_mean(BIN_EDGES[0], BIN_EDGES[1])
            + p[1] * log_uniform_mean(BIN_EDGES[1], BIN_EDGES[2])
            + p[2] * log_uniform_mean(BIN_EDGES[2], BIN_EDGES[3]);
        let top_mean = (mean - fixed) / p[3];
        let upper = solve_upper_bound(BIN_EDGES[3], top_mean);
        [BIN_EDGES[0], BIN_EDGES[1], BIN_EDGES[2], BIN_EDGES[3], upper]
    }

    pub fn mean(&self) -> f64 {
        match self {
            SizeDist::Fixed(s) => *s as f64,
            SizeDist::WebSearch => WEB_SEARCH_MEAN,
            SizeDist::DataMining => DATA_MINING_MEAN,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let (p, _) = match self.params() {
            Some(x) => x,
            None => {
                if let SizeDist::Fixed(s) = self {
                    return *s;
                }
                unreachable!()
            }
        };
        let edges = self.edges().unwrap();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut bin = 3;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                bin = i;
                break;
            }
        }
        let (a, b) = (edges[bin], edges[bin + 1]);
        let x = (rng.gen_range(a.ln()..b.ln())).exp();
        (x as u64).max(1)
    }
}

/// Poisson arrival process: n arrival times with exponential inter-arrival
/// gaps of mean 1/lambda seconds.
pub fn gen_arrivals(lambda_per_s: f64, n: usize, rng: &mut impl Rng) -> Vec<SimTime> {
    assert!(lambda_per_s > 0.0);
    let mut t = 0.0f64;
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            t += -u.ln() / lambda_per_s;
            SimTime::from_secs_f64(t)
        })
        .collect()
}

/// HDFS default placement when the client is not a data node: first replica
/// on a random node, second on a node in a different rack, third on a
/// different node in the second replica's rack.
pub fn place_replicas(client: NodeId, topo: &Topology, rng: &mut impl Rng) -> [NodeId; 3] {
    let n_racks = topo.num_tor();
    assert!(n_racks >= 3, "placement needs at least 3 racks");
    let pick_not = |rng: &mut dyn rand::RngCore, exclude: &[NodeId]| loop {
        let h = topo.host(rng.gen_range(0..topo.num_hosts()));
        if !exclude.contains(&h) {
            return h;
        }
    };
    let r1 = pick_not(rng, &[client]);
    // r2's rack must differ from r1's, and also from the client's so a
    // distinct third node always exists in it (racks can be as small as two
    // hosts).
    let r2 = loop {
        let h = pick_not(rng, &[client, r1]);
        if topo.rack_of_host(h) != topo.rack_of_host(r1)
            && topo.rack_of_host(h) != topo.rack_of_host(client)
        {
            break h;
        }
    };
    let r3 = loop {
        let candidates = topo.hosts_in_rack(topo.rack_of_host(r2));
        let h = candidates[rng.gen_range(0..candidates.len())];
        if h != r2 && h != client {
            break h;
        }
    };
    [r1, r2, r3]
}

/// Read source selection: a replica in the client's rack if one exists,
/// otherwise a uniformly random replica.
pub fn read_source(client: NodeId, replicas: &[NodeId; 3], topo: &Topology, rng: &mut impl Rng) -> NodeId {
    let rack = topo.rack_of_host(client);
    replicas
        .iter()
        .copied()
        .find(|&r| topo.rack_of_host(r) == rack)
        .unwrap_or_else(|| replicas[rng.gen_range(0..3)])
}

/// Permutation background: `fraction` of hosts arranged in one random cycle,
/// each sending one long-running flow to its successor. No self-loops and no
/// host receives two background flows, by construction.
pub fn permutation_background(
    fraction: f64,
    topo: &Topology,
    rng: &mut impl Rng,
) -> Vec<(NodeId, NodeId)> {
    let m = ((fraction * topo.num_hosts() as f64).round() as u32).max(2);
    let mut hosts: Vec<NodeId> = (0..topo.num_hosts()).map(|h| topo.host(h)).collect();
    // partial Fisher-Yates: pick m distinct hosts
    for i in 0..m as usize {
        let j = rng.gen_range(i..hosts.len());
        hosts.swap(i, j);
    }
    let sel = &hosts[..m as usize];
    (0..sel.len())
        .map(|i| (sel[i], sel[(i + 1) % sel.len()]))
        .collect()
}

/// How NDP-family protocols realise a 3-replica write.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteStyle {
    /// SCDP: one one-to-many session over a multicast tree.
    Multicast,
    /// Three parallel unicast sessions over the client uplink.
    MultiUnicast,
    /// client -> r1 -> r2 -> r3, each stage starting on the previous stage's
    /// first delivered sub-block.
    DaisyChain,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadStyle {
    /// SCDP: one many-to-one session from all three replicas.
    ManyToOne,
    /// NDP: unicast from the rack-local (else random) replica.
    SingleReplica,
}

/// Everything the runner needs to execute a scenario.
pub struct ScenarioBuild {
    pub sessions: Vec<SessionSpec>,
    pub measure_window: Option<(SimTime, SimTime)>,
    /// Generous upper bound on useful simulated time.
    pub sim_time: SimTime,
}

/// Size of the long-running flows used for background and convergence
/// traffic: large enough to outlive any run, small enough to keep per-block
/// bookkeeping cheap.
const LONG_FLOW_BYTES: u64 = 1_000_000_000;

fn next_id(sessions: &[SessionSpec]) -> u64 {
    sessions.len() as u64 + 1
}

/// Appends one logical 3-replica write for `client`, honouring the style.
pub fn push_write(
    sessions: &mut Vec<SessionSpec>,
    style: WriteStyle,
    protocol: Protocol,
    client: NodeId,
    replicas: [NodeId; 3],
    size: u64,
    start: SimTime,
) {
    let group = Some(next_id(sessions));
    match style {
        WriteStyle::Multicast => {
            let id = next_id(sessions);
            sessions.push(SessionSpec {
                id,
                protocol,
                mode: TransferMode::OneToMany,
                senders: vec![client.0],
                receivers: replicas.iter().map(|r| r.0).collect(),
                size_bytes: size,
                start,
                group,
                start_after: None,
                via: None,
                stop_at: None,
                background: false,
            });
        }
        WriteStyle::MultiUnicast => {
            for r in replicas {
                let id = next_id(sessions);
                let mut s = SessionSpec::unicast(id, protocol, client.0, r.0, size, start);
                s.group = group;
                sessions.push(s);
            }
        }
        WriteStyle::DaisyChain => {
            let hops = [
                (client, replicas[0]),
                (replicas[0], replicas[1]),
                (replicas[1], replicas[2]),
            ];
            let mut prev: Option<u64> = None;
            for (from, to) in hops {
                let id = next_id(sessions);
                let mut s = SessionSpec::unicast(id, protocol, from.0, to.0, size, start);
                s.group = group;
                s.start_after = prev;
                prev = Some(id);
                sessions.push(s);
            }
        }
    }
}

/// Appends one logical 3-replica read for `client`.
pub fn push_read(
    sessions: &mut Vec<SessionSpec>,
    style: ReadStyle,
    protocol: Protocol,
    client: NodeId,
    replicas: [NodeId; 3],
    size: u64,
    start: SimTime,
    topo: &Topology,
    rng: &mut impl Rng,
) {
    let id = next_id(sessions);
    match style {
        ReadStyle::ManyToOne => {
            sessions.push(SessionSpec {
                id,
                protocol,
                mode: TransferMode::ManyToOne,
                senders: replicas.iter().map(|r| r.0).collect(),
                receivers: vec![client.0],
                size_bytes: size,
                start,
                group: None,
                start_after: None,
                via: None,
                stop_at: None,
                background: false,
            });
        }
        ReadStyle::SingleReplica => {
            let src = read_source(client, &replicas, topo, rng);
            sessions.push(SessionSpec::unicast(id, protocol, src.0, client.0, size, start));
        }
    }
}

/// Adds permutation background long flows over `fraction` of hosts.
pub fn push_permutation_background(
    sessions: &mut Vec<SessionSpec>,
    protocol: Protocol,
    topo: &Topology,
    fraction: f64,
    rng: &mut impl Rng,
) {
    for (src, dst) in permutation_background(fraction, topo, rng) {
        let id = next_id(sessions);
        let mut s =
            SessionSpec::unicast(id, protocol, src.0, dst.0, LONG_FLOW_BYTES, SimTime::ZERO);
        s.background = true;
        sessions.push(s);
    }
}

/// Adds Poisson-arrival background unicast flows calibrated so the offered
/// load on host access links equals `load` (0..1): the aggregate arrival
/// byte rate is load * link_capacity * n_hosts / 8.
pub fn push_load_background(
    sessions: &mut Vec<SessionSpec>,
    protocol: Protocol,
    topo: &Topology,
    dist: SizeDist,
    load: f64,
    link_capacity_bps: u64,
    horizon: SimTime,
    rng_arrivals: &mut impl Rng,
    rng_sizes: &mut impl Rng,
) {
    assert!((0.0..1.0).contains(&load));
    if load == 0.0 {
        return;
    }
    let byte_rate = load * link_capacity_bps as f64 / 8.0 * topo.num_hosts() as f64;
    let lambda = byte_rate / dist.mean();
    let n = (lambda * horizon.as_secs_f64()).ceil() as usize;
    let arrivals = gen_arrivals(lambda, n, rng_arrivals);
    for t in arrivals {
        if t > horizon {
            break;
        }
        let src = rng_arrivals.gen_range(0..topo.num_hosts());
        let dst = loop {
            let d = rng_arrivals.gen_range(0..topo.num_hosts());
            if d != src {
                break d;
            }
        };
        let size = dist.sample(rng_sizes);
        let id = next_id(sessions);
        let mut s = SessionSpec::unicast(id, protocol, src, dst, size, t);
        s.background = true;
        sessions.push(s);
    }
}

/// Incast: `n_senders` synchronized sessions of `size` bytes each, all to
/// host 0, sender hosts assigned round-robin over the remaining hosts.
pub fn build_incast(
    topo: &Topology,
    protocol: Protocol,
    n_senders: u32,
    size: u64,
) -> ScenarioBuild {
    let n_hosts = topo.num_hosts();
    let sessions = (0..n_senders)
        .map(|i| {
            let sender = 1 + (i % (n_hosts - 1));
            SessionSpec::unicast(i as u64 + 1, protocol, sender, 0, size, SimTime::ZERO)
        })
        .collect();
    ScenarioBuild {
        sessions,
        measure_window: None,
        sim_time: SimTime::from_secs(10),
    }
}

/// Outcast: receivers A and B share ToR 0. Group 1 (2 senders in the same
/// pod, 4 hops) sends to A; group 2 (12 senders in other pods, 6 hops)
/// sends to B. All paths are pinned through aggregation switch 0 so the
/// agg->ToR link is the bottleneck shared by both groups.
pub fn build_outcast(topo: &Topology, protocol: Protocol, size: u64) -> ScenarioBuild {
    assert!(topo.k >= 4, "outcast needs >= 4 pods");
    let half = topo.k / 2;
    let rx_a = 0u32; // rack 0
    let rx_b = 1u32;
    let pod_hosts = half * half;
    // group 1: two hosts in pod 0 but a different rack
    let g1: Vec<u32> = (half..half + 2).collect();
    // group 2: 12 hosts spread over the other pods
    let g2: Vec<u32> = (0..12).map(|i| pod_hosts + i % (topo.num_hosts() - pod_hosts)).collect();
    let via = topo.agg(0);
    let mut sessions = Vec::new();
    for (gi, (rx, senders)) in [(rx_a, g1), (rx_b, g2)].into_iter().enumerate() {
        for s in senders {
            let id = sessions.len() as u64 + 1;
            let mut spec = SessionSpec::unicast(id, protocol, s, rx, size, SimTime::ZERO);
            spec.via = Some(via);
            spec.group = Some(gi as u64 + 1);
            sessions.push(spec);
        }
    }
    ScenarioBuild {
        sessions,
        measure_window: None,
        sim_time: SimTime::from_secs(10),
    }
}

/// Window sweep: `n` flows of `size` bytes to host 0 from the farthest
/// (inter-pod) hosts, so goodput is window-limited below the
/// bandwidth-delay product and a large initial window overruns the sender
/// uplink buffer (trims grow with w).
pub fn build_window_sweep(
    topo: &Topology,
    protocol: Protocol,
    n: u32,
    size: u64,
) -> ScenarioBuild {
    let sessions = (0..n)
        .map(|i| {
            let sender = topo.num_hosts() - 1 - (i % (topo.num_hosts() - 1));
            SessionSpec::unicast(i as u64 + 1, protocol, sender, 0, size, SimTime::ZERO)
        })
        .collect();
    ScenarioBuild {
        sessions,
        measure_window: None,
        sim_time: SimTime::from_secs(10),
    }
}

/// Convergence: `n` long flows to host 0, started `stagger` apart, each
/// running for `duration`; fair sharing is measured over the full-overlap
/// window.
pub fn build_convergence(
    topo: &Topology,
    protocol: Protocol,
    n: u32,
    stagger: SimTime,
    duration: SimTime,
) -> ScenarioBuild {
    let half = topo.k / 2;
    let mut sessions = Vec::new();
    for i in 0..n {
        // spread senders across racks other than host 0's
        let sender = (i + 1) * half + i % half;
        let start = SimTime(stagger.0 * i as u64);
        let id = i as u64 + 1;
        let mut s = SessionSpec::unicast(
            id,
            protocol,
            sender % topo.num_hosts(),
            0,
            LONG_FLOW_BYTES,
            start,
        );
        s.stop_at = Some(SimTime(start.0 + duration.0));
        sessions.push(s);
    }
    let w0 = SimTime(stagger.0 * (n as u64 - 1));
    let w1 = duration; // first flow stops at `duration`
    assert!(w0 < w1, "no full-overlap window: stagger too large");
    ScenarioBuild {
        sessions,
        measure_window: Some((w0, w1)),
        sim_time: SimTime(duration.0 + stagger.0 * n as u64 + SimTime::from_secs(1).0),
    }
}
