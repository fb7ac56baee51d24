//! FatTree topology construction, ECMP path sets, multicast trees and
//! per-packet path spraying.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::engine::SimTime;

/// Compact node identifier. Hosts come first, then ToR, aggregation and core
/// switches, so lexicographic path ordering is just numeric ordering.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum NodeKind {
    Host,
    Tor,
    Agg,
    Core,
}

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LinkId(pub u32);

#[derive(Clone, Debug)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub capacity_bps: u64,
    pub delay: SimTime,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("fat tree arity must be even and >= 4, got {0}")]
    BadArity(u32),
    #[error("unknown host {0:?}")]
    UnknownHost(NodeId),
    #[error("src and dst must differ")]
    SamePair,
    #[error("multicast member set must be non-empty and exclude the root")]
    BadMemberSet,
}

/// Ordered set of equal-cost src-to-dst paths (node sequences), stable
/// (lexicographic) for determinism.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub paths: Vec<Vec<NodeId>>,
}

impl PathSet {
    pub fn hop_count(&self) -> usize {
        self.paths[0].len() - 1
    }
}

/// Shortest-path multicast tree rooted at a host, stored as child lists.
#[derive(Clone, Debug)]
pub struct MulticastTree {
    pub root: NodeId,
    pub members: Vec<NodeId>,
    pub children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl MulticastTree {
    pub fn edge_count(&self) -> usize {
        self.children.values().map(|c| c.len()).sum()
    }
}

/// FatTree with arity k: k pods, k/2 ToR and k/2 aggregation switches per
/// pod, (k/2)^2 core switches, k^3/4 single-homed hosts.
pub struct Topology {
    pub k: u32,
    pub links: Vec<Link>,
    link_index: BTreeMap<(NodeId, NodeId), LinkId>,
    n_hosts: u32,
    n_tor: u32,
    n_agg: u32,
    n_core: u32,
}

impl Topology {
    pub fn build_fattree(
        k: u32,
        link_capacity_bps: u64,
        link_delay: SimTime,
    ) -> Result<Topology, TopologyError> {
        if k < 4 || k % 2 != 0 {
            return Err(TopologyError::BadArity(k));
        }
        let half = k / 2;
        let n_hosts = k * half * half; // k^3/4
        let n_tor = k * half;
        let n_agg = k * half;
        let n_core = half * half;

        let mut topo = Topology {
            k,
            links: Vec::new(),
            link_index: BTreeMap::new(),
            n_hosts,
            n_tor,
            n_agg,
            n_core,
        };

        let mut add = |topo: &mut Topology, a: NodeId, b: NodeId| {
            for (from, to) in [(a, b), (b, a)] {
                let id = LinkId(topo.links.len() as u32);
                topo.links.push(Link {
                    from,
                    to,
                    capacity_bps: link_capacity_bps,
                    delay: link_delay,
                });
                topo.link_index.insert((from, to), id);
            }
        };

        // host <-> ToR
        for h in 0..n_hosts {
            let (host, tor) = (topo.host(h), topo.tor(h / half)); // half hosts per ToR
            add(&mut topo, host, tor);
        }
        // ToR <-> agg inside each pod
        for pod in 0..k {
            for t in 0..half {
                for a in 0..half {
                    let (tor, agg) = (topo.tor(pod * half + t), topo.agg(pod * half + a));
                    add(&mut topo, tor, agg);
                }
            }
        }
        // agg <-> core: agg with in-pod index a connects to cores
        // [a*half, a*half + half)
        for pod in 0..k {
            for a in 0..half {
                for j in 0..half {
                    let (agg, core) = (topo.agg(pod * half + a), topo.core(a * half + j));
                    add(&mut topo, agg, core);
                }
            }
        }
        Ok(topo)
    }

    pub fn num_hosts(&self) -> u32 {
        self.n_hosts
    }
    pub fn num_tor(&self) -> u32 {
        self.n_tor
    }
    pub fn num_agg(&self) -> u32 {
        self.n_agg
    }
    pub fn num_core(&self) -> u32 {
        self.n_core
    }

    pub fn host(&self, i: u32) -> NodeId {
        debug_assert!(i < self.n_hosts);
        NodeId(i)
    }
    pub fn tor(&self, i: u32) -> NodeId {
        debug_assert!(i < self.n_tor);
        NodeId(self.n_hosts + i)
    }
    pub fn agg(&self, i: u32) -> NodeId {
        debug_assert!(i < self.n_agg);
        NodeId(self.n_hosts + self.n_tor + i)
    }
    pub fn core(&self, i: u32) -> NodeId {
        debug_assert!(i < self.n_core);
        NodeId(self.n_hosts + self.n_tor + self.n_agg + i)
    }

    pub fn kind(&self, n: NodeId) -> NodeKind {
        let i = n.0;
        if i < self.n_hosts {
            NodeKind::Host
        } else if i < self.n_hosts + self.n_tor {
            NodeKind::Tor
        } else if i < self.n_hosts + self.n_tor + self.n_agg {
            NodeKind::Agg
        } else {
            NodeKind::Core
        }
    }

    pub fn num_nodes(&self) -> u32 {
        self.n_hosts + self.n_tor + self.n_agg + self.n_core
    }

    pub fn is_host(&self, n: NodeId) -> bool {
        n.0 < self.n_hosts
    }

    /// Pod of a host or in-pod switch.
    pub fn pod_of_host(&self, h: NodeId) -> u32 {
        debug_assert!(self.is_host(h));
        h.0 / (self.k / 2 * (self.k / 2))
    }

    /// Rack (ToR index) of a host.
    pub fn rack_of_host(&self, h: NodeId) -> u32 {
        debug_assert!(self.is_host(h));
        h.0 / (self.k / 2)
    }

    pub fn hosts_in_rack(&self, rack: u32) -> Vec<NodeId> {
        let half = self.k / 2;
        (rack * half..(rack + 1) * half).map(NodeId).collect()
    }

    pub fn link_between(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.link_index.get(&(from, to)).copied()
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0 as usize]
    }

    /// Uplink of a single-homed host (host -> ToR).
    pub fn host_uplink(&self, h: NodeId) -> LinkId {
        let tor = self.tor(self.rack_of_host(h));
        self.link_between(h, tor).unwrap()
    }

    /// ToR -> host downlink.
    pub fn host_downlink(&self, h: NodeId) -> LinkId {
        let tor = self.tor(self.rack_of_host(h));
        self.link_between(tor, h).unwrap()
    }

    /// Complete set of shortest paths from src host to dst host, ordered
    /// lexicographically by node id.
    pub fn ecmp_paths(&self, src: NodeId, dst: NodeId) -> Result<PathSet, TopologyError> {
        if !self.is_host(src) {
            return Err(TopologyError::UnknownHost(src));
        }
        if !self.is_host(dst) {
            return Err(TopologyError::UnknownHost(dst));
        }
        if src == dst {
            return Err(TopologyError::SamePair);
        }
        let half = self.k / 2;
        let src_rack = self.rack_of_host(src);
        let dst_rack = self.rack_of_host(dst);
        let mut paths = Vec::new();
        if src_rack == dst_rack {
            paths.push(vec![src, self.tor(src_rack), dst]);
        } else if self.pod_of_host(src) == self.pod_of_host(dst) {
            let pod = self.pod_of_host(src);
            for a in 0..half {
                paths.push(vec![
                    src,
                    self.tor(src_rack),
                    self.agg(pod * half + a),
                    self.tor(dst_rack),
                    dst,
                ]);
            }
        } else {
            let spod = self.pod_of_host(src);
            let dpod = self.pod_of_host(dst);
            for a in 0..half {
                for j in 0..half {
                    paths.push(vec![
                        src,
                        self.tor(src_rack),
                        self.agg(spod * half + a),
                        self.core(a * half + j),
                        self.agg(dpod * half + a),
                        self.tor(dst_rack),
                        dst,
                    ]);
                }
            }
        }
        paths.sort();
        Ok(PathSet { paths })
    }

    /// Shortest-path tree from root to all members; per-member paths are
    /// chosen to maximise overlap with already-selected edges (first
    /// lexicographic path on ties), which dedupes shared upstream edges.
    pub fn build_multicast_tree(
        &self,
        root: NodeId,
        members: &[NodeId],
    ) -> Result<MulticastTree, TopologyError> {
        if members.is_empty() || members.contains(&root) {
            return Err(TopologyError::BadMemberSet);
        }
        let mut members = members.to_vec();
        members.sort();
        members.dedup();
        let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for &m in &members {
            let set = self.ecmp_paths(root, m)?;
            let best = set
                .paths
                .iter()
                .max_by_key(|p| {
                    let overlap = p
                        .windows(2)
                        .filter(|w| edges.contains(&(w[0], w[1])))
                        .count();
                    // ties: prefer lexicographically smallest (max_by_key
                    // keeps the last max, so invert the path for comparison)
                    (overlap, std::cmp::Reverse(p.to_vec()))
                })
                .unwrap();
            for w in best.windows(2) {
                edges.insert((w[0], w[1]));
            }
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (a, b) in edges {
            children.entry(a).or_default().push(b);
        }
        for c in children.values_mut() {
            c.sort();
        }
        Ok(MulticastTree {
            root,
            members,
            children,
        })
    }

    /// Human-readable node/link count summary.
    pub fn summary(&self) -> String {
        format!(
            "fat-tree k={}: hosts={} tor={} agg={} core={} links={} (directed)\n\
             link capacity={} bps, link delay={}",
            self.k,
            self.n_hosts,
            self.n_tor,
            self.n_agg,
            self.n_core,
            self.links.len(),
            self.links[0].capacity_bps,
            self.links[0].delay,
        )
    }
}

/// Uniform random per-packet path choice across a path set.
pub fn spray<'a>(set: &'a PathSet, rng: &mut impl Rng) -> &'a Vec<NodeId> {
    &set.paths[rng.gen_range(0..set.paths.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{rng_stream, StreamId};
    use std::collections::HashMap;

    fn t(k: u32) -> Topology {
        Topology::build_fattree(k, 1_000_000_000, SimTime::from_micros(10)).unwrap()
    }

    #[test]
    fn arity_validation() {
        assert!(Topology::build_fattree(3, 1, SimTime::ZERO).is_err());
        assert!(Topology::build_fattree(2, 1, SimTime::ZERO).is_err());
        assert!(Topology::build_fattree(5, 1, SimTime::ZERO).is_err());
    }

    #[test]
    fn k4_counts() {
        let topo = t(4);
        assert_eq!(topo.num_hosts(), 16);
        assert_eq!(topo.num_core(), 4);
        assert_eq!(topo.num_agg(), 8);
        assert_eq!(topo.num_tor(), 8);
    }

    #[test]
    fn k10_counts_match_paper_setup() {
        let topo = t(10);
        assert_eq!(topo.num_hosts(), 250);
        assert_eq!(topo.num_core(), 25);
        assert_eq!(topo.num_agg(), 50);
    }

    #[test]
    fn path_counts_k4() {
        let topo = t(4);
        // same ToR
        let p = topo.ecmp_paths(topo.host(0), topo.host(1)).unwrap();
        assert_eq!(p.paths.len(), 1);
        assert_eq!(p.hop_count(), 2);
        // same pod, different ToR
        let p = topo.ecmp_paths(topo.host(0), topo.host(2)).unwrap();
        assert_eq!(p.paths.len(), 2);
        assert_eq!(p.hop_count(), 4);
        // inter-pod
        let p = topo.ecmp_paths(topo.host(0), topo.host(15)).unwrap();
        assert_eq!(p.paths.len(), 4);
        assert_eq!(p.hop_count(), 6);
    }

    #[test]
    fn inter_pod_k10_has_25_paths() {
        let topo = t(10);
        let p = topo.ecmp_paths(topo.host(0), topo.host(249)).unwrap();
        assert_eq!(p.paths.len(), 25);
        assert_eq!(p.hop_count(), 6);
    }

    #[test]
    fn path_errors() {
        let topo = t(4);
        assert_eq!(
            topo.ecmp_paths(topo.host(0), topo.host(0)).unwrap_err(),
            TopologyError::SamePair
        );
        assert!(topo.ecmp_paths(topo.tor(0), topo.host(0)).is_err());
    }

    #[test]
    fn paths_are_valid_links_and_sorted() {
        let topo = t(6);
        let p = topo.ecmp_paths(topo.host(0), topo.host(53)).unwrap();
        assert_eq!(p.paths.len(), 9);
        for path in &p.paths {
            for w in path.windows(2) {
                assert!(topo.link_between(w[0], w[1]).is_some());
            }
        }
        let mut sorted = p.paths.clone();
        sorted.sort();
        assert_eq!(sorted, p.paths);
    }

    #[test]
    fn multicast_single_same_rack_member_is_the_path() {
        let topo = t(4);
        let tree = topo
            .build_multicast_tree(topo.host(0), &[topo.host(1)])
            .unwrap();
        assert_eq!(tree.edge_count(), 2);
    }

    #[test]
    fn multicast_tree_smaller_than_unicast_union() {
        let topo = t(4);
        // HDFS-style: two nodes in one remote rack + one random node
        let members = [topo.host(4), topo.host(5), topo.host(12)];
        let tree = topo.build_multicast_tree(topo.host(0), &members).unwrap();
        let unicast_sum: usize = members
            .iter()
            .map(|&m| topo.ecmp_paths(topo.host(0), m).unwrap().hop_count())
            .sum();
        assert!(tree.edge_count() < unicast_sum);
    }

    #[test]
    fn multicast_two_pods_uses_one_core() {
        let topo = t(4);
        let members = [topo.host(4), topo.host(12)]; // pods 1 and 3, root pod 0
        let tree = topo.build_multicast_tree(topo.host(0), &members).unwrap();
        let cores: Vec<_> = tree
            .children
            .keys()
            .chain(tree.children.values().flatten())
            .filter(|&&n| topo.kind(n) == NodeKind::Core)
            .collect();
        let mut unique: Vec<_> = cores.into_iter().collect();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 1);
    }

    #[test]
    fn multicast_bad_members() {
        let topo = t(4);
        assert!(topo.build_multicast_tree(topo.host(0), &[]).is_err());
        assert!(topo
            .build_multicast_tree(topo.host(0), &[topo.host(0)])
            .is_err());
    }

    #[test]
    fn spray_uniform_and_reproducible() {
        let topo = t(10);
        let set = topo.ecmp_paths(topo.host(0), topo.host(249)).unwrap();
        let mut rng = rng_stream(1, StreamId::Spraying);
        let mut counts: HashMap<Vec<NodeId>, u64> = HashMap::new();
        let n = 1_000_000u64;
        for _ in 0..n {
            *counts.entry(spray(&set, &mut rng).clone()).or_default() += 1;
        }
        assert_eq!(counts.len(), 25);
        // each path frequency 4% +- 0.2%
        for &c in counts.values() {
            let f = c as f64 / n as f64;
            assert!((f - 0.04).abs() < 0.002, "frequency {f}");
        }
        // chi-square against uniform: 24 dof, 99.9% critical value ~51.18
        let expected = n as f64 / 25.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 51.18, "chi2 {chi2}");

        let mut rng2 = rng_stream(1, StreamId::Spraying);
        let first: Vec<_> = (0..32).map(|_| spray(&set, &mut rng2)[2]).collect();
        let mut rng3 = rng_stream(1, StreamId::Spraying);
        let second: Vec<_> = (0..32).map(|_| spray(&set, &mut rng3)[2]).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn singleton_spray() {
        let topo = t(4);
        let set = topo.ecmp_paths(topo.host(0), topo.host(1)).unwrap();
        let mut rng = rng_stream(0, StreamId::Spraying);
        assert_eq!(spray(&set, &mut rng), &set.paths[0]);
    }
}
