//! Experiment configuration: a TOML document mapping onto [`RunConfig`].
//! Every default matches the evaluation setup (1 Gbps links, 10 µs delay,
//! 100-packet per-port data buffer (20 per priority band), w = 12, MLFQ thresholds 10KB/100KB/1MB/10MB,
//! 100-symbol pipeline sub-blocks, RTO 200 µs). An empty document is a valid
//! config: the all-defaults web-search realistic scenario.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scdp::DEFAULT_THRESHOLDS;
use crate::sim::Protocol;
use crate::workload::{ReadStyle, SizeDist, WriteStyle};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Realistic,
    Incast,
    Outcast,
    Convergence,
    WindowSweep,
    StorageWrite,
    StorageRead,
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScenarioName::Realistic => "realistic",
            ScenarioName::Incast => "incast",
            ScenarioName::Outcast => "outcast",
            ScenarioName::Convergence => "convergence",
            ScenarioName::WindowSweep => "window_sweep",
            ScenarioName::StorageWrite => "storage_write",
            ScenarioName::StorageRead => "storage_read",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioName,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
    /// FatTree arity (even, >= 4).
    pub k: u32,
    pub net: NetConfig,
    pub workload: WorkloadConfig,
    pub incast: IncastConfig,
    pub outcast: OutcastConfig,
    pub convergence: ConvergenceConfig,
    pub storage: StorageConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioName::Realistic,
            protocols: vec![Protocol::Scdp, Protocol::NdpPlus],
            seeds: vec![1, 2, 3, 4, 5],
            k: 4,
            net: NetConfig::default(),
            workload: WorkloadConfig::default(),
            incast: IncastConfig::default(),
            outcast: OutcastConfig::default(),
            convergence: ConvergenceConfig::default(),
            storage: StorageConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub link_capacity_bps: u64,
    pub link_delay_us: u64,
    /// Total data-packet budget per switch port, split evenly across the
    /// priority bands (default 100 -> 20 slots per band).
    pub buffer_packets: usize,
    /// Initial window (symbols) for unicast and one-to-many sessions.
    pub window: u32,
    /// Initial window per sender for many-to-one sessions.
    pub window_many_to_one: u32,
    pub thresholds: [u64; 4],
    pub pipeline_symbols: u32,
    pub symbol_size: u32,
    pub rto_us: u64,
    pub wrr_header: u32,
    pub wrr_data: u32,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            link_capacity_bps: 1_000_000_000,
            link_delay_us: 10,
            buffer_packets: 100,
            window: 12,
            window_many_to_one: 6,
            thresholds: DEFAULT_THRESHOLDS,
            pipeline_symbols: 100,
            symbol_size: 1500,
            rto_us: 200,
            wrr_header: 1,
            wrr_data: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Foreground flow-size distribution.
    pub dist: SizeDist,
    pub n_sessions: usize,
    /// Foreground Poisson arrival rate (sessions/s).
    pub lambda: f64,
    /// Background offered load on host access links, 0 <= load < 1.
    pub load: f64,
    /// Background flow-size distribution.
    pub background_dist: SizeDist,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            dist: SizeDist::WebSearch,
            n_sessions: 200,
            lambda: 2500.0,
            load: 0.0,
            background_dist: SizeDist::WebSearch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncastConfig {
    pub n_senders: u32,
    pub size_bytes: u64,
}

impl Default for IncastConfig {
    fn default() -> Self {
        IncastConfig {
            n_senders: 32,
            size_bytes: 70_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcastConfig {
    pub size_bytes: u64,
}

impl Default for OutcastConfig {
    fn default() -> Self {
        OutcastConfig {
            size_bytes: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub flows: u32,
    pub stagger_ms: u64,
    pub duration_ms: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            flows: 5,
            stagger_ms: 20,
            duration_ms: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageConfig {
    /// Replication strategy used by NDP-family runs for 3-replica writes
    /// (SCDP always uses its native multicast).
    pub write_style: WriteStyle,
    /// Read strategy used by NDP-family runs (SCDP always reads
    /// many-to-one from all replicas).
    pub read_style: ReadStyle,
    pub n_ops: usize,
    pub lambda: f64,
    pub size_bytes: u64,
    /// Fraction of hosts carrying permutation background long flows.
    pub background_fraction: f64,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig {
            write_style: WriteStyle::MultiUnicast,
            read_style: ReadStyle::SingleReplica,
            n_ops: 50,
            lambda: 2000.0,
            size_bytes: 1_000_000,
            background_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Initial-window values to sweep (window_sweep scenario).
    pub windows: Vec<u32>,
    /// Concurrent senders providing contention during the sweep.
    pub n_senders: u32,
    pub size_bytes: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            windows: vec![2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 52],
            n_senders: 1,
            size_bytes: 500_000,
        }
    }
}

/// Parses and validates a TOML config document. An empty document yields the
/// all-defaults configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k < 4 || self.k % 2 != 0 {
            return bad(format!("k = {} (must be even and >= 4)", self.k));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.protocols.is_empty() {
            return bad("protocols must be non-empty".into());
        }
        if self.net.window == 0 || self.net.window_many_to_one == 0 {
            return bad("window must be >= 1".into());
        }
        if self.net.buffer_packets == 0 {
            return bad("buffer_packets must be >= 1".into());
        }
        if self.net.pipeline_symbols == 0 || self.net.symbol_size == 0 {
            return bad("pipeline_symbols and symbol_size must be >= 1".into());
        }
        if !self.net.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return bad("thresholds must be strictly increasing".into());
        }
        if !(0.0..1.0).contains(&self.workload.load) {
            return bad(format!(
                "workload.load = {} (must be in [0, 1))",
                self.workload.load
            ));
        }
        if self.workload.lambda <= 0.0 || self.storage.lambda <= 0.0 {
            return bad("arrival rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.storage.background_fraction) {
            return bad("storage.background_fraction must be in [0, 1]".into());
        }
        if self.sweep.windows.is_empty() || self.sweep.windows.contains(&0) {
            return bad("sweep.windows must be non-empty with w >= 1".into());
        }
        if self.convergence.flows < 2 {
            return bad("convergence.flows must be >= 2".into());
        }
        let overlap_start = self.convergence.stagger_ms * (self.convergence.flows as u64 - 1);
        if overlap_start >= self.convergence.duration_ms {
            return bad("convergence stagger/duration leave no full-overlap window".into());
        }
        Ok(())
    }

    /// Serialises the fully-resolved config; parsing the echo reproduces an
    /// identical config (round-trip invariant).
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}
