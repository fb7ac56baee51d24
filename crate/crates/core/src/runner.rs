//! Experiment runner: expands a [`RunConfig`] into concrete simulations,
//! executes them per (seed, protocol) pair, and writes plot-ready CSVs plus
//! a cross-seed summary. Compared protocols share every traffic seed stream
//! (arrivals, sizes, placement, background), so comparisons are paired.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::config::{RunConfig, ScenarioName};
use crate::engine::{rng_stream, SimTime, StreamId};
use crate::metrics::{self, SessionRecord};
use crate::sim::{AuditError, Protocol, SessionSpec, SimConfig, SimError, Simulation};
use crate::topology::Topology;
use crate::workload::{
    self, build_convergence, build_incast, build_outcast, ReadStyle, ScenarioBuild, WriteStyle,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunnerError> {
    fs::write(path, contents).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    fn sim_config(&self, seed: u64) -> SimConfig {
        let mut port = crate::fabric::PortConfig::default();
        port.data_budget = self.net.buffer_packets;
        port.w_hdr = self.net.wrr_header;
        port.w_data = self.net.wrr_data;
        SimConfig {
            link_capacity_bps: self.net.link_capacity_bps,
            link_delay: SimTime::from_micros(self.net.link_delay_us),
            port,
            w_unicast: self.net.window,
            w_many_to_one: self.net.window_many_to_one,
            thresholds: self.net.thresholds,
            pipeline_symbols: self.net.pipeline_symbols,
            symbol_size: self.net.symbol_size,
            rto: SimTime::from_micros(self.net.rto_us),
            seed,
            ..SimConfig::default()
        }
    }
}

/// Builds the session list for one (seed, protocol) run. Traffic randomness
/// depends only on the seed, never on the protocol.
fn build_sessions(
    cfg: &RunConfig,
    protocol: Protocol,
    topo: &Topology,
    seed: u64,
) -> ScenarioBuild {
    let mut r_arr = rng_stream(seed, StreamId::Arrivals);
    let mut r_sizes = rng_stream(seed, StreamId::FlowSizes);
    let mut r_place = rng_stream(seed, StreamId::Placement);
    let mut r_bg = rng_stream(seed, StreamId::Background);
    match cfg.scenario {
        ScenarioName::Incast => {
            build_incast(topo, protocol, cfg.incast.n_senders, cfg.incast.size_bytes)
        }
        ScenarioName::WindowSweep => workload::build_window_sweep(
            topo,
            protocol,
            cfg.sweep.n_senders,
            cfg.sweep.size_bytes,
        ),
        ScenarioName::Outcast => build_outcast(topo, protocol, cfg.outcast.size_bytes),
        ScenarioName::Convergence => build_convergence(
            topo,
            protocol,
            cfg.convergence.flows,
            SimTime::from_millis(cfg.convergence.stagger_ms),
            SimTime::from_millis(cfg.convergence.duration_ms),
        ),
        ScenarioName::Realistic => {
            let w = &cfg.workload;
            let arrivals = workload::gen_arrivals(w.lambda, w.n_sessions, &mut r_arr);
            let horizon = *arrivals.last().unwrap();
            let mut sessions = Vec::new();
            for t in &arrivals {
                let src = r_place.gen_range(0..topo.num_hosts());
                let dst = loop {
                    let d = r_place.gen_range(0..topo.num_hosts());
                    if d != src {
                        break d;
                    }
                };
                let size = w.dist.sample(&mut r_sizes);
                let id = sessions.len() as u64 + 1;
                sessions.push(SessionSpec::unicast(id, protocol, src, dst, size, *t));
            }
            workload::push_load_background(
                &mut sessions,
                protocol,
                topo,
                w.background_dist,
                w.load,
                cfg.net.link_capacity_bps,
                horizon,
                &mut r_bg,
                &mut r_sizes,
            );
            ScenarioBuild {
                sessions,
                measure_window: None,
                sim_time: SimTime::from_secs(60),
            }
        }
        ScenarioName::StorageWrite | ScenarioName::StorageRead => {
            let s = &cfg.storage;
            let arrivals = workload::gen_arrivals(s.lambda, s.n_ops, &mut r_arr);
            let mut sessions = Vec::new();
            for t in &arrivals {
                let client = topo.host(r_place.gen_range(0..topo.num_hosts()));
                let replicas = workload::place_replicas(client, topo, &mut r_place);
                if cfg.scenario == ScenarioName::StorageWrite {
                    // SCDP writes natively via multicast; NDP-family runs use
                    // the configured replication strategy.
                    let style = if protocol == Protocol::Scdp {
                        WriteStyle::Multicast
                    } else {
                        s.write_style
                    };
                    workload::push_write(
                        &mut sessions,
                        style,
                        protocol,
                        client,
                        replicas,
                        s.size_bytes,
                        *t,
                    );
                } else {
                    let style = if protocol == Protocol::Scdp {
                        ReadStyle::ManyToOne
                    } else {
                        s.read_style
                    };
                    workload::push_read(
                        &mut sessions,
                        style,
                        protocol,
                        client,
                        replicas,
                        s.size_bytes,
                        *t,
                        topo,
                        &mut r_place,
                    );
                }
            }
            workload::push_permutation_background(
                &mut sessions,
                protocol,
                topo,
                s.background_fraction,
                &mut r_bg,
            );
            ScenarioBuild {
                sessions,
                measure_window: None,
                sim_time: SimTime::from_secs(60),
            }
        }
    }
}

pub struct RunResult {
    pub seed: u64,
    pub protocol: Protocol,
    /// Initial window used (varies in the window sweep).
    pub window: u32,
    pub records: Vec<SessionRecord>,
    pub total_trimmed: u64,
    /// Per-session bytes delivered inside the measurement window, if one was
    /// configured (foreground sessions only).
    pub window_bytes: Vec<u64>,
}

/// Executes one (seed, protocol, window-override) simulation and returns the
/// collected records after a successful conservation audit.
pub fn run_one(
    cfg: &RunConfig,
    protocol: Protocol,
    seed: u64,
    window_override: Option<u32>,
) -> Result<RunResult, RunnerError> {
    let mut sim_cfg = cfg.sim_config(seed);
    if let Some(w) = window_override {
        sim_cfg.w_unicast = w;
    }
    let topo = Topology::build_fattree(cfg.k, sim_cfg.link_capacity_bps, sim_cfg.link_delay)?;
    let build = build_sessions(cfg, protocol, &topo, seed);
    sim_cfg.measure_window = build.measure_window;
    let mut sim = Simulation::new(sim_cfg, topo, build.sessions)?;
    sim.run(build.sim_time);
    sim.audit()?;
    let results = sim.results();
    let window_bytes = results
        .iter()
        .filter(|r| !r.background)
        .map(|r| r.window_bytes)
        .collect();
    Ok(RunResult {
        seed,
        protocol,
        window: window_override.unwrap_or(cfg.net.window),
        records: metrics::collect(&sim.results()),
        total_trimmed: sim.total_trimmed(),
        window_bytes,
    })
}

/// Runs the full experiment: every (seed, protocol) pair — and every sweep
/// window for the window_sweep scenario — writing one CSV per run, a
/// cross-seed summary, and the resolved config echo into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(out_dir).map_err(|source| RunnerError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let echo_path = out_dir.join("config.toml");
    write_file(&echo_path, &cfg.echo())?;
    written.push(echo_path);

    let windows: Vec<Option<u32>> = if cfg.scenario == ScenarioName::WindowSweep {
        cfg.sweep.windows.iter().map(|&w| Some(w)).collect()
    } else {
        vec![None]
    };

    let mut runs: Vec<RunResult> = Vec::new();
    for &seed in &cfg.seeds {
        for &protocol in &cfg.protocols {
            for &w in &windows {
                runs.push(run_one(cfg, protocol, seed, w)?);
            }
        }
    }
    // deterministic merge order regardless of execution order
    runs.sort_by_key(|r| (r.seed, r.protocol, r.window));

    for run in &runs {
        let name = if cfg.scenario == ScenarioName::WindowSweep {
            format!("{}_{}_w{}_seed{}.csv", cfg.scenario, run.protocol, run.window, run.seed)
        } else {
            format!("{}_{}_seed{}.csv", cfg.scenario, run.protocol, run.seed)
        };
        let path = out_dir.join(name);
        let mut buf = Vec::new();
        metrics::export_csv(&run.records, &mut buf).expect("in-memory write");
        write_file(&path, std::str::from_utf8(&buf).unwrap())?;
        written.push(path);
    }

    let summary_path = out_dir.join("summary.csv");
    write_file(&summary_path, &summarize(cfg, &runs))?;
    written.push(summary_path);
    Ok(written)
}

/// Per (protocol, window) means with 95% confidence half-widths across seeds.
fn summarize(cfg: &RunConfig, runs: &[RunResult]) -> String {
    let mut out = String::from(
        "protocol,window,sessions,mean_fct_ns,fct_ci_ns,p99_fct_ns,mean_goodput_bps,goodput_ci_bps,decode_fraction,trimmed\n",
    );
    let mut keys: Vec<(Protocol, u32)> = runs.iter().map(|r| (r.protocol, r.window)).collect();
    keys.sort();
    keys.dedup();
    for (protocol, window) in keys {
        let group: Vec<&RunResult> = runs
            .iter()
            .filter(|r| r.protocol == protocol && r.window == window)
            .collect();
        let mut fct_means = Vec::new();
        let mut goodput_means = Vec::new();
        let mut p99s = Vec::new();
        let mut decode_fracs = Vec::new();
        let mut trimmed = 0u64;
        let mut n_sessions = 0usize;
        for run in &group {
            let fg = |r: &SessionRecord| !r.background;
            if let Ok(stats) = metrics::fct_stats(&run.records, fg) {
                fct_means.push(stats.mean_ns);
                p99s.push(stats.p99_ns as f64);
            }
            let goodputs: Vec<f64> = run
                .records
                .iter()
                .filter(|r| !r.background)
                .map(|r| r.goodput_bps())
                .collect();
            if !goodputs.is_empty() {
                goodput_means.push(goodputs.iter().sum::<f64>() / goodputs.len() as f64);
            }
            decode_fracs.push(metrics::decode_fraction(&run.records, fg));
            trimmed += run.total_trimmed;
            n_sessions += run.records.iter().filter(|r| !r.background).count();
        }
        let (fct, fct_ci) = mean_or_zero(&fct_means);
        let (p99, _) = mean_or_zero(&p99s);
        let (gp, gp_ci) = mean_or_zero(&goodput_means);
        let (df, _) = mean_or_zero(&decode_fracs);
        out.push_str(&format!(
            "{protocol},{window},{n_sessions},{fct:.0},{fct_ci:.0},{p99:.0},{gp:.0},{gp_ci:.0},{df:.6},{trimmed}\n"
        ));
    }
    let _ = cfg;
    out
}

fn mean_or_zero(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        (0.0, 0.0)
    } else {
        metrics::mean_ci(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn incast_run_completes_and_audits() {
        let cfg = parse_config(
            "scenario = \"incast\"\nprotocols = [\"scdp\"]\nseeds = [1]\n[incast]\nn_senders = 8\nsize_bytes = 70000\n",
        )
        .unwrap();
        let run = run_one(&cfg, Protocol::Scdp, 1, None).unwrap();
        assert_eq!(run.records.len(), 8);
        assert!(run.records.iter().all(|r| r.end_ns > r.start_ns));
    }

    #[test]
    fn paired_seeds_share_traffic() {
        // identical sizes/arrivals across protocols for the same seed
        let cfg = parse_config(
            "scenario = \"realistic\"\nprotocols = [\"scdp\", \"ndp_plus\"]\nseeds = [3]\n[workload]\nn_sessions = 20\n",
        )
        .unwrap();
        let topo = Topology::build_fattree(4, 1_000_000_000, SimTime::from_micros(10)).unwrap();
        let a = build_sessions(&cfg, Protocol::Scdp, &topo, 3);
        let b = build_sessions(&cfg, Protocol::NdpPlus, &topo, 3);
        assert_eq!(a.sessions.len(), b.sessions.len());
        for (x, y) in a.sessions.iter().zip(&b.sessions) {
            assert_eq!(x.size_bytes, y.size_bytes);
            assert_eq!(x.start, y.start);
            assert_eq!(x.senders, y.senders);
            assert_eq!(x.receivers, y.receivers);
        }
    }

    #[test]
    fn experiment_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(
            "scenario = \"incast\"\nprotocols = [\"scdp\"]\nseeds = [1, 2]\n[incast]\nn_senders = 4\nsize_bytes = 70000\n",
        )
        .unwrap();
        let files = run_experiment(&cfg, dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"config.toml".to_string()));
        assert!(names.contains(&"incast_scdp_seed1.csv".to_string()));
        assert!(names.contains(&"incast_scdp_seed2.csv".to_string()));
        assert!(names.contains(&"summary.csv".to_string()));
        // config echo round-trips to the same run configuration
        let echoed = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), cfg);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.lines().count() >= 2);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = parse_config(
            "scenario = \"realistic\"\nprotocols = [\"scdp\"]\nseeds = [7]\n[workload]\nn_sessions = 15\nload = 0.2\n",
        )
        .unwrap();
        let run_csv = || {
            let r = run_one(&cfg, Protocol::Scdp, 7, None).unwrap();
            let mut buf = Vec::new();
            metrics::export_csv(&r.records, &mut buf).unwrap();
            buf
        };
        assert_eq!(run_csv(), run_csv());
    }
}
