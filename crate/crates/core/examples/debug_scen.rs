use scdp_sim::engine::SimTime;
use scdp_sim::sim::{Protocol, SessionSpec, SimConfig, Simulation};
use scdp_sim::topology::Topology;
use scdp_sim::workload;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "outcast".into());
    let mut cfg = SimConfig::default();
    let topo = Topology::build_fattree(4, cfg.link_capacity_bps, cfg.link_delay).unwrap();
    match which.as_str() {
        "outcast_trace" => {
            if let Some(b) = std::env::args().nth(2) {
                cfg.port.data_budget = b.parse().unwrap();
            }
            let b = workload::build_outcast(&topo, Protocol::Scdp, 200_000);
            let topo_agg0 = topo.agg(0);
            let topo_tor0 = topo.tor(0);
            let mut sim = Simulation::new(cfg, topo, b.sessions).unwrap();
            for step in 1..=100u64 {
                sim.run_until(SimTime(step * 200_000)); // 200 us steps
                if step % 5 == 0 {
                    let p0 = sim.debug_pacer_depth(0);
                    let p1 = sim.debug_pacer_depth(1);
                    let g1: Vec<_> = (1..=2).map(|i| sim.debug_scdp_state(i)).collect();
                    let port = sim
                        .debug_port(topo_agg0, topo_tor0)
                        .unwrap();
                    println!(
                        "t={}us pacer0={p0} pacer1={p1} g1={g1:?} port(deq_by_pri={:?} trims={} enq={} occ={} hdrq={})",
                        step * 200, port.0, port.1, port.2, port.3, port.4
                    );
                }
            }
            return;
        }
        "outcast" => {
            if let Some(b) = std::env::args().nth(2) {
                cfg.port.data_budget = b.parse().unwrap();
            }
            let b = workload::build_outcast(&topo, Protocol::Scdp, 200_000);
            cfg.measure_window = Some((SimTime::from_millis(3), SimTime::from_millis(5)));
            run(cfg, topo, b.sessions);
        }
        "incast_trace" => {
            let n: u32 = std::env::args().nth(2).unwrap().parse().unwrap();
            let b = workload::build_incast(&topo, Protocol::Scdp, n, 70_000);
            let tor0 = topo.tor(0);
            let mut sim = Simulation::new(cfg, topo, b.sessions).unwrap();
            for step in 1..=260u64 {
                sim.run_until(SimTime(step * 100_000));
                if step < 170 { continue; }
                let p0 = sim.debug_pacer_depth(0);
                let port = sim.debug_port(tor0, scdp_sim::topology::NodeId(0)).unwrap();
                let tail: Vec<_> = [19u64, 22, 26, 20]
                    .iter()
                    .map(|&i| (i, sim.debug_scdp_state(i)))
                    .collect();
                println!(
                    "t={}us pacer0={p0} deq={:?} occ={} hdrq={} tail={tail:?}",
                    step * 100, port.0, port.3, port.4
                );
            }
            return;
        }
        "incast" => {
            let n: u32 = std::env::args().nth(2).unwrap().parse().unwrap();
            let b = workload::build_incast(&topo, Protocol::Scdp, n, 70_000);
            run(cfg, topo, b.sessions);
        }
        _ => panic!("unknown"),
    }
}

fn run(cfg: SimConfig, topo: Topology, sessions: Vec<SessionSpec>) {
    let mut sim = Simulation::new(cfg, topo, sessions).unwrap();
    sim.run(SimTime::from_millis(500));
    sim.audit().unwrap();
    let mut g: std::collections::BTreeMap<u64, (u64, u64, u64, u64)> = Default::default();
    for r in sim.results() {
        println!(
            "id={} grp={:?} size={} start={:?} end={:?} trim={} ovh={} unnec={} pulls={} dec={}",
            r.id, r.group, r.size_bytes, r.start_ns, r.end_ns, r.trimmed,
            r.overhead_symbols, r.unnecessary_symbols, r.pulls_sent, r.decode_invoked
        );
        if let (Some(s), Some(e)) = (r.start_ns, r.end_ns) {
            let grp = r.group.unwrap_or(99);
            let ent = g.entry(grp).or_default();
            ent.0 += r.size_bytes;
            ent.1 = ent.1.max(e - s);
            ent.2 += r.window_bytes;
            ent.3 += r.trimmed;
        }
    }
    for (grp, (bytes, makespan, wb, trims)) in g {
        println!(
            "group {grp}: bytes={bytes} makespan={}ms rate={:.3e} window_bytes={wb} (window rate {:.3e}) trims={trims}",
            makespan as f64 / 1e6,
            bytes as f64 * 8.0 / makespan as f64 * 1e9,
            wb as f64 * 8.0 / 2e-3,
        );
    }
}
