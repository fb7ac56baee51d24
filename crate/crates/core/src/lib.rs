//! Deterministic packet-level simulator and protocol library for SCDP, a
//! receiver-driven data-centre transport built on systematic rateless coding
//! and packet trimming, together with an NDP baseline, Clos fabrics,
//! workload generators and a metrics harness.

pub mod codec;
pub mod config;
pub mod runner;
pub mod engine;
pub mod fabric;
pub mod metrics;
pub mod ndp;
pub mod packet;
pub mod sim;
pub mod scdp;
pub mod topology;
pub mod workload;
