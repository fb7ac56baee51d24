//! Systematic rateless block codec behind a single interface, with two
//! implementations: an analytic model codec (default in simulation, counts
//! symbols only) and a reference systematic random-linear codec over GF(256)
//! (used for data-integrity tests).

pub mod gf256;
mod model;
mod reference;

pub use model::ModelDecoder;
pub use reference::{ReferenceDecoder, ReferenceEncoder};

use thiserror::Error;

use crate::engine::SimTime;

/// Default extra-symbol overhead target once loss has been observed.
pub const DEFAULT_OVERHEAD: u8 = 2;
/// Per-attempt decode failure probability modelled at target K+2.
pub const MODEL_FAILURE_PROB: f64 = 1e-6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("symbol belongs to block {got}, decoder holds block {expected}")]
    BlockMismatch { expected: u32, got: u32 },
    #[error("source block must have K >= 1 symbols")]
    EmptyBlock,
    #[error("data length {len} is not K*T = {expected}")]
    BadLength { len: usize, expected: usize },
}

/// A block of application data fragmented into K source symbols of T bytes
/// (last block zero-padded by the caller).
#[derive(Clone, Debug)]
pub struct SourceBlock {
    pub sbn: u32,
    pub k: u32,
    pub symbol_size: usize,
    pub data: Vec<u8>,
}

impl SourceBlock {
    pub fn new(sbn: u32, k: u32, symbol_size: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        if k == 0 {
            return Err(CodecError::EmptyBlock);
        }
        let expected = k as usize * symbol_size;
        if data.len() != expected {
            return Err(CodecError::BadLength {
                len: data.len(),
                expected,
            });
        }
        Ok(SourceBlock {
            sbn,
            k,
            symbol_size,
            data,
        })
    }

    pub fn fragment(&self, i: u32) -> &[u8] {
        let t = self.symbol_size;
        &self.data[i as usize * t..(i as usize + 1) * t]
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum SymbolKind {
    Source,
    Repair,
}

/// One encoding symbol. The model codec tracks identity only (no payload).
#[derive(Clone, Debug)]
pub struct SymbolInfo {
    pub sbn: u32,
    pub esi: u32,
    pub kind: SymbolKind,
    pub payload: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeOutcome {
    /// Recovered data for the reference codec; None for the model codec.
    Success(Option<Vec<u8>>),
    NeedMore,
}

/// Common decoder surface for the model and reference implementations.
pub trait SymbolDecoder {
    fn sbn(&self) -> u32;
    fn k(&self) -> u32;
    /// Stores a symbol; duplicates are ignored. Returns true if new.
    fn add_symbol(&mut self, sym: &SymbolInfo) -> Result<bool, CodecError>;
    fn symbols_received(&self) -> u32;
    /// True when all K source symbols are present (decode is the identity).
    fn all_source_present(&self) -> bool;
    /// Attempts decoding. `fail_sample` is the caller-sampled Bernoulli
    /// outcome used by the model codec to emulate the ~1e-6 failure rate
    /// (ignored by the reference codec, which fails exactly on rank
    /// deficiency).
    fn try_decode(&mut self, fail_sample: bool) -> DecodeOutcome;
}

/// Decode latency model: c_fixed + c_per_symbol * K, calibrated so decoding
/// throughput is ~1.3 Gbps for T=1500 (c_per_symbol = T*8/1.3e9).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct DecodeLatencyModel {
    pub fixed_ns: u64,
    pub per_symbol_ns: u64,
}

impl DecodeLatencyModel {
    pub fn calibrated(symbol_size: u32) -> Self {
        DecodeLatencyModel {
            fixed_ns: 10_000,
            per_symbol_ns: ((symbol_size as f64 * 8.0 / 1.3e9) * 1e9).round() as u64,
        }
    }

    pub fn latency(&self, k: u32) -> SimTime {
        assert!(k >= 1, "decode latency undefined for K = 0");
        SimTime::from_nanos(self.fixed_ns + self.per_symbol_ns * k as u64)
    }
}
