//! Analytic model codec: tracks received ESIs and declares decodability by
//! symbol counting, with a sampled rare failure at the K+o target.

use std::collections::HashSet;

use super::{CodecError, DecodeOutcome, SymbolDecoder, SymbolInfo, DEFAULT_OVERHEAD};

#[derive(Clone, Debug)]
pub struct ModelDecoder {
    sbn: u32,
    k: u32,
    received: HashSet<u32>,
    source_count: u32,
    /// 0 until loss observed, then 2 (3 after a failed decode attempt).
    pub overhead: u8,
    pub attempts: u32,
}

impl ModelDecoder {
    pub fn new(sbn: u32, k: u32) -> Self {
        ModelDecoder {
            sbn,
            k,
            received: HashSet::new(),
            source_count: 0,
            overhead: 0,
            attempts: 0,
        }
    }

    /// Arms the loss overhead target (idempotent): target becomes K+o.
    pub fn arm_overhead(&mut self) {
        if self.overhead == 0 {
            self.overhead = DEFAULT_OVERHEAD;
        }
    }

    pub fn target(&self) -> u32 {
        self.k + self.overhead as u32
    }

    /// Decodable iff |received| >= K + o_effective, where o_effective = 0
    /// when all K source symbols are present.
    pub fn decodable(&self) -> bool {
        self.all_source_present() || self.received.len() as u32 >= self.target()
    }
}

impl SymbolDecoder for ModelDecoder {
    fn sbn(&self) -> u32 {
        self.sbn
    }

    fn k(&self) -> u32 {
        self.k
    }

    fn add_symbol(&mut self, sym: &SymbolInfo) -> Result<bool, CodecError> {
        if sym.sbn != self.sbn {
            return Err(CodecError::BlockMismatch {
                expected: self.sbn,
                got: sym.sbn,
            });
        }
        let new = self.received.insert(sym.esi);
        if new && sym.esi < self.k {
            self.source_count += 1;
        }
        Ok(new)
    }

    fn symbols_received(&self) -> u32 {
        self.received.len() as u32
    }

    fn all_source_present(&self) -> bool {
        self.source_count == self.k
    }

    fn try_decode(&mut self, fail_sample: bool) -> DecodeOutcome {
        if self.all_source_present() {
            // systematic identity: no elimination, no latency charge
            return DecodeOutcome::Success(None);
        }
        if (self.received.len() as u32) < self.target() {
            return DecodeOutcome::NeedMore;
        }
        self.attempts += 1;
        if fail_sample {
            // one extra symbol must be requested before the next attempt
            self.overhead += 1;
            DecodeOutcome::NeedMore
        } else {
            DecodeOutcome::Success(None)
        }
    }
}
