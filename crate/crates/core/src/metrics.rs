//! Result collection and statistics: per-session records, logical-group
//! aggregation, FCT statistics (mean / nearest-rank p99 / CDF), decode
//! fraction, ranked goodput, Jain fairness, CSV export, and mean ± 95% CI
//! across seeds.

use std::io::Write as IoWrite;

use thiserror::Error;

use crate::packet::TransferMode;
use crate::sim::{Protocol, SessionResult};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("statistic requires a non-empty record set")]
    EmptySet,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One finished logical transfer. Sessions sharing a `group` (multi-unicast
/// writes, daisy chains) are merged into a single record whose FCT spans the
/// earliest start to the latest end.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub session_id: u64,
    pub protocol: Protocol,
    pub mode: TransferMode,
    /// Application object size: for grouped sessions this is the size of one
    /// copy, not the sum over stages/replicas.
    pub size_bytes: u64,
    pub start_ns: u64,
    pub end_ns: u64,
    pub trimmed: u64,
    pub overhead_symbols: u64,
    pub decode_invoked: bool,
    pub unnecessary_symbols: u64,
    pub background: bool,
}

impl SessionRecord {
    pub fn fct_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }

    /// Application goodput over the flow's lifetime (repair overhead and
    /// headers excluded by construction: only object bytes count).
    pub fn goodput_bps(&self) -> f64 {
        let fct = self.fct_ns();
        if fct == 0 {
            return 0.0;
        }
        self.size_bytes as f64 * 8.0 / (fct as f64 * 1e-9)
    }
}

/// Converts raw simulation results to records, merging grouped sessions.
/// Sessions that never completed (stopped or still running) are skipped.
pub fn collect(results: &[SessionResult]) -> Vec<SessionRecord> {
    let mut records: Vec<SessionRecord> = Vec::new();
    let mut group_slot: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for r in results {
        let (Some(start), Some(end)) = (r.start_ns, r.end_ns) else {
            continue;
        };
        if let Some(g) = r.group {
            if let Some(&i) = group_slot.get(&g) {
                let rec = &mut records[i];
                rec.start_ns = rec.start_ns.min(start);
                rec.end_ns = rec.end_ns.max(end);
                rec.size_bytes = rec.size_bytes.max(r.size_bytes);
                rec.trimmed += r.trimmed;
                rec.overhead_symbols += r.overhead_symbols;
                rec.decode_invoked |= r.decode_invoked;
                rec.unnecessary_symbols += r.unnecessary_symbols;
                continue;
            }
            group_slot.insert(g, records.len());
        }
        records.push(SessionRecord {
            session_id: r.group.unwrap_or(r.id),
            protocol: r.protocol,
            mode: r.mode,
            size_bytes: r.size_bytes,
            start_ns: start,
            end_ns: end,
            trimmed: r.trimmed,
            overhead_symbols: r.overhead_symbols,
            decode_invoked: r.decode_invoked,
            unnecessary_symbols: r.unnecessary_symbols,
            background: r.background,
        });
    }
    records.sort_by_key(|r| r.session_id);
    records
}

pub struct FctStats {
    pub mean_ns: f64,
    pub p99_ns: u64,
    /// Empirical CDF sample points: (fct_ns, cumulative fraction).
    pub cdf: Vec<(u64, f64)>,
}

/// Nearest-rank percentile: the ceil(q·n)-th smallest value (1-indexed).
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// FCT statistics over the records selected by `filter`.
pub fn fct_stats(
    records: &[SessionRecord],
    filter: impl Fn(&SessionRecord) -> bool,
) -> Result<FctStats, MetricsError> {
    let mut fcts: Vec<u64> = records
        .iter()
        .filter(|r| filter(r))
        .map(|r| r.fct_ns())
        .collect();
    if fcts.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    fcts.sort_unstable();
    let n = fcts.len();
    let mean_ns = fcts.iter().map(|&f| f as f64).sum::<f64>() / n as f64;
    let cdf = fcts
        .iter()
        .enumerate()
        .map(|(i, &f)| (f, (i + 1) as f64 / n as f64))
        .collect();
    Ok(FctStats {
        mean_ns,
        p99_ns: nearest_rank(&fcts, 0.99),
        cdf,
    })
}

/// Fraction of selected sessions that had to invoke the decoder.
pub fn decode_fraction(
    records: &[SessionRecord],
    filter: impl Fn(&SessionRecord) -> bool,
) -> f64 {
    let sel: Vec<&SessionRecord> = records.iter().filter(|r| filter(r)).collect();
    if sel.is_empty() {
        return 0.0;
    }
    sel.iter().filter(|r| r.decode_invoked).count() as f64 / sel.len() as f64
}

/// Goodputs sorted non-increasing (plot-ready ranked series).
pub fn ranked_goodput(records: &[SessionRecord]) -> Vec<f64> {
    let mut g: Vec<f64> = records.iter().map(|r| r.goodput_bps()).collect();
    g.sort_by(|a, b| b.partial_cmp(a).unwrap());
    g
}

/// Jain's fairness index: (Σx)² / (n·Σx²); 1.0 = perfectly fair.
pub fn jain_fairness(shares: &[f64]) -> f64 {
    assert!(!shares.is_empty());
    let sum: f64 = shares.iter().sum();
    let sq: f64 = shares.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return 1.0;
    }
    sum * sum / (shares.len() as f64 * sq)
}

/// Two-sided 97.5% Student-t quantiles for small df (used for 95% CIs across
/// seed repetitions); falls back to the normal quantile above df 30.
fn t_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        TABLE[df - 1]
    } else {
        1.96
    }
}

/// Mean and 95% confidence half-width across repetitions (seeds).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = t_975(values.len() - 1) * (var / n).sqrt();
    (mean, half)
}

pub const CSV_HEADER: &str = "session_id,protocol,mode,size_bytes,start_ns,end_ns,fct_ns,goodput_bps,trimmed,overhead_symbols,decode_invoked,unnecessary_symbols";

/// Writes records in stable (session_id) order. Deterministic inputs yield
/// byte-identical output.
pub fn export_csv(records: &[SessionRecord], mut out: impl IoWrite) -> Result<(), MetricsError> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut sorted: Vec<&SessionRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.session_id);
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.1},{},{},{},{}",
            r.session_id,
            r.protocol,
            r.mode,
            r.size_bytes,
            r.start_ns,
            r.end_ns,
            r.fct_ns(),
            r.goodput_bps(),
            r.trimmed,
            r.overhead_symbols,
            r.decode_invoked as u8,
            r.unnecessary_symbols,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, start_ms: u64, end_ms: u64, size: u64) -> SessionRecord {
        SessionRecord {
            session_id: id,
            protocol: Protocol::Scdp,
            mode: TransferMode::Unicast,
            size_bytes: size,
            start_ns: start_ms * 1_000_000,
            end_ns: end_ms * 1_000_000,
            trimmed: 0,
            overhead_symbols: 0,
            decode_invoked: false,
            unnecessary_symbols: 0,
            background: false,
        }
    }

    #[test]
    fn single_record_mean_equals_p99() {
        let r = vec![rec(1, 0, 1, 1000)];
        let s = fct_stats(&r, |_| true).unwrap();
        assert_eq!(s.mean_ns, 1e6);
        assert_eq!(s.p99_ns, 1_000_000);
    }

    #[test]
    fn p99_nearest_rank_of_100() {
        // FCTs 1..100 ms -> p99 = 99 ms under nearest-rank
        let r: Vec<SessionRecord> = (1..=100).map(|i| rec(i, 0, i, 1000)).collect();
        let s = fct_stats(&r, |_| true).unwrap();
        assert_eq!(s.p99_ns, 99 * 1_000_000);
        assert_eq!(s.cdf.len(), 100);
        assert_eq!(s.cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn empty_filter_is_an_error() {
        let r = vec![rec(1, 0, 1, 1000)];
        assert!(matches!(
            fct_stats(&r, |_| false),
            Err(MetricsError::EmptySet)
        ));
    }

    #[test]
    fn decode_fraction_counts_flagged_sessions() {
        let mut r: Vec<SessionRecord> = (1..=10).map(|i| rec(i, 0, 1, 1000)).collect();
        r[3].decode_invoked = true;
        r[7].decode_invoked = true;
        assert_eq!(decode_fraction(&r, |_| true), 0.2);
        assert_eq!(decode_fraction(&r, |_| false), 0.0);
    }

    #[test]
    fn ranked_goodput_is_non_increasing() {
        let r: Vec<SessionRecord> = (1..=20).map(|i| rec(i, 0, i, 1_000_000)).collect();
        let g = ranked_goodput(&r);
        assert!(g.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn group_aggregation_spans_stages() {
        use crate::sim::SessionResult;
        let base = SessionResult {
            id: 0,
            protocol: Protocol::Ndp,
            mode: TransferMode::Unicast,
            size_bytes: 1_000_000,
            group: Some(7),
            background: false,
            start_ns: None,
            end_ns: None,
            trimmed: 1,
            overhead_symbols: 0,
            decode_invoked: false,
            unnecessary_symbols: 0,
            pulls_sent: 0,
            sent_instances: 0,
            delivered_instances: 0,
            dropped_instances: 0,
            window_bytes: 0,
            block_reports: vec![],
        };
        let mk = |id, s, e| {
            let mut r = base.clone();
            r.id = id;
            r.start_ns = Some(s);
            r.end_ns = Some(e);
            r
        };
        let recs = collect(&[mk(1, 0, 5), mk(2, 3, 9), mk(3, 8, 12)]);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].session_id, 7);
        assert_eq!((recs[0].start_ns, recs[0].end_ns), (0, 12));
        assert_eq!(recs[0].size_bytes, 1_000_000);
        assert_eq!(recs[0].trimmed, 3);
    }

    #[test]
    fn jain_index_bounds() {
        assert!((jain_fairness(&[1.0, 1.0, 1.0, 1.0]) - 1.0).abs() < 1e-12);
        let skew = jain_fairness(&[4.0, 0.0, 0.0, 0.0]);
        assert!((skew - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mean_ci_five_seeds() {
        // 5 values -> t(4) = 2.776
        let v = [10.0, 12.0, 11.0, 9.0, 13.0];
        let (mean, half) = mean_ci(&v);
        assert_eq!(mean, 11.0);
        let sd = (2.5f64).sqrt(); // sample variance of the set is 2.5
        let want = 2.776 * sd / (5.0f64).sqrt();
        assert!((half - want).abs() < 1e-9);
    }

    #[test]
    fn csv_is_deterministic_and_header_only_when_empty() {
        let mut buf = Vec::new();
        export_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));

        let r = vec![rec(2, 0, 2, 3000), rec(1, 0, 1, 1500)];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        export_csv(&r, &mut a).unwrap();
        export_csv(&r, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("1,scdp,unicast,1500,"));
        assert!(lines.next().unwrap().starts_with("2,scdp,unicast,3000,"));
    }
}
