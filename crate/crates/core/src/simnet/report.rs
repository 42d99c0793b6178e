//! The measured output of a run: per-link counts, per-subscriber delivery
//! metrics with latency percentiles, per-feed conservation counters,
//! convergence times and totals. Rendered both as a human-readable table
//! and as machine-readable `key=value` records; both renderings are
//! byte-deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completeness {
    Pass,
    Fail,
    /// Subscriber stopped early or its broker crashed; the contract is
    /// quiescence-scoped and cannot be evaluated.
    NotEvaluated,
}

impl Completeness {
    pub fn name(self) -> &'static str {
        match self {
            Completeness::Pass => "PASS",
            Completeness::Fail => "FAIL",
            Completeness::NotEvaluated => "NOT_EVALUATED",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubReport {
    pub qoi: String,
    pub matched: u64,
    pub delivered: u64,
    pub dropped_superseded: u64,
    pub dup_suppressed: u64,
    pub p50_latency_ms: u64,
    pub p99_latency_ms: u64,
    pub completeness: Option<Completeness>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedReport {
    pub parsed: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejects_by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Totals {
    pub published: u64,
    pub delivered: u64,
    pub pub_link_crossings: u64,
    pub inter_site_pub_crossings: u64,
    pub lost_pub_copies: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    /// (link "a-b", direction "a>b") -> frame kind -> count.
    pub per_link: BTreeMap<(String, String), BTreeMap<String, u64>>,
    pub per_sub: BTreeMap<String, SubReport>,
    pub per_feed: BTreeMap<String, FeedReport>,
    /// (fault time, first time all live views were equal again).
    pub convergence: Vec<(u64, u64)>,
    pub totals: Totals,
    pub end_ms: u64,
    /// Simulated instant at which the run actually went quiescent.
    pub quiesced_ms: u64,
}

/// Nearest-rank percentile on a sorted slice; 0 for empty input.
pub fn percentile(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct * (sorted.len() as u64 - 1)) / 100;
    sorted[rank as usize]
}

impl MetricsReport {
    /// Machine-readable line-oriented rendering.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for ((link, dir), kinds) in &self.per_link {
            for (kind, count) in kinds {
                let _ = writeln!(out, "link.{link}.{dir}.{kind}={count}");
            }
        }
        for (feed, report) in &self.per_feed {
            let _ = writeln!(out, "feed.{feed}.parsed={}", report.parsed);
            let _ = writeln!(out, "feed.{feed}.accepted={}", report.accepted);
            let _ = writeln!(out, "feed.{feed}.rejected={}", report.rejected);
            for (kind, count) in &report.rejects_by_kind {
                let _ = writeln!(out, "feed.{feed}.reject.{kind}={count}");
            }
        }
        for (sub, report) in &self.per_sub {
            let _ = writeln!(out, "sub.{sub}.qoi={}", report.qoi);
            let _ = writeln!(out, "sub.{sub}.matched={}", report.matched);
            let _ = writeln!(out, "sub.{sub}.delivered={}", report.delivered);
            let _ = writeln!(
                out,
                "sub.{sub}.dropped_superseded={}",
                report.dropped_superseded
            );
            let _ = writeln!(out, "sub.{sub}.dup_suppressed={}", report.dup_suppressed);
            let _ = writeln!(out, "sub.{sub}.p50_latency_ms={}", report.p50_latency_ms);
            let _ = writeln!(out, "sub.{sub}.p99_latency_ms={}", report.p99_latency_ms);
            if let Some(verdict) = report.completeness {
                let _ = writeln!(out, "sub.{sub}.completeness={}", verdict.name());
            }
        }
        for (fault_t, conv_t) in &self.convergence {
            let _ = writeln!(out, "convergence.{fault_t}={conv_t}");
        }
        let t = &self.totals;
        let _ = writeln!(out, "total.published={}", t.published);
        let _ = writeln!(out, "total.delivered={}", t.delivered);
        let _ = writeln!(out, "total.pub_link_crossings={}", t.pub_link_crossings);
        let _ = writeln!(
            out,
            "total.inter_site_pub_crossings={}",
            t.inter_site_pub_crossings
        );
        let _ = writeln!(out, "total.lost_pub_copies={}", t.lost_pub_copies);
        let _ = writeln!(out, "total.end_ms={}", self.end_ms);
        let _ = writeln!(out, "total.quiesced_ms={}", self.quiesced_ms);
        out
    }

    /// Human-readable table rendering.
    pub fn render_human(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== feeds ==");
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "feed", "parsed", "accepted", "rejected");
        for (feed, r) in &self.per_feed {
            let _ = writeln!(
                out,
                "{feed:<10} {:>9} {:>9} {:>9}",
                r.parsed, r.accepted, r.rejected
            );
        }
        let _ = writeln!(out, "\n== subscribers ==");
        let _ = writeln!(
            out,
            "{:<10} {:<9} {:>9} {:>9} {:>9} {:>8} {:>8}  {}",
            "sub", "qoi", "matched", "delivered", "dropped", "p50ms", "p99ms", "completeness"
        );
        for (sub, r) in &self.per_sub {
            let _ = writeln!(
                out,
                "{sub:<10} {:<9} {:>9} {:>9} {:>9} {:>8} {:>8}  {}",
                r.qoi,
                r.matched,
                r.delivered,
                r.dropped_superseded,
                r.p50_latency_ms,
                r.p99_latency_ms,
                r.completeness.map(|c| c.name()).unwrap_or("-")
            );
        }
        let _ = writeln!(out, "\n== links (frames by kind) ==");
        for ((link, dir), kinds) in &self.per_link {
            let counts: Vec<String> = kinds.iter().map(|(k, c)| format!("{k}={c}")).collect();
            let _ = writeln!(out, "{link:<12} {dir:<10} {}", counts.join(" "));
        }
        if !self.convergence.is_empty() {
            let _ = writeln!(out, "\n== convergence ==");
            for (fault_t, conv_t) in &self.convergence {
                let _ = writeln!(
                    out,
                    "event at {fault_t} ms -> views equal at {conv_t} ms ({} ms)",
                    conv_t - fault_t
                );
            }
        }
        let t = &self.totals;
        let _ = writeln!(out, "\n== totals ==");
        let _ = writeln!(
            out,
            "published={} delivered={} pub_crossings={} inter_site={} lost={}",
            t.published,
            t.delivered,
            t.pub_link_crossings,
            t.inter_site_pub_crossings,
            t.lost_pub_copies
        );
        let _ = writeln!(out, "end_ms={} quiesced_ms={}", self.end_ms, self.quiesced_ms);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_is_nearest_rank() {
        assert_eq!(percentile(&[], 50), 0);
        assert_eq!(percentile(&[7], 99), 7);
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50), 50);
        assert_eq!(percentile(&v, 99), 99);
        assert_eq!(percentile(&v, 0), 1);
        assert_eq!(percentile(&v, 100), 100);
    }

    #[test]
    fn renderings_are_deterministic() {
        let mut report = MetricsReport::default();
        report
            .per_link
            .entry(("b1-b2".into(), "b1>b2".into()))
            .or_default()
            .insert("PUB".into(), 5);
        report.per_sub.insert(
            "s1".into(),
            SubReport {
                qoi: "COMPLETE".into(),
                matched: 5,
                delivered: 5,
                completeness: Some(Completeness::Pass),
                ..SubReport::default()
            },
        );
        assert_eq!(report.render_records(), report.render_records());
        assert!(report.render_records().contains("sub.s1.completeness=PASS"));
        assert!(report.render_human().contains("COMPLETE"));
    }
}
