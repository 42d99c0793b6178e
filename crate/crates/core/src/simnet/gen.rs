//! Seeded random scenario generation for the delivery-semantics test
//! suites: random connected multi-site topologies, mixed-QoI subscribers
//! with random content filters, and optional healed link faults or safe
//! transit-broker crashes. Identical seeds yield identical scenario text.
//!
//! Generation keeps runs verifiable: every feed broker carries a store
//! (so recovery sweeps can restore completeness), faults always heal or
//! provably keep every feed-subscriber pair connected, and COMPLETE
//! subscribers drain faster than the aggregate feed rate.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::synth::symbols_for_source;

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub max_brokers: usize,
    pub max_sites: usize,
    pub max_feeds: usize,
    pub max_symbols_per_feed: usize,
    pub max_subscribers: usize,
    pub allow_fault: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_brokers: 8,
            max_sites: 4,
            max_feeds: 2,
            max_symbols_per_feed: 16,
            max_subscribers: 8,
            allow_fault: true,
        }
    }
}

fn connected_without(
    n: usize,
    edges: &[(usize, usize)],
    removed: usize,
    must_reach: &BTreeSet<usize>,
) -> bool {
    if must_reach.contains(&removed) {
        return false;
    }
    let Some(&start) = must_reach.first() else {
        return true;
    };
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != removed && b != removed {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    must_reach.iter().all(|&v| seen[v])
}

/// Produces deterministic scenario text for `seed`.
pub fn random_scenario_text(seed: u64, opts: &GenOptions) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_brokers = rng.random_range(2..=opts.max_brokers.max(2));
    let n_sites = rng.random_range(1..=opts.max_sites.min(n_brokers).max(1));

    // Random spanning tree plus a few chords.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for v in 1..n_brokers {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    let extra = rng.random_range(0..=2.min(n_brokers.saturating_sub(2)));
    for _ in 0..extra {
        let a = rng.random_range(0..n_brokers);
        let b = rng.random_range(0..n_brokers);
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a.min(b), a.max(b))) {
            edges.push((a.min(b), a.max(b)));
        }
    }

    let n_feeds = rng.random_range(1..=opts.max_feeds.max(1));
    let feed_brokers: Vec<usize> = (0..n_feeds)
        .map(|_| rng.random_range(0..n_brokers))
        .collect();
    let feed_symbol_counts: Vec<usize> = (0..n_feeds)
        .map(|_| rng.random_range(3..=opts.max_symbols_per_feed.max(3)))
        .collect();
    let feed_rates: Vec<u32> = (0..n_feeds).map(|_| rng.random_range(20..=60)).collect();
    let total_rate: u32 = feed_rates.iter().sum();

    let n_subs = rng.random_range(2..=opts.max_subscribers.max(2));
    struct GenSub {
        broker: usize,
        complete: bool,
        filter: String,
        drain: u32,
        start: u64,
        stop: Option<u64>,
    }
    let mut subs: Vec<GenSub> = Vec::new();
    for _ in 0..n_subs {
        let broker = rng.random_range(0..n_brokers);
        let complete = rng.random_bool(0.5);
        let feed_idx = rng.random_range(0..n_feeds);
        let source = format!("SIM{}", feed_idx + 1);
        let symbols = symbols_for_source(&source, feed_symbol_counts[feed_idx]);
        let mut parts: Vec<String> = Vec::new();
        if rng.random_bool(0.6) {
            parts.push(format!("source={source}"));
        }
        match rng.random_range(0..4) {
            0 => {
                // explicit symbol subset
                let count = rng.random_range(1..=3.min(symbols.len()));
                let mut picked = BTreeSet::new();
                while picked.len() < count {
                    picked.insert(symbols[rng.random_range(0..symbols.len())].rendered());
                }
                let list: Vec<String> = picked.into_iter().collect();
                parts.push(format!("symbol={}", list.join(",")));
            }
            1 => {
                let sym = symbols[rng.random_range(0..symbols.len())].rendered();
                let len = rng.random_range(1..=2);
                parts.push(format!("prefix={}", &sym[..len]));
            }
            2 => {
                let types = ["TRADE", "QUOTE", "TRADE,QUOTE"];
                parts.push(format!("type={}", types[rng.random_range(0..types.len())]));
            }
            _ => {}
        }
        let filter = parts.join(" ");
        let drain = if complete {
            total_rate + rng.random_range(50..=150)
        } else {
            rng.random_range(10..=40)
        };
        let start = if complete && rng.random_bool(0.3) {
            rng.random_range(2_000..=5_000)
        } else {
            0
        };
        let stop = if !complete && rng.random_bool(0.2) {
            Some(rng.random_range(10_000..=14_000))
        } else {
            None
        };
        subs.push(GenSub { broker, complete, filter, drain, start, stop });
    }

    // Optional single fault.
    enum Fault {
        None,
        Link { idx: usize, down: u64, up: u64 },
        Crash { broker: usize, at: u64 },
    }
    let mut fault = Fault::None;
    if opts.allow_fault && rng.random_bool(0.7) && !edges.is_empty() {
        let try_crash = rng.random_bool(0.25) && n_brokers > 2;
        if try_crash {
            let mut must_reach: BTreeSet<usize> = feed_brokers.iter().copied().collect();
            must_reach.extend(subs.iter().map(|s| s.broker));
            let candidates: Vec<usize> = (0..n_brokers)
                .filter(|b| {
                    !must_reach.contains(b) && connected_without(n_brokers, &edges, *b, &must_reach)
                })
                .collect();
            if !candidates.is_empty() {
                let broker = candidates[rng.random_range(0..candidates.len())];
                fault = Fault::Crash { broker, at: rng.random_range(6_000..=9_000) };
            }
        }
        if matches!(fault, Fault::None) {
            let idx = rng.random_range(0..edges.len());
            let down = rng.random_range(6_000..=9_000);
            let up = down + rng.random_range(1_500..=4_000);
            fault = Fault::Link { idx, down, up };
        }
    }

    let end_ms = match &fault {
        Fault::Link { up, .. } => (up + 12_000).max(20_000),
        Fault::Crash { at, .. } => (at + 14_000).max(20_000),
        Fault::None => rng.random_range(18_000..=24_000),
    };

    let mut text = String::new();
    let _ = writeln!(text, "# generated scenario, seed {seed}");
    let _ = writeln!(text, "seed {seed}");
    for s in 0..n_sites {
        let _ = writeln!(text, "site S{}", s + 1);
    }
    for b in 0..n_brokers {
        let store = if feed_brokers.contains(&b) { " store=mem" } else { "" };
        let _ = writeln!(text, "broker b{} site=S{}{store}", b + 1, (b % n_sites) + 1);
    }
    for &(a, b) in &edges {
        let latency = rng.random_range(2..=30);
        let bandwidth = rng.random_range(500..=2_000);
        let _ = writeln!(
            text,
            "link b{} b{} latency_ms={latency} bandwidth_mps={bandwidth}",
            a + 1,
            b + 1
        );
    }
    for f in 0..n_feeds {
        let _ = writeln!(
            text,
            "feed f{} broker=b{} source=SIM{} symbols={} rate={} seed={} trade_pct={}",
            f + 1,
            feed_brokers[f] + 1,
            f + 1,
            feed_symbol_counts[f],
            feed_rates[f],
            rng.random_range(1..=1_000_000u64),
            rng.random_range(40..=90)
        );
    }
    for (i, sub) in subs.iter().enumerate() {
        let qoi = if sub.complete { "COMPLETE" } else { "CONFLATED" };
        let mut line = format!(
            "sub s{} broker=b{} qoi={qoi} filter=\"{}\" drain={}",
            i + 1,
            sub.broker + 1,
            sub.filter,
            sub.drain
        );
        if sub.start > 0 {
            let _ = write!(line, " start={}", sub.start);
        }
        if let Some(stop) = sub.stop {
            let _ = write!(line, " stop={stop}");
        }
        let _ = writeln!(text, "{line}");
    }
    match fault {
        Fault::None => {}
        Fault::Link { idx, down, up } => {
            let (a, b) = edges[idx];
            let _ = writeln!(text, "at {down} link_down b{} b{}", a + 1, b + 1);
            let _ = writeln!(text, "at {up} link_up b{} b{}", a + 1, b + 1);
        }
        Fault::Crash { broker, at } => {
            let _ = writeln!(text, "at {at} crash b{}", broker + 1);
        }
    }
    let _ = writeln!(text, "end {end_ms}");
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::load_scenario;

    #[test]
    fn generated_scenarios_parse_and_are_deterministic() {
        let opts = GenOptions::default();
        for seed in 0..30 {
            let text = random_scenario_text(seed, &opts);
            assert_eq!(text, random_scenario_text(seed, &opts), "seed {seed}");
            let scenario = load_scenario(&text).unwrap_or_else(|e| {
                panic!("seed {seed}: {e}\n{text}");
            });
            assert!(!scenario.brokers.is_empty());
            assert!(!scenario.feeds.is_empty());
            // every feed broker carries a store
            for feed in scenario.feeds.values() {
                assert_ne!(
                    scenario.brokers[&feed.broker].store,
                    crate::simnet::StoreKind::None,
                    "seed {seed}: feed broker without store"
                );
            }
        }
    }
}
