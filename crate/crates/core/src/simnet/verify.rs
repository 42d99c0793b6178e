//! Independent log-based verification of the system-wide delivery
//! invariants. Everything here recomputes from the scenario and the raw
//! event log; none of it shares state with the brokers under test, and
//! the shortest-path oracle is a separate all-pairs implementation.
//!
//! Checks:
//! * COMPLETE exactly-once and per-source ascending order;
//! * CONFLATED matching, per-(symbol, source) monotonicity and last-value
//!   completeness at quiescence;
//! * at most one copy of a notification per link (both directions);
//! * interest-driven forwarding: outside reconvergence windows, a copy
//!   crosses a link only toward the tree subtree of an interested, active
//!   subscriber, on the deterministic shortest-path tree of the source's
//!   ingress broker.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::model::filter_matches;
use crate::overlay::BrokerId;

use super::log::LogRecord;
use super::scenario::{Scenario, SubSpec, TimedAction};

/// Reconvergence window after a fault (and after boot) during which
/// routing transients are tolerated by the interest check. Detection of a
/// silent failure alone takes three missed heartbeats.
pub const CONVERGENCE_GRACE_MS: u64 = 5_000;
/// Interest-propagation allowance around subscription stop.
pub const INTEREST_LAG_MS: u64 = 2_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule, self.detail)
    }
}

/// Scenario-level truth about what is alive at an instant.
struct Timeline<'a> {
    scenario: &'a Scenario,
}

impl<'a> Timeline<'a> {
    fn link_up_at(&self, a: &str, b: &str, t: u64) -> bool {
        let mut up = self.scenario.link_between(a, b).is_some();
        for event in &self.scenario.events {
            if event.at_ms > t {
                break;
            }
            match &event.action {
                TimedAction::LinkDown(x, y) if linkeq(x, y, a, b) => up = false,
                TimedAction::LinkUp(x, y) if linkeq(x, y, a, b) => up = true,
                _ => {}
            }
        }
        up
    }

    fn broker_alive_at(&self, id: &str, t: u64) -> bool {
        !self
            .scenario
            .events
            .iter()
            .any(|e| e.at_ms <= t && matches!(&e.action, TimedAction::Crash(b) if b == id))
    }

    /// Alive undirected edges at `t` (latency from the scenario).
    fn edges_at(&self, t: u64) -> BTreeMap<(BrokerId, BrokerId), u32> {
        let mut out = BTreeMap::new();
        for link in &self.scenario.links {
            if self.link_up_at(&link.a, &link.b, t)
                && self.broker_alive_at(&link.a, t)
                && self.broker_alive_at(&link.b, t)
            {
                let key = if link.a < link.b {
                    (link.a.clone(), link.b.clone())
                } else {
                    (link.b.clone(), link.a.clone())
                };
                out.insert(key, link.latency_ms);
            }
        }
        out
    }

    /// True within the reconvergence allowance of boot or any fault.
    fn in_grace(&self, t: u64) -> bool {
        if t < CONVERGENCE_GRACE_MS {
            return true;
        }
        self.scenario
            .events
            .iter()
            .any(|e| e.at_ms <= t && t < e.at_ms + CONVERGENCE_GRACE_MS)
    }
}

fn linkeq(x: &str, y: &str, a: &str, b: &str) -> bool {
    (x == a && y == b) || (x == b && y == a)
}

/// Brute-force all-pairs shortest paths (Floyd-Warshall) plus the same
/// parent rule the brokers use: smallest-id predecessor at optimal
/// distance. Independent of the overlay's Dijkstra.
struct OracleTree {
    parent: BTreeMap<BrokerId, BrokerId>,
    reached: BTreeSet<BrokerId>,
}

impl OracleTree {
    fn compute(
        nodes: &BTreeSet<BrokerId>,
        edges: &BTreeMap<(BrokerId, BrokerId), u32>,
        root: &str,
    ) -> OracleTree {
        let ids: Vec<&BrokerId> = nodes.iter().collect();
        let index: BTreeMap<&BrokerId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let n = ids.len();
        const INF: u64 = u64::MAX / 4;
        let mut dist = vec![vec![INF; n]; n];
        for (i, row) in dist.iter_mut().enumerate() {
            row[i] = 0;
        }
        for ((a, b), latency) in edges {
            let (i, j) = (index[a], index[b]);
            dist[i][j] = dist[i][j].min(u64::from(*latency));
            dist[j][i] = dist[j][i].min(u64::from(*latency));
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[i][k].saturating_add(dist[k][j]);
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        let Some(&r) = index.get(&root.to_string()) else {
            return OracleTree { parent: BTreeMap::new(), reached: BTreeSet::new() };
        };
        let mut parent = BTreeMap::new();
        let mut reached = BTreeSet::new();
        reached.insert(root.to_string());
        for (v, id) in ids.iter().enumerate() {
            if v == r || dist[r][v] >= INF {
                continue;
            }
            reached.insert((*id).clone());
            // Smallest-id optimal predecessor.
            let best = ids
                .iter()
                .enumerate()
                .filter(|(u, uid)| {
                    let key: (BrokerId, BrokerId) = if *uid < id {
                        ((**uid).clone(), (*id).clone())
                    } else {
                        ((*id).clone(), (**uid).clone())
                    };
                    edges
                        .get(&key)
                        .is_some_and(|w| dist[r][*u].saturating_add(u64::from(*w)) == dist[r][v])
                })
                .map(|(_, uid)| (**uid).clone())
                .min();
            if let Some(best) = best {
                parent.insert((*id).clone(), best);
            }
        }
        OracleTree { parent, reached }
    }

    fn is_tree_edge(&self, from: &str, to: &str) -> bool {
        self.parent.get(to).map(|p| p.as_str()) == Some(from)
    }

    fn subtree(&self, node: &str) -> BTreeSet<BrokerId> {
        let mut out: BTreeSet<BrokerId> = BTreeSet::new();
        if !self.reached.contains(node) {
            return out;
        }
        out.insert(node.to_string());
        loop {
            let mut grew = false;
            for (child, parent) in &self.parent {
                if out.contains(parent) && out.insert(child.clone()) {
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        out
    }
}

fn sub_window_contains(spec: &SubSpec, t: u64, lag: u64) -> bool {
    t >= spec.start_ms && t <= spec.stop_ms.unwrap_or(u64::MAX).saturating_add(lag)
}

/// Checks the delivery-semantics invariants against the raw log.
pub fn verify(
    report: &super::MetricsReport,
    scenario: &Scenario,
    log: &[LogRecord],
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let timeline = Timeline { scenario };
    let source_ingress: BTreeMap<String, BrokerId> = scenario
        .feeds
        .values()
        .map(|f| (f.source.clone(), f.broker.clone()))
        .collect();
    let all_stores_present = scenario
        .feeds
        .values()
        .all(|f| scenario.brokers[&f.broker].store != super::StoreKind::None);

    // Publishes, in order, and per-sub deliveries.
    let publishes: Vec<&LogRecord> = log
        .iter()
        .filter(|r| matches!(r, LogRecord::Publish { .. }))
        .collect();
    let mut deliveries: BTreeMap<&str, Vec<&LogRecord>> = BTreeMap::new();
    for record in log {
        if let LogRecord::Deliver { sub, .. } = record {
            deliveries.entry(sub).or_default().push(record);
        }
    }

    for (sub_id, spec) in &scenario.subscribers {
        let delivered = deliveries.get(sub_id.as_str()).cloned().unwrap_or_default();
        let broker_alive_at_end = timeline.broker_alive_at(&spec.broker, u64::MAX / 8);
        let active_to_end = spec.stop_ms.is_none() && broker_alive_at_end;

        // Every delivery must match the filter.
        for record in &delivered {
            let LogRecord::Deliver { note, .. } = record else { unreachable!() };
            if !filter_matches(&spec.filter, &note.stub()) {
                violations.push(Violation {
                    rule: "delivery-matches-filter",
                    detail: format!(
                        "sub {sub_id} received non-matching ({}, {})",
                        note.source, note.seq
                    ),
                });
            }
        }

        match spec.qoi {
            crate::model::Qoi::Complete => {
                // Order: per source ascending in delivery order.
                let mut last_per_source: BTreeMap<&str, u64> = BTreeMap::new();
                let mut seen: HashSet<(String, u64)> = HashSet::new();
                for record in &delivered {
                    let LogRecord::Deliver { note, .. } = record else { unreachable!() };
                    if !seen.insert(note.key()) {
                        violations.push(Violation {
                            rule: "complete-exactly-once",
                            detail: format!(
                                "sub {sub_id} received ({}, {}) more than once",
                                note.source, note.seq
                            ),
                        });
                    }
                    let last = last_per_source.entry(note.source.as_str()).or_insert(0);
                    if note.seq <= *last {
                        violations.push(Violation {
                            rule: "complete-order",
                            detail: format!(
                                "sub {sub_id}: source {} seq {} delivered after {}",
                                note.source, note.seq, last
                            ),
                        });
                    }
                    *last = (*last).max(note.seq);
                }
                // Completeness at quiescence.
                if active_to_end && all_stores_present {
                    let mut expected: BTreeSet<(String, u64)> = BTreeSet::new();
                    for record in &publishes {
                        let LogRecord::Publish { note, .. } = record else { unreachable!() };
                        if filter_matches(&spec.filter, &note.stub()) {
                            expected.insert(note.key());
                        }
                    }
                    let got: BTreeSet<(String, u64)> =
                        delivered
                            .iter()
                            .map(|r| {
                                let LogRecord::Deliver { note, .. } = r else { unreachable!() };
                                note.key()
                            })
                            .collect();
                    for missing in expected.difference(&got).take(5) {
                        violations.push(Violation {
                            rule: "complete-no-gaps",
                            detail: format!(
                                "sub {sub_id} never received ({}, {})",
                                missing.0, missing.1
                            ),
                        });
                    }
                    for extra in got.difference(&expected).take(5) {
                        violations.push(Violation {
                            rule: "complete-no-extras",
                            detail: format!(
                                "sub {sub_id} received unpublished ({}, {})",
                                extra.0, extra.1
                            ),
                        });
                    }
                }
            }
            crate::model::Qoi::Conflated => {
                // Per (symbol, source) strictly increasing.
                let mut last: BTreeMap<(String, String), u64> = BTreeMap::new();
                for record in &delivered {
                    let LogRecord::Deliver { note, .. } = record else { unreachable!() };
                    let key = (note.symbol.rendered(), note.source.clone());
                    let prev = last.entry(key).or_insert(0);
                    if note.seq <= *prev {
                        violations.push(Violation {
                            rule: "conflated-monotonic",
                            detail: format!(
                                "sub {sub_id}: {} from {} went backward ({} after {})",
                                note.symbol, note.source, note.seq, prev
                            ),
                        });
                    }
                    *prev = (*prev).max(note.seq);
                }
                // Last-value completeness at quiescence.
                if active_to_end {
                    let mut last_published: BTreeMap<(String, String), u64> = BTreeMap::new();
                    for record in &publishes {
                        let LogRecord::Publish { note, .. } = record else { unreachable!() };
                        if filter_matches(&spec.filter, &note.stub()) {
                            last_published
                                .insert((note.symbol.rendered(), note.source.clone()), note.seq);
                        }
                    }
                    let mut last_delivered: BTreeMap<(String, String), u64> = BTreeMap::new();
                    for record in &delivered {
                        let LogRecord::Deliver { note, .. } = record else { unreachable!() };
                        last_delivered
                            .insert((note.symbol.rendered(), note.source.clone()), note.seq);
                    }
                    for (key, want) in &last_published {
                        let got = last_delivered.get(key).copied().unwrap_or(0);
                        if got != *want {
                            violations.push(Violation {
                                rule: "conflated-last-value",
                                detail: format!(
                                    "sub {sub_id}: {} from {} ended at seq {got}, last published {want}",
                                    key.0, key.1
                                ),
                            });
                        }
                    }
                }
            }
        }
    }

    // Per-link single copy, both directions combined.
    let mut link_copies: HashMap<(String, String, String, u64), u64> = HashMap::new();
    for record in log {
        if let LogRecord::LinkPub { from, to, note, .. } = record {
            let (x, y) = if from < to { (from, to) } else { (to, from) };
            *link_copies
                .entry((x.clone(), y.clone(), note.source.clone(), note.seq))
                .or_insert(0) += 1;
        }
    }
    let mut dup_links: Vec<_> = link_copies
        .into_iter()
        .filter(|(_, count)| *count > 1)
        .collect();
    dup_links.sort();
    for ((a, b, source, seq), count) in dup_links.into_iter().take(10) {
        violations.push(Violation {
            rule: "link-single-copy",
            detail: format!("({source}, {seq}) crossed link {a}-{b} {count} times"),
        });
    }

    // Interest-driven forwarding along the ingress tree.
    let nodes: BTreeSet<BrokerId> = scenario.brokers.keys().cloned().collect();
    let mut tree_cache: HashMap<(u64, String), OracleTree> = HashMap::new();
    let mut fault_times: Vec<u64> = vec![0];
    fault_times.extend(scenario.events.iter().map(|e| e.at_ms));
    let epoch_of = |t: u64| -> u64 {
        *fault_times
            .iter()
            .filter(|&&ft| ft <= t)
            .max()
            .unwrap_or(&0)
    };
    for record in log {
        let LogRecord::LinkPub { t, from, to, note } = record else {
            continue;
        };
        if timeline.in_grace(*t) {
            continue;
        }
        let Some(root) = source_ingress.get(&note.source) else {
            violations.push(Violation {
                rule: "interest-driven",
                detail: format!("copy of unknown source {} on {from}-{to}", note.source),
            });
            continue;
        };
        let epoch = epoch_of(*t);
        let tree = tree_cache
            .entry((epoch, root.clone()))
            .or_insert_with(|| OracleTree::compute(&nodes, &timeline.edges_at(epoch), root));
        if !tree.is_tree_edge(from, to) {
            violations.push(Violation {
                rule: "tree-forwarding",
                detail: format!(
                    "({}, {}) crossed {from}->{to} at {t}, not a tree edge of root {root}",
                    note.source, note.seq
                ),
            });
            continue;
        }
        let subtree = tree.subtree(to);
        let interested = scenario.subscribers.iter().any(|(_, spec)| {
            subtree.contains(&spec.broker)
                && sub_window_contains(spec, *t, INTEREST_LAG_MS)
                && filter_matches(&spec.filter, &note.stub())
        });
        if !interested {
            violations.push(Violation {
                rule: "interest-driven",
                detail: format!(
                    "({}, {}) crossed {from}->{to} at {t} with no matching subscriber beyond",
                    note.source, note.seq
                ),
            });
        }
    }

    // Report-internal conservation.
    for (sub_id, sub_report) in &report.per_sub {
        if sub_report.qoi == "CONFLATED"
            && sub_report.matched != sub_report.delivered + sub_report.dropped_superseded
        {
            violations.push(Violation {
                rule: "conflated-conservation",
                detail: format!(
                    "sub {sub_id}: matched {} != delivered {} + dropped {}",
                    sub_report.matched, sub_report.delivered, sub_report.dropped_superseded
                ),
            });
        }
    }
    for (feed_id, feed_report) in &report.per_feed {
        if feed_report.parsed != feed_report.accepted + feed_report.rejected {
            violations.push(Violation {
                rule: "feed-conservation",
                detail: format!(
                    "feed {feed_id}: parsed {} != accepted {} + rejected {}",
                    feed_report.parsed, feed_report.accepted, feed_report.rejected
                ),
            });
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::super::{load_scenario, run_scenario};
    use super::*;
    use crate::model::{EventType, InstrumentClass, SymbolKey};
    use crate::simnet::log::NoteId;

    const SCENARIO: &str = "\
seed 1
site FRA
site MIL
broker b1 site=FRA store=mem
broker b2 site=MIL
link b1 b2 latency_ms=5 bandwidth_mps=1000
feed f1 broker=b1 source=SIM1 symbols=4 rate=40 seed=7 trade_pct=70
sub s1 broker=b2 qoi=COMPLETE filter=\"source=SIM1\" drain=200
sub s2 broker=b2 qoi=CONFLATED filter=\"source=SIM1\" drain=30
end 6000
";

    #[test]
    fn healthy_run_verifies_clean() {
        let scenario = load_scenario(SCENARIO).unwrap();
        let run = run_scenario(&scenario);
        let violations = verify(&run.report, &scenario, &run.log);
        assert!(violations.is_empty(), "unexpected violations: {violations:?}");
    }

    #[test]
    fn injected_duplicate_link_copy_is_flagged() {
        let scenario = load_scenario(SCENARIO).unwrap();
        let run = run_scenario(&scenario);
        let mut log = run.log.clone();
        let dup = log
            .iter()
            .find(|r| matches!(r, LogRecord::LinkPub { .. }))
            .cloned()
            .expect("some frame crossed");
        log.push(dup);
        let violations = verify(&run.report, &scenario, &log);
        assert!(
            violations.iter().any(|v| v.rule == "link-single-copy"),
            "{violations:?}"
        );
    }

    #[test]
    fn injected_delivery_gap_names_the_missing_seq() {
        let scenario = load_scenario(SCENARIO).unwrap();
        let run = run_scenario(&scenario);
        let mut log = run.log.clone();
        // Remove one COMPLETE delivery.
        let idx = log
            .iter()
            .position(|r| matches!(r, LogRecord::Deliver { sub, .. } if sub == "s1"))
            .expect("s1 delivered something");
        let removed = log.remove(idx);
        let LogRecord::Deliver { note, .. } = removed else { unreachable!() };
        let violations = verify(&run.report, &scenario, &log);
        let gap = violations
            .iter()
            .find(|v| v.rule == "complete-no-gaps")
            .expect("gap must be reported");
        assert!(gap.detail.contains(&note.source), "{gap}");
        assert!(gap.detail.contains(&note.seq.to_string()), "{gap}");
    }

    #[test]
    fn stale_conflated_delivery_is_flagged() {
        let scenario = load_scenario(SCENARIO).unwrap();
        let run = run_scenario(&scenario);
        let mut log = run.log.clone();
        // Append a stale re-delivery for s2: seq below the last delivered.
        let last = log
            .iter()
            .rev()
            .find_map(|r| match r {
                LogRecord::Deliver { sub, note, .. } if sub == "s2" => Some(note.clone()),
                _ => None,
            })
            .expect("s2 delivered something");
        log.push(LogRecord::Deliver {
            t: run.report.quiesced_ms,
            sub: "s2".into(),
            note: NoteId {
                source: last.source.clone(),
                seq: 1,
                symbol: last.symbol.clone(),
                event_type: EventType::Trade,
                class: InstrumentClass::Equity,
            },
            latency_ms: 0,
        });
        let violations = verify(&run.report, &scenario, &log);
        assert!(
            violations.iter().any(|v| v.rule == "conflated-monotonic"),
            "{violations:?}"
        );
    }

    #[test]
    fn off_tree_crossing_is_flagged() {
        let scenario = load_scenario(SCENARIO).unwrap();
        let run = run_scenario(&scenario);
        let mut log = run.log.clone();
        log.push(LogRecord::LinkPub {
            t: scenario.end_ms - 1,
            from: "b2".into(),
            to: "b1".into(), // backwards: b1 is the ingress root
            note: NoteId {
                source: "SIM1".into(),
                seq: 999_999,
                symbol: SymbolKey::parse("AAA.SIM").unwrap(),
                event_type: EventType::Trade,
                class: InstrumentClass::Equity,
            },
        });
        let violations = verify(&run.report, &scenario, &log);
        assert!(
            violations.iter().any(|v| v.rule == "tree-forwarding"),
            "{violations:?}"
        );
    }
}
