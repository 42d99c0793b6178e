//! Per-session delivery state: the two QoI lanes.
//!
//! COMPLETE is lossless: arrivals pass a per-source duplicate gate, sit in
//! a short reorder hold (so copies taking a new path after a failure are
//! released in seq order), then move through unbounded staging into a
//! bounded credit-gated queue. CONFLATED is keep-latest per symbol: a
//! pending slot is replaced in place by fresher notifications and stale
//! arrivals are dropped, so delivered order per symbol never goes
//! backward.

use std::collections::{BTreeMap, VecDeque};

use crate::model::{EventNotification, Qoi, Subscription, SymbolKey};

use super::wire::PeerKind;
use super::{LinkId, SessionId};

/// Per-session delivery accounting; drives the report's conservation
/// checks (matched = delivered + dropped_superseded at quiescence).
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SessionCounters {
    /// Accepted into a lane (first sighting of a (source, seq)).
    pub matched: u64,
    /// Handed to the consumer by drain.
    pub delivered: u64,
    /// Conflated away: replaced in a pending slot or stale on arrival.
    pub dropped_superseded: u64,
    /// Duplicate copies suppressed by the COMPLETE per-source gate.
    pub dup_suppressed: u64,
}

#[derive(Debug)]
struct CompleteLane {
    /// Reorder hold: per source, seq -> (arrived_at_ms, notification).
    pending: BTreeMap<String, BTreeMap<u64, (u64, EventNotification)>>,
    /// Released but not yet admitted to the queue (unbounded).
    staging: VecDeque<EventNotification>,
    /// Bounded delivery queue; admission consumes one credit.
    queue: VecDeque<EventNotification>,
    credits: u32,
    /// Highest seq released per source; the duplicate gate.
    horizon: BTreeMap<String, u64>,
}

/// Conflation key: per (symbol, source). Symbols fed by two sources keep
/// one slot per stream so one source's final value can never be conflated
/// away by the other's.
type ConflationKey = (SymbolKey, String);

#[derive(Debug, Default)]
struct ConflatedLane {
    /// Keys with a pending notification, in first-arrival order.
    order: VecDeque<ConflationKey>,
    slots: BTreeMap<ConflationKey, EventNotification>,
    /// Highest seq seen per key (pending or delivered); the staleness
    /// gate.
    last_seq: BTreeMap<ConflationKey, u64>,
}

/// One attached peer: an embedded or link-bound client, a neighbor link's
/// control state lives elsewhere. Sessions own subscriptions and the
/// delivery lanes.
#[derive(Debug)]
pub struct Session {
    pub id: SessionId,
    pub peer: PeerKind,
    /// Present for link-bound (wire) sessions.
    pub link: Option<LinkId>,
    pub subscriptions: BTreeMap<u64, Subscription>,
    complete: CompleteLane,
    conflated: ConflatedLane,
    counters: SessionCounters,
    queue_capacity: usize,
    reorder_hold_ms: u64,
}

impl Session {
    pub fn new(
        id: SessionId,
        peer: PeerKind,
        link: Option<LinkId>,
        queue_capacity: usize,
        reorder_hold_ms: u64,
    ) -> Self {
        Session {
            id,
            peer,
            link,
            subscriptions: BTreeMap::new(),
            complete: CompleteLane {
                pending: BTreeMap::new(),
                staging: VecDeque::new(),
                queue: VecDeque::new(),
                credits: queue_capacity as u32,
                horizon: BTreeMap::new(),
            },
            conflated: ConflatedLane::default(),
            counters: SessionCounters::default(),
            queue_capacity,
            reorder_hold_ms,
        }
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    /// Undelivered load across both lanes.
    pub fn backlog(&self) -> usize {
        self.complete.pending.values().map(|m| m.len()).sum::<usize>()
            + self.complete.staging.len()
            + self.complete.queue.len()
            + self.conflated.slots.len()
    }

    pub fn grant_credits(&mut self, n: u32) {
        self.complete.credits = self.complete.credits.saturating_add(n);
    }

    /// Accepts a matched notification into the lane selected by the
    /// strongest matching subscription's QoI.
    pub fn enqueue(&mut self, n: EventNotification, qoi: Qoi, now_ms: u64) {
        match qoi {
            Qoi::Complete => self.enqueue_complete(n, now_ms),
            Qoi::Conflated => self.enqueue_conflated(n),
        }
    }

    fn enqueue_complete(&mut self, n: EventNotification, now_ms: u64) {
        let lane = &mut self.complete;
        let horizon = lane.horizon.get(&n.source).copied().unwrap_or(0);
        if n.seq <= horizon {
            self.counters.dup_suppressed += 1;
            return;
        }
        let per_source = lane.pending.entry(n.source.clone()).or_default();
        if per_source.contains_key(&n.seq) {
            self.counters.dup_suppressed += 1;
            return;
        }
        per_source.insert(n.seq, (now_ms, n));
        self.counters.matched += 1;
    }

    fn enqueue_conflated(&mut self, n: EventNotification) {
        let lane = &mut self.conflated;
        let key = (n.symbol.clone(), n.source.clone());
        let last = lane.last_seq.get(&key).copied().unwrap_or(0);
        if n.seq <= last {
            // Stale relative to something already pending or delivered.
            self.counters.matched += 1;
            self.counters.dropped_superseded += 1;
            return;
        }
        lane.last_seq.insert(key.clone(), n.seq);
        self.counters.matched += 1;
        if let Some(slot) = lane.slots.get_mut(&key) {
            *slot = n;
            self.counters.dropped_superseded += 1;
        } else {
            lane.order.push_back(key.clone());
            lane.slots.insert(key, n);
        }
    }

    /// Moves reorder-held notifications whose hold has expired into the
    /// queue, ascending per source, never past a younger hold. Called from
    /// the broker tick.
    pub fn release_due(&mut self, now_ms: u64) {
        let hold = self.reorder_hold_ms;
        let lane = &mut self.complete;
        for (source, pending) in &mut lane.pending {
            while let Some((&seq, &(arrived, _))) = pending.first_key_value() {
                if now_ms < arrived + hold {
                    break;
                }
                let (_, n) = pending.remove(&seq).unwrap();
                lane.horizon.insert(source.clone(), seq);
                lane.staging.push_back(n);
            }
        }
        lane.pending.retain(|_, m| !m.is_empty());
        // Admit staged notifications while credits and capacity allow.
        while !lane.staging.is_empty() && lane.credits > 0 && lane.queue.len() < self.queue_capacity
        {
            lane.queue.push_back(lane.staging.pop_front().unwrap());
            lane.credits -= 1;
        }
    }

    /// Removes and returns up to `max` notifications: the COMPLETE queue
    /// in FIFO order first, then surviving conflation slots in
    /// first-arrival order. Draining replenishes COMPLETE credits.
    pub fn drain(&mut self, max: usize, now_ms: u64) -> Vec<EventNotification> {
        self.release_due(now_ms);
        let mut out = Vec::new();
        while out.len() < max {
            if let Some(n) = self.complete.queue.pop_front() {
                self.complete.credits = (self.complete.credits + 1)
                    .min(self.queue_capacity as u32);
                // Backfill the freed slot immediately.
                if let Some(staged) = self.complete.staging.pop_front() {
                    if self.complete.credits > 0 {
                        self.complete.queue.push_back(staged);
                        self.complete.credits -= 1;
                    } else {
                        self.complete.staging.push_front(staged);
                    }
                }
                out.push(n);
            } else {
                break;
            }
        }
        while out.len() < max {
            let Some(key) = self.conflated.order.pop_front() else {
                break;
            };
            let n = self
                .conflated
                .slots
                .remove(&key)
                .expect("ordered key has a slot");
            out.push(n);
        }
        self.counters.delivered += out.len() as u64;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventType, InstrumentClass, Price, SymbolKey};

    fn note(seq: u64, symbol: &str) -> EventNotification {
        EventNotification {
            source: "SIM1".into(),
            seq,
            symbol: SymbolKey::parse(symbol).unwrap(),
            event_type: EventType::Trade,
            instrument_class: InstrumentClass::Equity,
            price: Some(Price::from_units(100 + seq as i64)),
            size: Some(1),
            bid: None,
            ask: None,
            source_ts_ms: seq,
            ingest_ts_ms: seq,
            enriched: None,
        }
    }

    fn session(hold: u64) -> Session {
        Session::new(1, PeerKind::Client, None, 1024, hold)
    }

    #[test]
    fn complete_is_fifo_and_credit_replenishing() {
        let mut s = session(0);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Complete, 0);
        s.enqueue(note(2, "AAA.SIM"), Qoi::Complete, 0);
        assert_eq!(s.drain(1, 0).iter().map(|n| n.seq).collect::<Vec<_>>(), [1]);
        assert_eq!(s.drain(1, 0).iter().map(|n| n.seq).collect::<Vec<_>>(), [2]);
        assert!(s.drain(1, 0).is_empty());
        assert_eq!(s.counters().delivered, 2);
    }

    #[test]
    fn complete_suppresses_duplicates() {
        let mut s = session(0);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Complete, 0);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Complete, 0); // pre-release dup
        let drained = s.drain(10, 0);
        assert_eq!(drained.len(), 1);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Complete, 0); // post-release dup
        assert!(s.drain(10, 0).is_empty());
        assert_eq!(s.counters().dup_suppressed, 2);
        assert_eq!(s.counters().matched, 1);
    }

    #[test]
    fn reorder_hold_sorts_out_of_order_arrivals() {
        let mut s = session(100);
        s.enqueue(note(6, "AAA.SIM"), Qoi::Complete, 1_000);
        s.enqueue(note(5, "AAA.SIM"), Qoi::Complete, 1_050);
        // before hold expiry nothing is deliverable
        assert!(s.drain(10, 1_050).is_empty());
        let drained = s.drain(10, 1_200);
        assert_eq!(drained.iter().map(|n| n.seq).collect::<Vec<_>>(), [5, 6]);
    }

    #[test]
    fn release_never_skips_a_younger_hold() {
        let mut s = session(100);
        s.enqueue(note(6, "AAA.SIM"), Qoi::Complete, 1_000);
        // seq 5 arrives later; at t=1100 seq 6 is due but 5 is not
        s.enqueue(note(5, "AAA.SIM"), Qoi::Complete, 1_090);
        assert!(s.drain(10, 1_100).is_empty(), "must not release 6 past held 5");
        assert_eq!(
            s.drain(10, 1_200).iter().map(|n| n.seq).collect::<Vec<_>>(),
            [5, 6]
        );
    }

    #[test]
    fn complete_queue_respects_capacity_via_staging() {
        let mut s = Session::new(1, PeerKind::Client, None, 2, 0);
        for seq in 1..=5 {
            s.enqueue(note(seq, "AAA.SIM"), Qoi::Complete, 0);
        }
        s.release_due(0);
        assert_eq!(s.backlog(), 5);
        let drained = s.drain(2, 0);
        assert_eq!(drained.iter().map(|n| n.seq).collect::<Vec<_>>(), [1, 2]);
        let drained = s.drain(10, 0);
        assert_eq!(drained.iter().map(|n| n.seq).collect::<Vec<_>>(), [3, 4, 5]);
    }

    #[test]
    fn conflated_keeps_latest_per_symbol() {
        let mut s = session(0);
        for seq in [1, 2, 3] {
            s.enqueue(note(seq, "AAA.SIM"), Qoi::Conflated, 0);
        }
        let drained = s.drain(10, 0);
        assert_eq!(drained.len(), 1);
        assert_eq!(drained[0].seq, 3);
        let c = s.counters();
        assert_eq!(c.matched, 3);
        assert_eq!(c.dropped_superseded, 2);
        assert_eq!(c.delivered, 1);
        assert_eq!(c.matched, c.delivered + c.dropped_superseded);
    }

    #[test]
    fn conflated_interleaved_symbols_are_independent() {
        let mut s = session(0);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Conflated, 0);
        s.enqueue(note(2, "BBB.SIM"), Qoi::Conflated, 0);
        s.enqueue(note(3, "AAA.SIM"), Qoi::Conflated, 0);
        s.enqueue(note(4, "BBB.SIM"), Qoi::Conflated, 0);
        let drained = s.drain(10, 0);
        let got: Vec<(String, u64)> = drained
            .iter()
            .map(|n| (n.symbol.rendered(), n.seq))
            .collect();
        assert_eq!(got, [("AAA.SIM".to_string(), 3), ("BBB.SIM".to_string(), 4)]);
    }

    #[test]
    fn conflated_drops_stale_arrivals() {
        let mut s = session(0);
        s.enqueue(note(5, "AAA.SIM"), Qoi::Conflated, 0);
        assert_eq!(s.drain(10, 0)[0].seq, 5);
        // a recovered old copy must not reappear
        s.enqueue(note(4, "AAA.SIM"), Qoi::Conflated, 0);
        assert!(s.drain(10, 0).is_empty());
        s.enqueue(note(6, "AAA.SIM"), Qoi::Conflated, 0);
        assert_eq!(s.drain(10, 0)[0].seq, 6);
    }

    #[test]
    fn drain_prefers_complete_lane_then_slots() {
        let mut s = session(0);
        s.enqueue(note(1, "AAA.SIM"), Qoi::Conflated, 0);
        s.enqueue(note(2, "BBB.SIM"), Qoi::Complete, 0);
        let drained = s.drain(10, 0);
        assert_eq!(drained.iter().map(|n| n.seq).collect::<Vec<_>>(), [2, 1]);
    }
}
