//! Real-time enrichment: per-symbol trading-day state, enrichment blocks
//! appended in place, and derived-event detection.
//!
//! The trading day is the UTC calendar day of `source_ts_ms`. State is
//! partitioned by symbol with a single writer per partition.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::model::{
    EnrichmentBlock, EventNotification, EventType, InstrumentClass, Price, SymbolKey,
};

const MS_PER_DAY: u64 = 86_400_000;

/// Days since the Unix epoch, UTC.
pub fn trading_day_of(source_ts_ms: u64) -> i64 {
    (source_ts_ms / MS_PER_DAY) as i64
}

/// Running open/high/low/last, volume and quote state for one symbol and
/// one trading day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolDayState {
    pub symbol: SymbolKey,
    pub trading_day: i64,
    pub open: Option<Price>,
    pub high: Option<Price>,
    pub low: Option<Price>,
    pub last: Option<Price>,
    pub total_volume: u64,
    pub trade_count: u64,
    pub prev_close: Option<Price>,
    pub best_bid: Option<Price>,
    pub best_ask: Option<Price>,
}

impl SymbolDayState {
    pub fn new(symbol: SymbolKey, trading_day: i64) -> Self {
        SymbolDayState {
            symbol,
            trading_day,
            open: None,
            high: None,
            low: None,
            last: None,
            total_volume: 0,
            trade_count: 0,
            prev_close: None,
            best_bid: None,
            best_ask: None,
        }
    }

    /// The enrichment block reflecting this state, or `None` before the
    /// day's first trade (there is no OHLC to report yet).
    pub fn enrichment_block(&self) -> Option<EnrichmentBlock> {
        match (self.open, self.high, self.low, self.last) {
            (Some(day_open), Some(day_high), Some(day_low), Some(last)) => Some(EnrichmentBlock {
                day_open,
                day_high,
                day_low,
                last,
                total_volume: self.total_volume,
                trade_count: self.trade_count,
                prev_close: self.prev_close,
            }),
            _ => None,
        }
    }
}

/// Starts a fresh day: previous last becomes `prev_close` (when the old
/// day traded), OHLC and volume reset, the standing quote is retained.
pub fn roll_day(state: &SymbolDayState, new_trading_day: i64) -> SymbolDayState {
    debug_assert!(new_trading_day > state.trading_day);
    SymbolDayState {
        symbol: state.symbol.clone(),
        trading_day: new_trading_day,
        open: None,
        high: None,
        low: None,
        last: None,
        total_volume: 0,
        trade_count: 0,
        prev_close: state.last.or(state.prev_close),
        best_bid: state.best_bid,
        best_ask: state.best_ask,
    }
}

/// Applies one accepted notification: trades update OHLC/volume, quotes
/// update the standing bid/ask, status events leave numerics untouched.
/// Returns the updated state and the same notification with the
/// post-update enrichment block appended. A notification from a later
/// trading day first rolls the state.
pub fn apply_tick(
    state: &SymbolDayState,
    n: &EventNotification,
) -> (SymbolDayState, EventNotification) {
    debug_assert_eq!(state.symbol, n.symbol, "tick routed to wrong partition");
    let day = trading_day_of(n.source_ts_ms);
    let mut next = if day > state.trading_day {
        roll_day(state, day)
    } else {
        state.clone()
    };
    match n.event_type {
        EventType::Trade => {
            let price = n.price.expect("validated TRADE carries price");
            let size = n.size.expect("validated TRADE carries size");
            if next.open.is_none() {
                next.open = Some(price);
            }
            next.high = Some(next.high.map_or(price, |h| h.max(price)));
            next.low = Some(next.low.map_or(price, |l| l.min(price)));
            next.last = Some(price);
            next.total_volume += u64::from(size);
            next.trade_count += 1;
        }
        EventType::Quote => {
            next.best_bid = n.bid;
            next.best_ask = n.ask;
        }
        EventType::Status => {}
    }
    let mut enriched = n.clone();
    enriched.enriched = next.enrichment_block();
    (next, enriched)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivedKind {
    NewDayHigh { price: Price },
    NewDayLow { price: Price },
    VolumeThresholdCrossed { threshold: u64, total_volume: u64 },
    QuoteSpreadAlert { bid: Price, ask: Price, spread_bps: u32 },
}

impl DerivedKind {
    pub fn name(&self) -> &'static str {
        match self {
            DerivedKind::NewDayHigh { .. } => "NEW_DAY_HIGH",
            DerivedKind::NewDayLow { .. } => "NEW_DAY_LOW",
            DerivedKind::VolumeThresholdCrossed { .. } => "VOLUME_THRESHOLD_CROSSED",
            DerivedKind::QuoteSpreadAlert { .. } => "QUOTE_SPREAD_ALERT",
        }
    }
}

/// A complex event detected while enriching; `trigger` names the causing
/// notification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedEvent {
    pub kind: DerivedKind,
    pub symbol: SymbolKey,
    pub trigger: (String, u64),
    pub ts_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleSetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: threshold must be positive")]
    NonPositive { line: usize },
}

/// Detection rules: volume thresholds (per symbol or default) and a
/// maximum quote spread in basis points. Absent rules disable the
/// corresponding event kind.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    pub default_volume_threshold: Option<u64>,
    pub volume_threshold_by_symbol: BTreeMap<SymbolKey, u64>,
    pub max_spread_bps: Option<u32>,
}

impl RuleSet {
    /// Parses the key-value configuration format:
    ///
    /// ```text
    /// max_spread_bps=50
    /// volume_threshold.default=100000
    /// volume_threshold.AAA.SIM=5000
    /// ```
    pub fn parse(text: &str) -> Result<Self, RuleSetError> {
        let mut rules = RuleSet::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| RuleSetError::Parse {
                line: line_no,
                message: "expected key=value".into(),
            })?;
            let parse_u64 = |v: &str| {
                v.trim().parse::<u64>().map_err(|_| RuleSetError::Parse {
                    line: line_no,
                    message: format!("bad number {v:?}"),
                })
            };
            match key.trim() {
                "max_spread_bps" => {
                    let v = parse_u64(value)?;
                    if v == 0 {
                        return Err(RuleSetError::NonPositive { line: line_no });
                    }
                    rules.max_spread_bps = Some(v as u32);
                }
                "volume_threshold.default" => {
                    let v = parse_u64(value)?;
                    if v == 0 {
                        return Err(RuleSetError::NonPositive { line: line_no });
                    }
                    rules.default_volume_threshold = Some(v);
                }
                key if key.starts_with("volume_threshold.") => {
                    let sym = SymbolKey::parse(&key["volume_threshold.".len()..]).map_err(|e| {
                        RuleSetError::Parse { line: line_no, message: e.to_string() }
                    })?;
                    let v = parse_u64(value)?;
                    if v == 0 {
                        return Err(RuleSetError::NonPositive { line: line_no });
                    }
                    rules.volume_threshold_by_symbol.insert(sym, v);
                }
                other => {
                    return Err(RuleSetError::Parse {
                        line: line_no,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        Ok(rules)
    }

    fn volume_threshold_for(&self, symbol: &SymbolKey) -> Option<u64> {
        self.volume_threshold_by_symbol
            .get(symbol)
            .copied()
            .or(self.default_volume_threshold)
    }
}

/// Emits derived events for one applied tick, in fixed order: new day
/// high, new day low, volume threshold, spread alert. `before` must be the
/// same-day state the tick was applied to (post-rollover).
pub fn detect_derived(
    before: &SymbolDayState,
    after: &SymbolDayState,
    n: &EventNotification,
    rules: &RuleSet,
) -> Vec<DerivedEvent> {
    debug_assert_eq!(before.trading_day, after.trading_day);
    let mut events = Vec::new();
    let mut emit = |kind: DerivedKind| {
        events.push(DerivedEvent {
            kind,
            symbol: n.symbol.clone(),
            trigger: (n.source.clone(), n.seq),
            ts_ms: n.source_ts_ms,
        });
    };
    if let (Some(old_high), Some(new_high)) = (before.high, after.high) {
        if new_high > old_high {
            emit(DerivedKind::NewDayHigh { price: new_high });
        }
    }
    if let (Some(old_low), Some(new_low)) = (before.low, after.low) {
        if new_low < old_low {
            emit(DerivedKind::NewDayLow { price: new_low });
        }
    }
    if let Some(threshold) = rules.volume_threshold_for(&n.symbol) {
        if before.total_volume < threshold && after.total_volume >= threshold {
            emit(DerivedKind::VolumeThresholdCrossed {
                threshold,
                total_volume: after.total_volume,
            });
        }
    }
    if let (Some(max_bps), EventType::Quote, Some(bid), Some(ask)) =
        (rules.max_spread_bps, n.event_type, n.bid, n.ask)
    {
        // (ask-bid)/mid > max_bps/1e4, in integers: 2e4*(ask-bid) > max_bps*(bid+ask)
        let bid_raw = i128::from(bid.raw());
        let ask_raw = i128::from(ask.raw());
        if bid_raw + ask_raw > 0 && 20_000 * (ask_raw - bid_raw) > i128::from(max_bps) * (bid_raw + ask_raw)
        {
            let spread_bps = (20_000 * (ask_raw - bid_raw) / (bid_raw + ask_raw)) as u32;
            emit(DerivedKind::QuoteSpreadAlert { bid, ask, spread_bps });
        }
    }
    events
}

/// Source name for derived-event notifications.
pub const DERIVED_SOURCE: &str = "DERIVED";

/// Multi-symbol enrichment engine: owns all per-symbol partitions, applies
/// ticks, and republishes derived events as STATUS notifications on the
/// reserved `DERIVED` source with their own sequence counter.
#[derive(Debug)]
pub struct EnrichEngine {
    rules: RuleSet,
    states: HashMap<SymbolKey, SymbolDayState>,
    derived_seq: u64,
}

impl EnrichEngine {
    pub fn new(rules: RuleSet) -> Self {
        EnrichEngine { rules, states: HashMap::new(), derived_seq: 0 }
    }

    pub fn state(&self, symbol: &SymbolKey) -> Option<&SymbolDayState> {
        self.states.get(symbol)
    }

    pub fn symbol_count(&self) -> usize {
        self.states.len()
    }

    /// Enriches one accepted notification and reports any derived events.
    pub fn process(&mut self, n: &EventNotification) -> (EventNotification, Vec<DerivedEvent>) {
        let day = trading_day_of(n.source_ts_ms);
        let state = self
            .states
            .entry(n.symbol.clone())
            .or_insert_with(|| SymbolDayState::new(n.symbol.clone(), day));
        let before = if day > state.trading_day {
            roll_day(state, day)
        } else {
            state.clone()
        };
        let (after, enriched) = apply_tick(&before, n);
        let derived = detect_derived(&before, &after, n, &self.rules);
        *state = after;
        (enriched, derived)
    }

    /// Converts a derived event into its STATUS-class notification form.
    pub fn derived_notification(&mut self, event: &DerivedEvent, ingest_ts_ms: u64) -> EventNotification {
        self.derived_seq += 1;
        EventNotification {
            source: DERIVED_SOURCE.to_string(),
            seq: self.derived_seq,
            symbol: event.symbol.clone(),
            event_type: EventType::Status,
            instrument_class: InstrumentClass::Other,
            price: None,
            size: None,
            bid: None,
            ask: None,
            source_ts_ms: event.ts_ms,
            ingest_ts_ms,
            enriched: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> SymbolKey {
        SymbolKey::parse(s).unwrap()
    }

    const DAY0_TS: u64 = 1_716_900_000_000; // within day 19871
    const DAY1_TS: u64 = DAY0_TS + MS_PER_DAY;

    fn trade(seq: u64, price_units: i64, size: u32, ts: u64) -> EventNotification {
        EventNotification {
            source: "SIM1".into(),
            seq,
            symbol: sym("AAA.SIM"),
            event_type: EventType::Trade,
            instrument_class: InstrumentClass::Equity,
            price: Some(Price::from_units(price_units)),
            size: Some(size),
            bid: None,
            ask: None,
            source_ts_ms: ts,
            ingest_ts_ms: ts,
            enriched: None,
        }
    }

    fn quote(seq: u64, bid: &str, ask: &str, ts: u64) -> EventNotification {
        EventNotification {
            source: "SIM1".into(),
            seq,
            symbol: sym("AAA.SIM"),
            event_type: EventType::Quote,
            instrument_class: InstrumentClass::Equity,
            price: None,
            size: None,
            bid: Some(bid.parse().unwrap()),
            ask: Some(ask.parse().unwrap()),
            source_ts_ms: ts,
            ingest_ts_ms: ts,
            enriched: None,
        }
    }

    fn fresh() -> SymbolDayState {
        SymbolDayState::new(sym("AAA.SIM"), trading_day_of(DAY0_TS))
    }

    #[test]
    fn first_trade_sets_everything() {
        let (state, enriched) = apply_tick(&fresh(), &trade(1, 100, 500, DAY0_TS));
        assert_eq!(state.open, Some(Price::from_units(100)));
        assert_eq!(state.high, Some(Price::from_units(100)));
        assert_eq!(state.low, Some(Price::from_units(100)));
        assert_eq!(state.last, Some(Price::from_units(100)));
        assert_eq!(state.total_volume, 500);
        assert_eq!(state.trade_count, 1);
        let block = enriched.enriched.unwrap();
        assert_eq!(block.day_open, Price::from_units(100));
        assert_eq!(block.total_volume, 500);
        assert_eq!(block.prev_close, None);
    }

    #[test]
    fn high_low_last_track_trades() {
        let mut state = fresh();
        for (i, px) in [100, 105, 98].into_iter().enumerate() {
            let (next, _) = apply_tick(&state, &trade(i as u64 + 1, px, 1, DAY0_TS));
            state = next;
        }
        assert_eq!(state.high, Some(Price::from_units(105)));
        assert_eq!(state.low, Some(Price::from_units(98)));
        assert_eq!(state.last, Some(Price::from_units(98)));
        assert_eq!(state.open, Some(Price::from_units(100)));
        assert_eq!(state.total_volume, 3);
        assert_eq!(state.trade_count, 3);
    }

    #[test]
    fn quote_leaves_trade_state_alone() {
        let (state, _) = apply_tick(&fresh(), &trade(1, 100, 1, DAY0_TS));
        let (state2, enriched) = apply_tick(&state, &quote(2, "99.90", "100.10", DAY0_TS));
        assert_eq!(state2.high, state.high);
        assert_eq!(state2.total_volume, state.total_volume);
        assert_eq!(state2.best_bid, Some("99.90".parse().unwrap()));
        assert_eq!(state2.best_ask, Some("100.10".parse().unwrap()));
        // enrichment still reflects the trade state
        assert_eq!(enriched.enriched.unwrap().last, Price::from_units(100));
    }

    #[test]
    fn quote_before_first_trade_has_no_block() {
        let (state, enriched) = apply_tick(&fresh(), &quote(1, "99.90", "100.10", DAY0_TS));
        assert!(enriched.enriched.is_none());
        assert_eq!(state.best_bid, Some("99.90".parse().unwrap()));
    }

    #[test]
    fn roll_day_carries_close() {
        let (state, _) = apply_tick(&fresh(), &trade(1, 98, 5, DAY0_TS));
        let rolled = roll_day(&state, state.trading_day + 1);
        assert_eq!(rolled.prev_close, Some(Price::from_units(98)));
        assert_eq!(rolled.total_volume, 0);
        assert_eq!(rolled.trade_count, 0);
        assert_eq!(rolled.open, None);

        // no trades: prev_close unchanged
        let mut untraded = fresh();
        untraded.prev_close = Some(Price::from_units(97));
        let rolled = roll_day(&untraded, untraded.trading_day + 1);
        assert_eq!(rolled.prev_close, Some(Price::from_units(97)));
    }

    #[test]
    fn double_roll_equals_single_roll_to_later_day() {
        let (state, _) = apply_tick(&fresh(), &trade(1, 98, 5, DAY0_TS));
        let via_two = roll_day(&roll_day(&state, state.trading_day + 1), state.trading_day + 2);
        let via_one = roll_day(&state, state.trading_day + 2);
        assert_eq!(via_two, via_one);
    }

    #[test]
    fn apply_tick_rolls_on_new_day() {
        let (state, _) = apply_tick(&fresh(), &trade(1, 98, 5, DAY0_TS));
        let (state2, enriched) = apply_tick(&state, &trade(2, 101, 7, DAY1_TS));
        assert_eq!(state2.trading_day, state.trading_day + 1);
        assert_eq!(state2.open, Some(Price::from_units(101)));
        assert_eq!(state2.total_volume, 7);
        let block = enriched.enriched.unwrap();
        assert_eq!(block.prev_close, Some(Price::from_units(98)));
    }

    #[test]
    fn first_trade_of_day_is_not_a_new_high() {
        let before = fresh();
        let n = trade(1, 100, 1, DAY0_TS);
        let (after, _) = apply_tick(&before, &n);
        let events = detect_derived(&before, &after, &n, &RuleSet::default());
        assert!(events.is_empty());
    }

    #[test]
    fn new_high_emitted_once_with_price() {
        let (s1, _) = apply_tick(&fresh(), &trade(1, 100, 1, DAY0_TS));
        let n = trade(2, 105, 1, DAY0_TS);
        let (s2, _) = apply_tick(&s1, &n);
        let events = detect_derived(&s1, &s2, &n, &RuleSet::default());
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0].kind,
            DerivedKind::NewDayHigh { price: Price::from_units(105) }
        );
        assert_eq!(events[0].trigger, ("SIM1".to_string(), 2));
    }

    #[test]
    fn volume_threshold_crossed_on_second_trade_only() {
        let rules = RuleSet {
            default_volume_threshold: Some(1000),
            ..RuleSet::default()
        };
        let s0 = fresh();
        let n1 = trade(1, 100, 600, DAY0_TS);
        let (s1, _) = apply_tick(&s0, &n1);
        assert!(detect_derived(&s0, &s1, &n1, &rules)
            .iter()
            .all(|e| !matches!(e.kind, DerivedKind::VolumeThresholdCrossed { .. })));
        let n2 = trade(2, 100, 600, DAY0_TS);
        let (s2, _) = apply_tick(&s1, &n2);
        let events = detect_derived(&s1, &s2, &n2, &rules);
        assert!(events.iter().any(|e| matches!(
            e.kind,
            DerivedKind::VolumeThresholdCrossed { threshold: 1000, total_volume: 1200 }
        )));
        // and never again that day
        let n3 = trade(3, 100, 600, DAY0_TS);
        let (s3, _) = apply_tick(&s2, &n3);
        assert!(detect_derived(&s2, &s3, &n3, &rules)
            .iter()
            .all(|e| !matches!(e.kind, DerivedKind::VolumeThresholdCrossed { .. })));
    }

    #[test]
    fn spread_alert_uses_basis_points() {
        let rules = RuleSet { max_spread_bps: Some(50), ..RuleSet::default() };
        let s0 = fresh();
        // spread 0.2 on mid 100 = 20 bps: quiet
        let n = quote(1, "99.90", "100.10", DAY0_TS);
        let (s1, _) = apply_tick(&s0, &n);
        assert!(detect_derived(&s0, &s1, &n, &rules).is_empty());
        // spread 1.0 on mid 100 = 100 bps: alert
        let n2 = quote(2, "99.50", "100.50", DAY0_TS);
        let (s2, _) = apply_tick(&s1, &n2);
        let events = detect_derived(&s1, &s2, &n2, &rules);
        assert_eq!(events.len(), 1);
        assert!(matches!(
            events[0].kind,
            DerivedKind::QuoteSpreadAlert { spread_bps: 100, .. }
        ));
    }

    #[test]
    fn ruleset_parsing() {
        let rules = RuleSet::parse(
            "# comment\nmax_spread_bps=50\nvolume_threshold.default=100000\nvolume_threshold.AAA.SIM=5000\n",
        )
        .unwrap();
        assert_eq!(rules.max_spread_bps, Some(50));
        assert_eq!(rules.default_volume_threshold, Some(100_000));
        assert_eq!(rules.volume_threshold_for(&sym("AAA.SIM")), Some(5_000));
        assert_eq!(rules.volume_threshold_for(&sym("BBB.SIM")), Some(100_000));

        assert!(matches!(
            RuleSet::parse("max_spread_bps=0").unwrap_err(),
            RuleSetError::NonPositive { line: 1 }
        ));
        assert!(matches!(
            RuleSet::parse("bogus=1").unwrap_err(),
            RuleSetError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn engine_replay_is_deterministic() {
        let run = || {
            let mut engine = EnrichEngine::new(RuleSet {
                default_volume_threshold: Some(800),
                max_spread_bps: Some(50),
                ..RuleSet::default()
            });
            let mut out = Vec::new();
            for (i, px) in [100i64, 103, 99, 104, 101].into_iter().enumerate() {
                let (enriched, derived) = engine.process(&trade(i as u64 + 1, px, 300, DAY0_TS));
                out.push((enriched, derived));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn derived_notification_uses_reserved_source() {
        let mut engine = EnrichEngine::new(RuleSet::default());
        let event = DerivedEvent {
            kind: DerivedKind::NewDayHigh { price: Price::from_units(105) },
            symbol: sym("AAA.SIM"),
            trigger: ("SIM1".into(), 2),
            ts_ms: DAY0_TS,
        };
        let n1 = engine.derived_notification(&event, DAY0_TS + 1);
        let n2 = engine.derived_notification(&event, DAY0_TS + 2);
        assert_eq!(n1.source, DERIVED_SOURCE);
        assert_eq!(n1.event_type, EventType::Status);
        assert_eq!((n1.seq, n2.seq), (1, 2));
        assert!(n1.validate().is_ok());
    }
}
