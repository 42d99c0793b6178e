//! Feed handlers: parse source wire formats, check and purge invalid
//! events, normalize survivors into [`EventNotification`] values.
//!
//! Two concrete formats exist so the per-feed specialization has real
//! instances: a pipe-separated text grammar (one event per line) and the
//! notification TLV frame. Both normalize to identical values.
//!
//! Text grammar, ASCII, LF-terminated:
//! `source|seq|symbol|type|price|size|bid|ask|ts_ms`
//! with empty optional fields left blank.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::model::{
    read_frame_fields, CodecError, EventNotification, EventType, InstrumentClass, Price,
    SymbolKey, TlvWriter,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginFormat {
    Text,
    Binary,
}

/// An event as parsed off the wire: fields populated but not yet checked
/// (a price may still be non-positive here).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFeedEvent {
    pub source: String,
    pub seq: u64,
    pub symbol: SymbolKey,
    pub event_type: EventType,
    pub instrument_class: Option<InstrumentClass>,
    pub price: Option<Price>,
    pub size: Option<u32>,
    pub bid: Option<Price>,
    pub ask: Option<Price>,
    pub source_ts_ms: u64,
    pub origin_format: OriginFormat,
    /// Line number (text) or byte offset (binary) in the input stream.
    pub raw_offset: u64,
}

/// Per-feed tailoring: expected source, class default, timestamp skew
/// tolerances and an optional known-symbol table.
#[derive(Debug, Clone)]
pub struct FeedConfig {
    pub feed_id: String,
    pub expected_source: String,
    pub default_instrument_class: InstrumentClass,
    pub max_future_skew_ms: u64,
    pub max_past_skew_ms: u64,
    pub symbol_table: Option<BTreeSet<SymbolKey>>,
}

impl FeedConfig {
    pub fn new(feed_id: &str, expected_source: &str) -> Self {
        FeedConfig {
            feed_id: feed_id.to_string(),
            expected_source: expected_source.to_string(),
            default_instrument_class: InstrumentClass::Equity,
            max_future_skew_ms: 5_000,
            max_past_skew_ms: 86_400_000,
            symbol_table: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectKind {
    Malformed,
    NonPositivePrice,
    CrossedQuote,
    StaleTimestamp,
    FutureTimestamp,
    DuplicateOrRegressedSeq,
    UnknownSymbol,
    SourceMismatch,
}

impl RejectKind {
    pub const ALL: [RejectKind; 8] = [
        RejectKind::Malformed,
        RejectKind::NonPositivePrice,
        RejectKind::CrossedQuote,
        RejectKind::StaleTimestamp,
        RejectKind::FutureTimestamp,
        RejectKind::DuplicateOrRegressedSeq,
        RejectKind::UnknownSymbol,
        RejectKind::SourceMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectKind::Malformed => "MALFORMED",
            RejectKind::NonPositivePrice => "NON_POSITIVE_PRICE",
            RejectKind::CrossedQuote => "CROSSED_QUOTE",
            RejectKind::StaleTimestamp => "STALE_TIMESTAMP",
            RejectKind::FutureTimestamp => "FUTURE_TIMESTAMP",
            RejectKind::DuplicateOrRegressedSeq => "DUPLICATE_OR_REGRESSED_SEQ",
            RejectKind::UnknownSymbol => "UNKNOWN_SYMBOL",
            RejectKind::SourceMismatch => "SOURCE_MISMATCH",
        }
    }
}

/// Why an event was purged; every purged event gets exactly one primary
/// reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectReason {
    pub kind: RejectKind,
    pub detail: String,
}

impl RejectReason {
    fn new(kind: RejectKind, detail: impl Into<String>) -> Self {
        RejectReason { kind, detail: detail.into() }
    }

    fn malformed(detail: impl Into<String>) -> Self {
        Self::new(RejectKind::Malformed, detail)
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.detail)
    }
}

/// Proof that an event passed the check sequence; only validated events
/// reach normalization.
#[derive(Debug, Clone)]
pub struct ValidatedEvent(RawFeedEvent);

impl ValidatedEvent {
    pub fn raw(&self) -> &RawFeedEvent {
        &self.0
    }
}

const TEXT_FIELD_COUNT: usize = 9;

fn parse_optional_price(field: &str, index: usize) -> Result<Option<Price>, RejectReason> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<Price>()
        .map(Some)
        .map_err(|_| RejectReason::malformed(format!("field {index}: bad decimal {field:?}")))
}

/// Parses one LF-stripped text line. Malformed lines report the 1-based
/// index of the first offending field.
pub fn parse_text_line(line: &str, raw_offset: u64) -> Result<RawFeedEvent, RejectReason> {
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != TEXT_FIELD_COUNT {
        return Err(RejectReason::malformed(format!(
            "field count: expected {TEXT_FIELD_COUNT}, got {}",
            fields.len()
        )));
    }
    let source = fields[0];
    if !crate::model::is_valid_source(source) {
        return Err(RejectReason::malformed(format!("field 1: bad source {source:?}")));
    }
    let seq: u64 = fields[1]
        .parse()
        .map_err(|_| RejectReason::malformed(format!("field 2: bad seq {:?}", fields[1])))?;
    let symbol = SymbolKey::parse(fields[2])
        .map_err(|_| RejectReason::malformed(format!("field 3: bad symbol {:?}", fields[2])))?;
    let event_type = EventType::parse(fields[3])
        .ok_or_else(|| RejectReason::malformed(format!("field 4: bad type {:?}", fields[3])))?;
    let price = parse_optional_price(fields[4], 5)?;
    let size: Option<u32> = if fields[5].is_empty() {
        None
    } else {
        Some(fields[5].parse().map_err(|_| {
            RejectReason::malformed(format!("field 6: bad size {:?}", fields[5]))
        })?)
    };
    let bid = parse_optional_price(fields[6], 7)?;
    let ask = parse_optional_price(fields[7], 8)?;
    let source_ts_ms: u64 = fields[8]
        .parse()
        .map_err(|_| RejectReason::malformed(format!("field 9: bad ts_ms {:?}", fields[8])))?;
    Ok(RawFeedEvent {
        source: source.to_string(),
        seq,
        symbol,
        event_type,
        instrument_class: None, // text grammar carries no class
        price,
        size,
        bid,
        ask,
        source_ts_ms,
        origin_format: OriginFormat::Text,
        raw_offset,
    })
}

/// Emits the text-grammar line for a raw event (no trailing LF).
pub fn emit_text_line(raw: &RawFeedEvent) -> String {
    let opt_price = |p: Option<Price>| p.map(|p| p.to_string()).unwrap_or_default();
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        raw.source,
        raw.seq,
        raw.symbol,
        raw.event_type,
        opt_price(raw.price),
        raw.size.map(|s| s.to_string()).unwrap_or_default(),
        opt_price(raw.bid),
        opt_price(raw.ask),
        raw.source_ts_ms
    )
}

/// Emits the TLV feed frame for a raw event (no ingest timestamp yet).
pub fn emit_binary_frame(raw: &RawFeedEvent) -> Vec<u8> {
    let mut w = TlvWriter::new();
    w.put(1, raw.source.as_bytes());
    w.put_u64(2, raw.seq);
    w.put(3, raw.symbol.rendered().as_bytes());
    w.put(4, &[raw.event_type.wire_code()]);
    if let Some(price) = raw.price {
        w.put_i64(5, price.raw());
    }
    if let Some(size) = raw.size {
        w.put_u32(6, size);
    }
    if let Some(bid) = raw.bid {
        w.put_i64(7, bid.raw());
    }
    if let Some(ask) = raw.ask {
        w.put_i64(8, ask.raw());
    }
    w.put_u64(9, raw.source_ts_ms);
    if let Some(class) = raw.instrument_class {
        w.put(11, &[class.wire_code()]);
    }
    w.into_frame()
}

/// Parses one TLV frame starting at the front of `bytes`. Mandatory tags
/// are 1, 2, 3, 4 and 9; an ingest timestamp (tag 10) in a feed frame is
/// ignored. Returns the event and the bytes consumed.
pub fn parse_binary_frame(
    bytes: &[u8],
    raw_offset: u64,
) -> Result<(RawFeedEvent, usize), RejectReason> {
    let (fields, consumed) = read_frame_fields(bytes).map_err(|e| match e {
        CodecError::BadMagic { offset, found } => {
            RejectReason::malformed(format!("magic: 0x{found:02X} at offset {offset}"))
        }
        other => RejectReason::malformed(other.to_string()),
    })?;
    let missing = |tag: u8| RejectReason::malformed(format!("tag {tag} absent"));
    let raw = RawFeedEvent {
        source: fields.source.ok_or_else(|| missing(1))?,
        seq: fields.seq.ok_or_else(|| missing(2))?,
        symbol: fields.symbol.ok_or_else(|| missing(3))?,
        event_type: fields.event_type.ok_or_else(|| missing(4))?,
        instrument_class: fields.instrument_class,
        price: fields.price,
        size: fields.size,
        bid: fields.bid,
        ask: fields.ask,
        source_ts_ms: fields.source_ts_ms.ok_or_else(|| missing(9))?,
        origin_format: OriginFormat::Binary,
        raw_offset,
    };
    Ok((raw, consumed))
}

/// Applies the check sequence in its fixed order; the first failing check
/// names the reject. On success the per-source sequence horizon advances.
pub fn validate(
    raw: RawFeedEvent,
    cfg: &FeedConfig,
    last_seq_by_source: &mut HashMap<String, u64>,
    now_ms: u64,
) -> Result<ValidatedEvent, RejectReason> {
    if raw.source != cfg.expected_source {
        return Err(RejectReason::new(
            RejectKind::SourceMismatch,
            format!("got {:?}, feed expects {:?}", raw.source, cfg.expected_source),
        ));
    }
    if let Some(table) = &cfg.symbol_table {
        if !table.contains(&raw.symbol) {
            return Err(RejectReason::new(
                RejectKind::UnknownSymbol,
                raw.symbol.rendered(),
            ));
        }
    }
    match raw.event_type {
        EventType::Trade => {
            if raw.price.is_none() || raw.size.is_none() {
                return Err(RejectReason::malformed("TRADE requires price and size"));
            }
        }
        EventType::Quote => {
            if raw.bid.is_none() || raw.ask.is_none() {
                return Err(RejectReason::malformed("QUOTE requires bid and ask"));
            }
        }
        EventType::Status => {
            if raw.price.is_some() || raw.size.is_some() || raw.bid.is_some() || raw.ask.is_some()
            {
                return Err(RejectReason::malformed("STATUS carries no price fields"));
            }
        }
    }
    for (name, p) in [("price", raw.price), ("bid", raw.bid), ("ask", raw.ask)] {
        if let Some(p) = p {
            if !p.is_strictly_positive() {
                return Err(RejectReason::new(
                    RejectKind::NonPositivePrice,
                    format!("{name}={p}"),
                ));
            }
        }
    }
    if let (Some(bid), Some(ask)) = (raw.bid, raw.ask) {
        if bid > ask {
            return Err(RejectReason::new(
                RejectKind::CrossedQuote,
                format!("bid {bid} > ask {ask}"),
            ));
        }
    }
    if raw.source_ts_ms > now_ms + cfg.max_future_skew_ms {
        return Err(RejectReason::new(
            RejectKind::FutureTimestamp,
            format!("ts {} vs now {}", raw.source_ts_ms, now_ms),
        ));
    }
    if raw.source_ts_ms < now_ms.saturating_sub(cfg.max_past_skew_ms) {
        return Err(RejectReason::new(
            RejectKind::StaleTimestamp,
            format!("ts {} vs now {}", raw.source_ts_ms, now_ms),
        ));
    }
    let last = last_seq_by_source.get(&raw.source).copied().unwrap_or(0);
    if raw.seq <= last {
        return Err(RejectReason::new(
            RejectKind::DuplicateOrRegressedSeq,
            format!("seq {} <= last {}", raw.seq, last),
        ));
    }
    last_seq_by_source.insert(raw.source.clone(), raw.seq);
    Ok(ValidatedEvent(raw))
}

/// Produces the canonical notification: ingest timestamp stamped,
/// instrument class defaulted from the feed config when the wire carried
/// none. Enrichment is added downstream.
pub fn normalize(v: ValidatedEvent, cfg: &FeedConfig, ingest_ts_ms: u64) -> EventNotification {
    let raw = v.0;
    let n = EventNotification {
        source: raw.source,
        seq: raw.seq,
        symbol: raw.symbol,
        event_type: raw.event_type,
        instrument_class: raw.instrument_class.unwrap_or(cfg.default_instrument_class),
        price: raw.price,
        size: raw.size,
        bid: raw.bid,
        ask: raw.ask,
        source_ts_ms: raw.source_ts_ms,
        ingest_ts_ms,
        enriched: None,
    };
    debug_assert!(n.validate().is_ok());
    n
}

/// Conservation counters for one feed: `parsed = accepted + rejected`
/// holds for any input stream (parse failures count as rejected).
#[derive(Debug, Default, Clone)]
pub struct FeedCounters {
    pub parsed: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejects_by_kind: HashMap<RejectKind, u64>,
}

impl FeedCounters {
    fn reject(&mut self, kind: RejectKind) {
        self.rejected += 1;
        *self.rejects_by_kind.entry(kind).or_insert(0) += 1;
    }
}

/// Single-threaded driver for one feed: parse, check, purge, normalize,
/// with reject accounting.
#[derive(Debug)]
pub struct FeedHandler {
    cfg: FeedConfig,
    last_seq_by_source: HashMap<String, u64>,
    counters: FeedCounters,
}

impl FeedHandler {
    pub fn new(cfg: FeedConfig) -> Self {
        FeedHandler {
            cfg,
            last_seq_by_source: HashMap::new(),
            counters: FeedCounters::default(),
        }
    }

    pub fn config(&self) -> &FeedConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &FeedCounters {
        &self.counters
    }

    fn admit(
        &mut self,
        parsed: Result<RawFeedEvent, RejectReason>,
        now_ms: u64,
    ) -> Result<EventNotification, RejectReason> {
        self.counters.parsed += 1;
        let raw = parsed
            .and_then(|raw| validate(raw, &self.cfg, &mut self.last_seq_by_source, now_ms));
        match raw {
            Ok(v) => {
                self.counters.accepted += 1;
                Ok(normalize(v, &self.cfg, now_ms))
            }
            Err(reason) => {
                self.counters.reject(reason.kind);
                Err(reason)
            }
        }
    }

    /// Ingests one text line (without terminator). `line_no` is 1-based.
    pub fn ingest_line(
        &mut self,
        line: &str,
        line_no: u64,
        now_ms: u64,
    ) -> Result<EventNotification, RejectReason> {
        self.admit(parse_text_line(line, line_no), now_ms)
    }

    /// Ingests one binary frame from the front of `bytes`; returns the
    /// outcome and the bytes consumed (0 when framing was unrecoverable).
    pub fn ingest_frame(
        &mut self,
        bytes: &[u8],
        stream_offset: u64,
        now_ms: u64,
    ) -> (Result<EventNotification, RejectReason>, usize) {
        match parse_binary_frame(bytes, stream_offset) {
            Ok((raw, consumed)) => (self.admit(Ok(raw), now_ms), consumed),
            Err(reason) => (self.admit(Err(reason), now_ms), 0),
        }
    }

    /// Ingests an already-parsed raw event (the simulator's path).
    pub fn ingest_raw(
        &mut self,
        raw: RawFeedEvent,
        now_ms: u64,
    ) -> Result<EventNotification, RejectReason> {
        self.admit(Ok(raw), now_ms)
    }
}

/// Renders a delivered notification in the text grammar with the
/// enrichment suffix `|O=..|H=..|L=..|V=..` appended when present.
pub fn render_delivery_line(n: &EventNotification) -> String {
    let opt_price = |p: Option<Price>| p.map(|p| p.to_string()).unwrap_or_default();
    let mut line = format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        n.source,
        n.seq,
        n.symbol,
        n.event_type,
        opt_price(n.price),
        n.size.map(|s| s.to_string()).unwrap_or_default(),
        opt_price(n.bid),
        opt_price(n.ask),
        n.source_ts_ms
    );
    if let Some(e) = &n.enriched {
        line.push_str(&format!(
            "|O={}|H={}|L={}|V={}",
            e.day_open, e.day_high, e.day_low, e.total_volume
        ));
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Price;

    fn cfg() -> FeedConfig {
        let mut cfg = FeedConfig::new("f1", "SIM1");
        cfg.max_future_skew_ms = 5_000;
        cfg.max_past_skew_ms = 60_000;
        cfg
    }

    const NOW: u64 = 1_716_900_000_500;

    #[test]
    fn parses_trade_line() {
        let raw = parse_text_line("SIM1|104|AAA.SIM|TRADE|98.25|500|||1716900000123", 1).unwrap();
        assert_eq!(raw.source, "SIM1");
        assert_eq!(raw.seq, 104);
        assert_eq!(raw.symbol.rendered(), "AAA.SIM");
        assert_eq!(raw.event_type, EventType::Trade);
        assert_eq!(raw.price, Some(Price::from_raw(982_500)));
        assert_eq!(raw.size, Some(500));
        assert_eq!(raw.bid, None);
        assert_eq!(raw.ask, None);
        assert_eq!(raw.source_ts_ms, 1_716_900_000_123);
    }

    #[test]
    fn parses_quote_line_with_empty_optionals() {
        let raw = parse_text_line("SIM1|105|AAA.SIM|QUOTE|||98.20|98.30|1716900000500", 1).unwrap();
        assert_eq!(raw.event_type, EventType::Quote);
        assert_eq!(raw.price, None);
        assert_eq!(raw.size, None);
        assert_eq!(raw.bid, Some(Price::from_raw(982_000)));
        assert_eq!(raw.ask, Some(Price::from_raw(983_000)));
    }

    #[test]
    fn short_line_is_malformed_with_field_count() {
        let err = parse_text_line("SIM1|104|AAA.SIM|TRADE|98.25", 1).unwrap_err();
        assert_eq!(err.kind, RejectKind::Malformed);
        assert!(err.detail.contains("field count"), "{}", err.detail);
    }

    #[test]
    fn first_bad_field_is_named() {
        let err = parse_text_line("SIM1|x|AAA.SIM|TRADE|98.25|500|||123", 1).unwrap_err();
        assert!(err.detail.starts_with("field 2"), "{}", err.detail);
        let err = parse_text_line("SIM1|1|AAA.SIM|SALE|98.25|500|||123", 1).unwrap_err();
        assert!(err.detail.starts_with("field 4"), "{}", err.detail);
        let err = parse_text_line("SIM1|1|AAA.SIM|TRADE|98.25001|500|||123", 1).unwrap_err();
        assert!(err.detail.starts_with("field 5"), "{}", err.detail);
    }

    #[test]
    fn text_emit_parse_roundtrip() {
        let line = "SIM1|104|AAA.SIM|TRADE|98.25|500|||1716900000123";
        let raw = parse_text_line(line, 1).unwrap();
        assert_eq!(emit_text_line(&raw), line);
    }

    #[test]
    fn binary_frame_matches_text_twin() {
        let raw = parse_text_line("SIM1|104|AAA.SIM|TRADE|98.25|500|||1716900000123", 7).unwrap();
        let frame = emit_binary_frame(&raw);
        let (back, consumed) = parse_binary_frame(&frame, 7).unwrap();
        assert_eq!(consumed, frame.len());
        assert_eq!(
            RawFeedEvent { origin_format: OriginFormat::Text, ..back },
            raw
        );
    }

    #[test]
    fn binary_bad_magic_and_missing_tag() {
        let raw = parse_text_line("SIM1|1|AAA.SIM|STATUS|||||123", 1).unwrap();
        let mut frame = emit_binary_frame(&raw);
        frame[0] = 0x00;
        let err = parse_binary_frame(&frame, 0).unwrap_err();
        assert!(err.detail.contains("magic"), "{}", err.detail);

        // Rebuild without tag 3.
        let mut w = TlvWriter::new();
        w.put(1, b"SIM1");
        w.put_u64(2, 1);
        w.put(4, &[3]);
        w.put_u64(9, 123);
        let err = parse_binary_frame(&w.into_frame(), 0).unwrap_err();
        assert_eq!(err.detail, "tag 3 absent");
    }

    #[test]
    fn validate_check_order() {
        let mut last = HashMap::new();
        let raw = parse_text_line("SIM1|1|AAA.SIM|TRADE|0|500|||1716900000123", 1).unwrap();
        let err = validate(raw, &cfg(), &mut last, NOW).unwrap_err();
        assert_eq!(err.kind, RejectKind::NonPositivePrice);

        let raw = parse_text_line("SIM1|1|AAA.SIM|QUOTE|||99.00|98.00|1716900000123", 1).unwrap();
        let err = validate(raw, &cfg(), &mut last, NOW).unwrap_err();
        assert_eq!(err.kind, RejectKind::CrossedQuote);

        // Source mismatch wins over everything else.
        let raw = parse_text_line("OTHER|1|AAA.SIM|QUOTE|||99.00|98.00|1716900000123", 1).unwrap();
        let err = validate(raw, &cfg(), &mut last, NOW).unwrap_err();
        assert_eq!(err.kind, RejectKind::SourceMismatch);
    }

    #[test]
    fn duplicate_seq_rejected_second_time() {
        let mut last = HashMap::new();
        let line = "SIM1|104|AAA.SIM|TRADE|98.25|500|||1716900000123";
        let raw = parse_text_line(line, 1).unwrap();
        assert!(validate(raw.clone(), &cfg(), &mut last, NOW).is_ok());
        let err = validate(raw, &cfg(), &mut last, NOW).unwrap_err();
        assert_eq!(err.kind, RejectKind::DuplicateOrRegressedSeq);
    }

    #[test]
    fn seq_zero_never_accepted() {
        let mut last = HashMap::new();
        let raw = parse_text_line("SIM1|0|AAA.SIM|STATUS|||||1716900000123", 1).unwrap();
        let err = validate(raw, &cfg(), &mut last, NOW).unwrap_err();
        assert_eq!(err.kind, RejectKind::DuplicateOrRegressedSeq);
    }

    #[test]
    fn timestamp_skew_checks() {
        let mut last = HashMap::new();
        let future = format!("SIM1|1|AAA.SIM|STATUS|||||{}", NOW + 10_000);
        let raw = parse_text_line(&future, 1).unwrap();
        assert_eq!(
            validate(raw, &cfg(), &mut last, NOW).unwrap_err().kind,
            RejectKind::FutureTimestamp
        );
        let stale = format!("SIM1|1|AAA.SIM|STATUS|||||{}", NOW - 120_000);
        let raw = parse_text_line(&stale, 1).unwrap();
        assert_eq!(
            validate(raw, &cfg(), &mut last, NOW).unwrap_err().kind,
            RejectKind::StaleTimestamp
        );
    }

    #[test]
    fn unknown_symbol_purged_when_table_present() {
        let mut c = cfg();
        c.symbol_table = Some([SymbolKey::parse("AAA.SIM").unwrap()].into());
        let mut last = HashMap::new();
        let raw = parse_text_line("SIM1|1|BBB.SIM|STATUS|||||1716900000123", 1).unwrap();
        assert_eq!(
            validate(raw, &c, &mut last, NOW).unwrap_err().kind,
            RejectKind::UnknownSymbol
        );
    }

    #[test]
    fn normalize_defaults_class_and_stamps_ingest() {
        let mut last = HashMap::new();
        let raw = parse_text_line("SIM1|1|AAA.SIM|TRADE|98.25|500|||1716900000123", 1).unwrap();
        let v = validate(raw, &cfg(), &mut last, NOW).unwrap();
        let n = normalize(v, &cfg(), NOW);
        assert_eq!(n.instrument_class, InstrumentClass::Equity);
        assert_eq!(n.ingest_ts_ms, NOW);
        assert!(n.enriched.is_none());
    }

    #[test]
    fn handler_conserves_counts() {
        let mut h = FeedHandler::new(cfg());
        let lines = [
            "SIM1|1|AAA.SIM|TRADE|98.25|500|||1716900000123",
            "garbage",
            "SIM1|2|AAA.SIM|QUOTE|||99.00|98.00|1716900000123", // crossed
            "SIM1|3|AAA.SIM|STATUS|||||1716900000123",
        ];
        let mut ok = 0;
        for (i, line) in lines.iter().enumerate() {
            if h.ingest_line(line, i as u64 + 1, NOW).is_ok() {
                ok += 1;
            }
        }
        let c = h.counters();
        assert_eq!(ok, 2);
        assert_eq!(c.parsed, 4);
        assert_eq!(c.accepted, 2);
        assert_eq!(c.rejected, 2);
        assert_eq!(c.parsed, c.accepted + c.rejected);
        assert_eq!(c.rejects_by_kind[&RejectKind::Malformed], 1);
        assert_eq!(c.rejects_by_kind[&RejectKind::CrossedQuote], 1);
    }
}
