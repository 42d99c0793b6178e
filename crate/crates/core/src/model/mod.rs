//! Canonical domain types shared by every other module.
//!
//! Prices are fixed-point with four fractional digits so that equality,
//! ordering and codec round-trips are exact. All types here are immutable
//! values; the operations on them are pure.

mod codec;
mod filter;

pub use codec::{decode_frame, decode_notification, encode_notification, CodecError};
pub(crate) use codec::{read_frame_fields, TlvWriter};
pub use filter::{
    filter_covers, filter_expr, filter_matches, merge_filters, parse_filter_expr,
    FilterDecodeError, FilterExprError,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Fixed-point scale: one price unit is 1e-4.
pub const PRICE_SCALE: i64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid symbol code {0:?}: want 1-12 uppercase alphanumerics")]
    BadSymbolCode(String),
    #[error("invalid market code {0:?}: want 1-4 uppercase letters")]
    BadMarketCode(String),
    #[error("invalid symbol {0:?}: want CODE.MARKET")]
    BadSymbol(String),
    #[error("invalid price {0:?}: want decimal with at most 4 fractional digits")]
    BadPrice(String),
    #[error("invalid source {0:?}: want 1-8 uppercase alphanumerics")]
    BadSource(String),
}

/// A price or quote level in fixed-point units of 1e-4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Price(i64);

impl Price {
    pub const fn from_raw(raw: i64) -> Self {
        Price(raw)
    }

    /// Whole units, e.g. `Price::from_units(98)` is 98.0000.
    pub const fn from_units(units: i64) -> Self {
        Price(units * PRICE_SCALE)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub const fn is_strictly_positive(self) -> bool {
        self.0 > 0
    }
}

impl FromStr for Price {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::BadPrice(s.to_string());
        let (neg, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        if digits.is_empty() {
            return Err(bad());
        }
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty()
            || frac_part.len() > 4
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let int_val: i64 = int_part.parse().map_err(|_| bad())?;
        let mut frac_val: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        for _ in frac_part.len()..4 {
            frac_val *= 10;
        }
        let raw = int_val
            .checked_mul(PRICE_SCALE)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Ok(Price(if neg { -raw } else { raw }))
    }
}

impl fmt::Display for Price {
    /// Renders with the shortest fraction: `98.25`, not `98.2500`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let raw = self.0;
        let sign = if raw < 0 { "-" } else { "" };
        let abs = raw.unsigned_abs();
        let units = abs / PRICE_SCALE as u64;
        let mut frac = abs % PRICE_SCALE as u64;
        if frac == 0 {
            return write!(f, "{sign}{units}");
        }
        let mut width = 4;
        while frac % 10 == 0 {
            frac /= 10;
            width -= 1;
        }
        write!(f, "{sign}{units}.{frac:0width$}")
    }
}

pub(crate) fn is_valid_source(s: &str) -> bool {
    (1..=8).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

/// A concrete tradable instance: instrument code plus venue, rendered
/// `CODE.MARKET`. Ordering is lexicographic on the rendered form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolKey {
    code: String,
    market: String,
}

impl SymbolKey {
    pub fn new(code: &str, market: &str) -> Result<Self, ModelError> {
        let code = code.to_ascii_uppercase();
        let market = market.to_ascii_uppercase();
        if !(1..=12).contains(&code.len())
            || !code
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
        {
            return Err(ModelError::BadSymbolCode(code));
        }
        if !(1..=4).contains(&market.len()) || !market.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(ModelError::BadMarketCode(market));
        }
        Ok(SymbolKey { code, market })
    }

    pub fn parse(rendered: &str) -> Result<Self, ModelError> {
        let (code, market) = rendered
            .split_once('.')
            .ok_or_else(|| ModelError::BadSymbol(rendered.to_string()))?;
        Self::new(code, market).map_err(|_| ModelError::BadSymbol(rendered.to_string()))
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn market(&self) -> &str {
        &self.market
    }

    pub fn rendered(&self) -> String {
        format!("{}.{}", self.code, self.market)
    }
}

impl fmt::Display for SymbolKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.code, self.market)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventType {
    Trade,
    Quote,
    Status,
}

impl EventType {
    pub const ALL: [EventType; 3] = [EventType::Trade, EventType::Quote, EventType::Status];

    pub fn wire_code(self) -> u8 {
        match self {
            EventType::Trade => 1,
            EventType::Quote => 2,
            EventType::Status => 3,
        }
    }

    pub fn from_wire(code: u8) -> Option<Self> {
        match code {
            1 => Some(EventType::Trade),
            2 => Some(EventType::Quote),
            3 => Some(EventType::Status),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventType::Trade => "TRADE",
            EventType::Quote => "QUOTE",
            EventType::Status => "STATUS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TRADE" => Some(EventType::Trade),
            "QUOTE" => Some(EventType::Quote),
            "STATUS" => Some(EventType::Status),
            _ => None,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-empty subset of the three event types, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventTypeSet(u8);

impl EventTypeSet {
    pub const fn empty() -> Self {
        EventTypeSet(0)
    }

    pub fn all() -> Self {
        let mut s = Self::empty();
        for t in EventType::ALL {
            s.insert(t);
        }
        s
    }

    pub fn of(types: &[EventType]) -> Self {
        let mut s = Self::empty();
        for &t in types {
            s.insert(t);
        }
        s
    }

    pub fn insert(&mut self, t: EventType) {
        self.0 |= 1 << (t.wire_code() - 1);
    }

    pub fn contains(self, t: EventType) -> bool {
        self.0 & (1 << (t.wire_code() - 1)) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: EventTypeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn from_mask(mask: u8) -> Option<Self> {
        if mask == 0 || mask & !0b111 != 0 {
            None
        } else {
            Some(EventTypeSet(mask))
        }
    }

    pub fn iter(self) -> impl Iterator<Item = EventType> {
        EventType::ALL.into_iter().filter(move |t| self.contains(*t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstrumentClass {
    Equity,
    Fund,
    Index,
    Other,
}

impl InstrumentClass {
    pub const ALL: [InstrumentClass; 4] = [
        InstrumentClass::Equity,
        InstrumentClass::Fund,
        InstrumentClass::Index,
        InstrumentClass::Other,
    ];

    pub fn wire_code(self) -> u8 {
        match self {
            InstrumentClass::Equity => 1,
            InstrumentClass::Fund => 2,
            InstrumentClass::Index => 3,
            InstrumentClass::Other => 4,
        }
    }

    pub fn from_wire(code: u8) -> Option<Self> {
        match code {
            1 => Some(InstrumentClass::Equity),
            2 => Some(InstrumentClass::Fund),
            3 => Some(InstrumentClass::Index),
            4 => Some(InstrumentClass::Other),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InstrumentClass::Equity => "EQUITY",
            InstrumentClass::Fund => "FUND",
            InstrumentClass::Index => "INDEX",
            InstrumentClass::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "EQUITY" => Some(InstrumentClass::Equity),
            "FUND" => Some(InstrumentClass::Fund),
            "INDEX" => Some(InstrumentClass::Index),
            "OTHER" => Some(InstrumentClass::Other),
            _ => None,
        }
    }
}

impl fmt::Display for InstrumentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Running-day aggregates appended to a notification by enrichment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnrichmentBlock {
    pub day_open: Price,
    pub day_high: Price,
    pub day_low: Price,
    pub last: Price,
    pub total_volume: u64,
    pub trade_count: u64,
    pub prev_close: Option<Price>,
}

/// The canonical normalized market event: the unit flowing through every
/// module of the fabric.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventNotification {
    pub source: String,
    /// Strictly increasing per source, starting at 1.
    pub seq: u64,
    pub symbol: SymbolKey,
    pub event_type: EventType,
    pub instrument_class: InstrumentClass,
    pub price: Option<Price>,
    pub size: Option<u32>,
    pub bid: Option<Price>,
    pub ask: Option<Price>,
    pub source_ts_ms: u64,
    pub ingest_ts_ms: u64,
    pub enriched: Option<EnrichmentBlock>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidityError {
    #[error("invalid source {0:?}")]
    Source(String),
    #[error("seq must be > 0")]
    ZeroSeq,
    #[error("{0} notification missing required field {1}")]
    MissingField(EventType, &'static str),
    #[error("STATUS notification carries field {0}")]
    StatusField(&'static str),
    #[error("non-positive {0}")]
    NonPositivePrice(&'static str),
    #[error("crossed quote: bid {bid} > ask {ask}")]
    CrossedQuote { bid: Price, ask: Price },
    #[error("inconsistent enrichment block")]
    BadEnrichment,
}

impl EventNotification {
    /// Checks the structural invariants the rest of the fabric relies on.
    /// Feed validation rejects violating events upstream; wire and store
    /// decoding re-checks so invalid frames never propagate.
    pub fn validate(&self) -> Result<(), ValidityError> {
        if !is_valid_source(&self.source) {
            return Err(ValidityError::Source(self.source.clone()));
        }
        if self.seq == 0 {
            return Err(ValidityError::ZeroSeq);
        }
        match self.event_type {
            EventType::Trade => {
                if self.price.is_none() {
                    return Err(ValidityError::MissingField(EventType::Trade, "price"));
                }
                if self.size.is_none() {
                    return Err(ValidityError::MissingField(EventType::Trade, "size"));
                }
            }
            EventType::Quote => {
                if self.bid.is_none() {
                    return Err(ValidityError::MissingField(EventType::Quote, "bid"));
                }
                if self.ask.is_none() {
                    return Err(ValidityError::MissingField(EventType::Quote, "ask"));
                }
            }
            EventType::Status => {
                for (name, present) in [
                    ("price", self.price.is_some()),
                    ("size", self.size.is_some()),
                    ("bid", self.bid.is_some()),
                    ("ask", self.ask.is_some()),
                ] {
                    if present {
                        return Err(ValidityError::StatusField(name));
                    }
                }
            }
        }
        for (name, p) in [("price", self.price), ("bid", self.bid), ("ask", self.ask)] {
            if let Some(p) = p {
                if !p.is_strictly_positive() {
                    return Err(ValidityError::NonPositivePrice(name));
                }
            }
        }
        if let (Some(bid), Some(ask)) = (self.bid, self.ask) {
            if bid > ask {
                return Err(ValidityError::CrossedQuote { bid, ask });
            }
        }
        if let Some(e) = &self.enriched {
            let ordered = e.day_low <= e.last
                && e.last <= e.day_high
                && e.day_low <= e.day_open
                && e.day_open <= e.day_high;
            if !ordered {
                return Err(ValidityError::BadEnrichment);
            }
        }
        Ok(())
    }
}

/// How a matching symbol population is selected: an explicit finite set or
/// a prefix on the rendered `CODE.MARKET` form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SymbolSelector {
    Set(BTreeSet<SymbolKey>),
    Prefix(String),
}

/// Conjunctive content filter; a `None` field is a wildcard. The
/// all-wildcard filter matches every notification.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SubscriptionFilter {
    pub source: Option<String>,
    pub instrument_class: Option<InstrumentClass>,
    pub event_types: Option<EventTypeSet>,
    pub symbols: Option<SymbolSelector>,
}

impl SubscriptionFilter {
    pub fn wildcard() -> Self {
        Self::default()
    }

    pub fn is_wildcard(&self) -> bool {
        self.source.is_none()
            && self.instrument_class.is_none()
            && self.event_types.is_none()
            && self.symbols.is_none()
    }
}

/// Delivery contract attached to a subscription: drop-stale-keep-latest or
/// lossless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Qoi {
    Conflated,
    Complete,
}

impl Qoi {
    pub fn wire_code(self) -> u8 {
        match self {
            Qoi::Conflated => 1,
            Qoi::Complete => 2,
        }
    }

    pub fn from_wire(code: u8) -> Option<Self> {
        match code {
            1 => Some(Qoi::Conflated),
            2 => Some(Qoi::Complete),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Qoi::Conflated => "CONFLATED",
            Qoi::Complete => "COMPLETE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "CONFLATED" => Some(Qoi::Conflated),
            "COMPLETE" => Some(Qoi::Complete),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    /// Unique within the owning session.
    pub id: u64,
    pub filter: SubscriptionFilter,
    pub qoi: Qoi,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(s: &str) -> SymbolKey {
        SymbolKey::parse(s).unwrap()
    }

    #[test]
    fn symbol_render_roundtrip() {
        let s = sym("AAA.SIM");
        assert_eq!(s.rendered(), "AAA.SIM");
        assert_eq!(SymbolKey::parse(&s.rendered()).unwrap(), s);
        assert!(SymbolKey::parse("AAA").is_err());
        assert!(SymbolKey::parse("AAA.").is_err());
        assert!(SymbolKey::parse(".SIM").is_err());
        assert!(SymbolKey::parse("AAA.TOOLONG").is_err());
        assert!(SymbolKey::parse("AAA.S1M").is_err());
        assert_eq!(sym("aaa.sim"), sym("AAA.SIM"));
    }

    #[test]
    fn symbol_ordering_matches_rendered_form() {
        let keys = ["A.AB", "AA.B", "AB.AB", "A1.Z", "ZZZ.A", "A.A"];
        let mut by_struct: Vec<SymbolKey> = keys.iter().map(|s| sym(s)).collect();
        by_struct.sort();
        let mut by_rendered: Vec<SymbolKey> = keys.iter().map(|s| sym(s)).collect();
        by_rendered.sort_by_key(|k| k.rendered());
        assert_eq!(by_struct, by_rendered);
    }

    #[test]
    fn price_parse_and_display() {
        assert_eq!("98.25".parse::<Price>().unwrap(), Price::from_raw(982_500));
        assert_eq!("98.2500".parse::<Price>().unwrap().raw(), 982_500);
        assert_eq!("0".parse::<Price>().unwrap().raw(), 0);
        assert_eq!("-1.5".parse::<Price>().unwrap().raw(), -15_000);
        assert_eq!(Price::from_raw(982_500).to_string(), "98.25");
        assert_eq!(Price::from_raw(980_000).to_string(), "98");
        assert_eq!(Price::from_raw(982_503).to_string(), "98.2503");
        assert_eq!(Price::from_raw(-15_000).to_string(), "-1.5");
        assert_eq!(Price::from_raw(30).to_string(), "0.003");
        assert!("98.25001".parse::<Price>().is_err());
        assert!("".parse::<Price>().is_err());
        assert!("9 8".parse::<Price>().is_err());
        assert!(".5".parse::<Price>().is_err());
    }

    #[test]
    fn price_display_reparses_exactly() {
        for raw in [0, 1, -1, 10_000, 982_503, -45, 120, i64::from(u32::MAX)] {
            let p = Price::from_raw(raw);
            let back: Price = p.to_string().parse().unwrap();
            assert_eq!(back, p, "raw {raw}");
        }
    }

    #[test]
    fn event_type_set_ops() {
        let tq = EventTypeSet::of(&[EventType::Trade, EventType::Quote]);
        assert!(tq.contains(EventType::Trade));
        assert!(!tq.contains(EventType::Status));
        assert!(tq.is_subset(EventTypeSet::all()));
        assert!(!EventTypeSet::all().is_subset(tq));
        assert_eq!(tq.iter().count(), 2);
        assert_eq!(EventTypeSet::from_mask(0), None);
        assert_eq!(EventTypeSet::from_mask(0b1000), None);
        assert_eq!(EventTypeSet::from_mask(tq.mask()), Some(tq));
    }

    #[test]
    fn validate_rejects_field_rule_violations() {
        let mut n = EventNotification {
            source: "SIM1".into(),
            seq: 1,
            symbol: sym("AAA.SIM"),
            event_type: EventType::Trade,
            instrument_class: InstrumentClass::Equity,
            price: Some(Price::from_units(100)),
            size: Some(10),
            bid: None,
            ask: None,
            source_ts_ms: 1,
            ingest_ts_ms: 2,
            enriched: None,
        };
        assert!(n.validate().is_ok());

        n.size = None;
        assert!(matches!(
            n.validate(),
            Err(ValidityError::MissingField(EventType::Trade, "size"))
        ));
        n.size = Some(10);

        n.price = Some(Price::from_raw(0));
        assert!(matches!(
            n.validate(),
            Err(ValidityError::NonPositivePrice("price"))
        ));
        n.price = Some(Price::from_units(100));

        n.event_type = EventType::Status;
        assert!(matches!(n.validate(), Err(ValidityError::StatusField("price"))));

        n.event_type = EventType::Quote;
        n.price = None;
        n.size = None;
        n.bid = Some(Price::from_units(99));
        n.ask = Some(Price::from_units(98));
        assert!(matches!(n.validate(), Err(ValidityError::CrossedQuote { .. })));

        n.seq = 0;
        n.ask = Some(Price::from_units(100));
        assert!(matches!(n.validate(), Err(ValidityError::ZeroSeq)));
    }
}
