//! Subscription filter algebra: matching, covering and cover-reduction.
//!
//! Covering is a field-wise sufficient condition: it never claims a cover
//! that does not hold, but it may miss exotic semantic covers. That only
//! costs advertisement compactness, never correctness.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use thiserror::Error;

use super::{
    EventNotification, EventType, EventTypeSet, InstrumentClass, SubscriptionFilter, SymbolKey,
    SymbolSelector,
};

/// True iff every populated field of `filter` accepts the corresponding
/// notification field.
pub fn filter_matches(filter: &SubscriptionFilter, n: &EventNotification) -> bool {
    if let Some(source) = &filter.source {
        if *source != n.source {
            return false;
        }
    }
    if let Some(class) = filter.instrument_class {
        if class != n.instrument_class {
            return false;
        }
    }
    if let Some(types) = filter.event_types {
        if !types.contains(n.event_type) {
            return false;
        }
    }
    if let Some(selector) = &filter.symbols {
        match selector {
            SymbolSelector::Set(set) => {
                if !set.contains(&n.symbol) {
                    return false;
                }
            }
            SymbolSelector::Prefix(prefix) => {
                if !n.symbol.rendered().starts_with(prefix.as_str()) {
                    return false;
                }
            }
        }
    }
    true
}

/// True only if the match set of `a` is a superset of the match set of `b`.
///
/// Field-wise test: each populated field of `a` must be wildcard-or-superset
/// of `b`'s corresponding field. A prefix covers longer prefixes, and symbol
/// sets whose every rendered form starts with it; a finite set never covers
/// a prefix.
pub fn filter_covers(a: &SubscriptionFilter, b: &SubscriptionFilter) -> bool {
    if let Some(a_source) = &a.source {
        match &b.source {
            Some(b_source) if a_source == b_source => {}
            _ => return false,
        }
    }
    if let Some(a_class) = a.instrument_class {
        match b.instrument_class {
            Some(b_class) if a_class == b_class => {}
            _ => return false,
        }
    }
    if let Some(a_types) = a.event_types {
        match b.event_types {
            Some(b_types) if b_types.is_subset(a_types) => {}
            _ => return false,
        }
    }
    if let Some(a_sel) = &a.symbols {
        let Some(b_sel) = &b.symbols else {
            return false;
        };
        let ok = match (a_sel, b_sel) {
            (SymbolSelector::Set(a_set), SymbolSelector::Set(b_set)) => b_set.is_subset(a_set),
            (SymbolSelector::Prefix(a_pre), SymbolSelector::Prefix(b_pre)) => {
                b_pre.starts_with(a_pre.as_str())
            }
            (SymbolSelector::Prefix(a_pre), SymbolSelector::Set(b_set)) => b_set
                .iter()
                .all(|s| s.rendered().starts_with(a_pre.as_str())),
            (SymbolSelector::Set(_), SymbolSelector::Prefix(_)) => false,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Removes every filter that is covered by another element of the set. The
/// union of match sets is preserved exactly; output order is the canonical
/// (serialized-bytes) order of [`Ord`] on `SubscriptionFilter`.
pub fn merge_filters(filters: &BTreeSet<SubscriptionFilter>) -> BTreeSet<SubscriptionFilter> {
    filters
        .iter()
        .filter(|f| {
            !filters
                .iter()
                .any(|other| *other != **f && filter_covers(other, f))
        })
        .cloned()
        .collect()
}

impl SubscriptionFilter {
    /// Canonical serialized form: tag/length/value entries in ascending tag
    /// order with symbol sets sorted. Equal filters encode identically and
    /// distinct filters differ, so byte comparison is a total order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |tag: u8, value: &[u8]| {
            debug_assert!(value.len() <= u8::MAX as usize);
            out.push(tag);
            out.push(value.len() as u8);
            out.extend_from_slice(value);
        };
        if let Some(source) = &self.source {
            put(1, source.as_bytes());
        }
        if let Some(class) = self.instrument_class {
            put(2, &[class.wire_code()]);
        }
        if let Some(types) = self.event_types {
            put(3, &[types.mask()]);
        }
        match &self.symbols {
            Some(SymbolSelector::Set(set)) => {
                for sym in set {
                    put(4, sym.rendered().as_bytes());
                }
            }
            Some(SymbolSelector::Prefix(prefix)) => put(5, prefix.as_bytes()),
            None => {}
        }
        out
    }

    /// Inverse of [`canonical_bytes`](Self::canonical_bytes); used by the
    /// wire protocol for SUB and SUBADV payloads.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, FilterDecodeError> {
        let mut filter = SubscriptionFilter::wildcard();
        let mut symbols: BTreeSet<SymbolKey> = BTreeSet::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            if pos + 2 > bytes.len() {
                return Err(FilterDecodeError::Truncated(pos));
            }
            let tag = bytes[pos];
            let len = bytes[pos + 1] as usize;
            pos += 2;
            if pos + len > bytes.len() {
                return Err(FilterDecodeError::Truncated(pos));
            }
            let value = &bytes[pos..pos + len];
            pos += len;
            match tag {
                1 => {
                    let s = std::str::from_utf8(value)
                        .map_err(|_| FilterDecodeError::BadValue(tag))?;
                    if !super::is_valid_source(s) {
                        return Err(FilterDecodeError::BadValue(tag));
                    }
                    filter.source = Some(s.to_string());
                }
                2 => {
                    let [code] = value else {
                        return Err(FilterDecodeError::BadValue(tag));
                    };
                    filter.instrument_class = Some(
                        InstrumentClass::from_wire(*code)
                            .ok_or(FilterDecodeError::BadValue(tag))?,
                    );
                }
                3 => {
                    let [mask] = value else {
                        return Err(FilterDecodeError::BadValue(tag));
                    };
                    filter.event_types =
                        Some(EventTypeSet::from_mask(*mask).ok_or(FilterDecodeError::BadValue(tag))?);
                }
                4 => {
                    let s = std::str::from_utf8(value)
                        .map_err(|_| FilterDecodeError::BadValue(tag))?;
                    let sym =
                        SymbolKey::parse(s).map_err(|_| FilterDecodeError::BadValue(tag))?;
                    symbols.insert(sym);
                }
                5 => {
                    let s = std::str::from_utf8(value)
                        .map_err(|_| FilterDecodeError::BadValue(tag))?;
                    filter.symbols = Some(SymbolSelector::Prefix(s.to_string()));
                }
                _ => return Err(FilterDecodeError::UnknownTag(tag)),
            }
        }
        if !symbols.is_empty() {
            if filter.symbols.is_some() {
                return Err(FilterDecodeError::SetAndPrefix);
            }
            filter.symbols = Some(SymbolSelector::Set(symbols));
        }
        Ok(filter)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterDecodeError {
    #[error("filter truncated at offset {0}")]
    Truncated(usize),
    #[error("bad value for filter tag {0}")]
    BadValue(u8),
    #[error("unknown filter tag {0}")]
    UnknownTag(u8),
    #[error("filter carries both a symbol set and a prefix")]
    SetAndPrefix,
}

impl PartialOrd for SubscriptionFilter {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SubscriptionFilter {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_bytes().cmp(&other.canonical_bytes())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("filter expression error at token {position}: {message}")]
pub struct FilterExprError {
    /// 1-based index of the offending space-separated token.
    pub position: usize,
    pub message: String,
}

/// Parses the operator-facing filter expression: space-separated
/// `key=value` pairs with keys `source`, `class`, `type` (comma list),
/// `symbol` (comma list) and `prefix`. An empty expression is the wildcard.
pub fn parse_filter_expr(expr: &str) -> Result<SubscriptionFilter, FilterExprError> {
    let mut filter = SubscriptionFilter::wildcard();
    let err = |position: usize, message: &str| FilterExprError {
        position,
        message: message.to_string(),
    };
    for (idx, token) in expr.split_whitespace().enumerate() {
        let position = idx + 1;
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(position, "expected key=value"))?;
        if value.is_empty() {
            return Err(err(position, "empty value"));
        }
        match key {
            "source" => {
                if !super::is_valid_source(value) {
                    return Err(err(position, "invalid source"));
                }
                filter.source = Some(value.to_string());
            }
            "class" => {
                filter.instrument_class = Some(
                    InstrumentClass::parse(value)
                        .ok_or_else(|| err(position, "unknown instrument class"))?,
                );
            }
            "type" => {
                let mut set = EventTypeSet::empty();
                for part in value.split(',') {
                    set.insert(
                        EventType::parse(part)
                            .ok_or_else(|| err(position, "unknown event type"))?,
                    );
                }
                filter.event_types = Some(set);
            }
            "symbol" => {
                if filter.symbols.is_some() {
                    return Err(err(position, "symbol and prefix are mutually exclusive"));
                }
                let mut set = BTreeSet::new();
                for part in value.split(',') {
                    set.insert(
                        SymbolKey::parse(part).map_err(|e| err(position, &e.to_string()))?,
                    );
                }
                filter.symbols = Some(SymbolSelector::Set(set));
            }
            "prefix" => {
                if filter.symbols.is_some() {
                    return Err(err(position, "symbol and prefix are mutually exclusive"));
                }
                filter.symbols = Some(SymbolSelector::Prefix(value.to_string()));
            }
            _ => return Err(err(position, "unknown key")),
        }
    }
    Ok(filter)
}

/// Renders a filter back into expression form (inverse of
/// [`parse_filter_expr`] up to key order).
pub fn filter_expr(filter: &SubscriptionFilter) -> String {
    let mut parts = Vec::new();
    if let Some(source) = &filter.source {
        parts.push(format!("source={source}"));
    }
    if let Some(class) = filter.instrument_class {
        parts.push(format!("class={class}"));
    }
    if let Some(types) = filter.event_types {
        let names: Vec<&str> = types.iter().map(|t| t.name()).collect();
        parts.push(format!("type={}", names.join(",")));
    }
    match &filter.symbols {
        Some(SymbolSelector::Set(set)) => {
            let names: Vec<String> = set.iter().map(|s| s.rendered()).collect();
            parts.push(format!("symbol={}", names.join(",")));
        }
        Some(SymbolSelector::Prefix(prefix)) => parts.push(format!("prefix={prefix}")),
        None => {}
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventNotification, Price};

    fn sym(s: &str) -> SymbolKey {
        SymbolKey::parse(s).unwrap()
    }

    fn note(source: &str, symbol: &str, event_type: EventType) -> EventNotification {
        let (price, size, bid, ask) = match event_type {
            EventType::Trade => (Some(Price::from_units(100)), Some(10), None, None),
            EventType::Quote => (
                None,
                None,
                Some(Price::from_units(99)),
                Some(Price::from_units(101)),
            ),
            EventType::Status => (None, None, None, None),
        };
        EventNotification {
            source: source.to_string(),
            seq: 1,
            symbol: sym(symbol),
            event_type,
            instrument_class: InstrumentClass::Equity,
            price,
            size,
            bid,
            ask,
            source_ts_ms: 1,
            ingest_ts_ms: 1,
            enriched: None,
        }
    }

    fn f(expr: &str) -> SubscriptionFilter {
        parse_filter_expr(expr).unwrap()
    }

    #[test]
    fn matches_single_field() {
        let n = note("XETRA", "AAA.SIM", EventType::Trade);
        assert!(filter_matches(&f("source=XETRA"), &n));
        assert!(!filter_matches(&f("symbol=AAA.SIM"), &note("X", "BBB.SIM", EventType::Trade)));
    }

    #[test]
    fn matches_is_a_conjunction() {
        let n = note("XETRA", "AAA.SIM", EventType::Quote);
        assert!(!filter_matches(&f("source=XETRA type=TRADE"), &n));
        assert!(filter_matches(&f("source=XETRA type=TRADE,QUOTE"), &n));
        assert!(filter_matches(&SubscriptionFilter::wildcard(), &n));
    }

    #[test]
    fn prefix_matches_rendered_form() {
        let n = note("XETRA", "AAA.SIM", EventType::Trade);
        assert!(filter_matches(&f("prefix=AA"), &n));
        assert!(filter_matches(&f("prefix=AAA.S"), &n));
        assert!(!filter_matches(&f("prefix=AAB"), &n));
    }

    #[test]
    fn covers_reflexive_and_fieldwise() {
        let a = f("source=XETRA");
        let b = f("source=XETRA symbol=AAA.SIM");
        assert!(filter_covers(&a, &a));
        assert!(filter_covers(&a, &b));
        assert!(!filter_covers(&b, &a));
        assert!(!filter_covers(&f("symbol=AAA.SIM"), &f("symbol=BBB.SIM")));
    }

    #[test]
    fn covers_prefix_rules() {
        assert!(filter_covers(&f("prefix=AA"), &f("prefix=AAA")));
        assert!(!filter_covers(&f("prefix=AAA"), &f("prefix=AA")));
        assert!(filter_covers(&f("prefix=AA"), &f("symbol=AAA.SIM,AAB.SIM")));
        assert!(!filter_covers(&f("prefix=AA"), &f("symbol=AAA.SIM,BBB.SIM")));
        assert!(!filter_covers(&f("symbol=AAA.SIM"), &f("prefix=AAA.SIM")));
        assert!(filter_covers(&SubscriptionFilter::wildcard(), &f("prefix=A")));
    }

    #[test]
    fn merge_drops_covered_filters() {
        let single: BTreeSet<_> = [f("source=A")].into();
        assert_eq!(merge_filters(&single), single);

        let with_wildcard: BTreeSet<_> =
            [SubscriptionFilter::wildcard(), f("source=A"), f("symbol=AAA.SIM")].into();
        let merged = merge_filters(&with_wildcard);
        assert_eq!(merged, [SubscriptionFilter::wildcard()].into());

        let set: BTreeSet<_> = [f("source=A"), f("source=A type=TRADE"), f("source=B")].into();
        assert_eq!(merge_filters(&set), [f("source=A"), f("source=B")].into());
    }

    #[test]
    fn canonical_bytes_roundtrip_and_order() {
        for expr in [
            "",
            "source=XETRA",
            "class=FUND type=TRADE,STATUS symbol=AAA.SIM,BBB.SIM",
            "prefix=AA",
            "source=SIM1 class=OTHER type=QUOTE prefix=AAA.",
        ] {
            let filter = f(expr);
            let bytes = filter.canonical_bytes();
            assert_eq!(SubscriptionFilter::from_canonical_bytes(&bytes).unwrap(), filter);
        }
        assert!(SubscriptionFilter::from_canonical_bytes(&[1]).is_err());
        assert!(SubscriptionFilter::from_canonical_bytes(&[9, 0]).is_err());
        // set+prefix combination is rejected
        let mut bad = f("symbol=AAA.SIM").canonical_bytes();
        bad.extend_from_slice(&f("prefix=A").canonical_bytes());
        assert!(matches!(
            SubscriptionFilter::from_canonical_bytes(&bad),
            Err(FilterDecodeError::SetAndPrefix)
        ));
    }

    #[test]
    fn expr_errors_carry_position() {
        assert_eq!(parse_filter_expr("source=A bogus").unwrap_err().position, 2);
        assert_eq!(parse_filter_expr("typ=TRADE").unwrap_err().position, 1);
        assert_eq!(
            parse_filter_expr("symbol=AAA.SIM prefix=A").unwrap_err().position,
            2
        );
    }

    #[test]
    fn expr_roundtrip() {
        for expr in [
            "source=XETRA class=EQUITY type=TRADE,QUOTE symbol=AAA.SIM,BBB.SIM",
            "prefix=AA",
            "",
        ] {
            let filter = f(expr);
            assert_eq!(f(&filter_expr(&filter)), filter);
        }
    }
}
