//! Seeded synthetic feed generation: per-symbol geometric random-walk
//! prices with a configurable trade/quote mix. Identical seeds produce
//! identical event streams; all arithmetic is integer fixed-point so no
//! float nondeterminism can creep in.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::feedpipe::{OriginFormat, RawFeedEvent};
use crate::model::{EventType, Price, SymbolKey, PRICE_SCALE};

/// Walk step bound: +/- 0.2% per tick, in 1e-4 steps of the multiplier.
const WALK_STEP_LIMIT: i64 = 20;

/// Deterministic symbol universe for a feed source: codes AAA, AAB, ... on
/// a market derived from the source's letters (up to four, padded with X).
pub fn symbols_for_source(source: &str, count: usize) -> Vec<SymbolKey> {
    let letters: String = source.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    let mut market = letters.chars().take(4).collect::<String>().to_ascii_uppercase();
    while market.is_empty() || market.len() < 3 {
        market.push('X');
    }
    (0..count)
        .map(|i| {
            let code = format!(
                "{}{}{}",
                char::from(b'A' + (i / 676 % 26) as u8),
                char::from(b'A' + (i / 26 % 26) as u8),
                char::from(b'A' + (i % 26) as u8)
            );
            SymbolKey::new(&code, &market).expect("generated symbol is valid")
        })
        .collect()
}

/// Seeded event generator for one feed source.
#[derive(Debug)]
pub struct FeedSynth {
    source: String,
    symbols: Vec<SymbolKey>,
    prices_raw: Vec<i64>,
    rng: ChaCha8Rng,
    trade_pct: u8,
    next_seq: u64,
    events_emitted: u64,
}

impl FeedSynth {
    pub fn new(source: &str, symbol_count: usize, seed: u64, trade_pct: u8) -> Self {
        let symbols = symbols_for_source(source, symbol_count.max(1));
        // Staggered start prices around 100.
        let prices_raw = (0..symbols.len())
            .map(|i| 100 * PRICE_SCALE + (i as i64) * PRICE_SCALE / 4)
            .collect();
        FeedSynth {
            source: source.to_string(),
            symbols,
            prices_raw,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trade_pct: trade_pct.min(100),
            next_seq: 1,
            events_emitted: 0,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn symbols(&self) -> &[SymbolKey] {
        &self.symbols
    }

    pub fn events_emitted(&self) -> u64 {
        self.events_emitted
    }

    /// Current walk price for a symbol index.
    pub fn price_of(&self, symbol_idx: usize) -> Price {
        Price::from_raw(self.prices_raw[symbol_idx])
    }

    /// Produces the next event, stamped with `source_ts_ms`.
    pub fn next_event(&mut self, source_ts_ms: u64) -> RawFeedEvent {
        let idx = self.rng.random_range(0..self.symbols.len());
        // price_{t+1} = price_t * (1 + k/1e4), k in [-20, +20]
        let step: i64 = self.rng.random_range(-WALK_STEP_LIMIT..=WALK_STEP_LIMIT);
        let price = &mut self.prices_raw[idx];
        *price += *price * step / (PRICE_SCALE * 10);
        if *price < 1 {
            *price = 1;
        }
        let is_trade = self.rng.random_range(0..100) < u32::from(self.trade_pct);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events_emitted += 1;
        let mut event = RawFeedEvent {
            source: self.source.clone(),
            seq,
            symbol: self.symbols[idx].clone(),
            event_type: EventType::Trade,
            instrument_class: None,
            price: None,
            size: None,
            bid: None,
            ask: None,
            source_ts_ms,
            origin_format: OriginFormat::Text,
            raw_offset: seq,
        };
        if is_trade {
            event.price = Some(Price::from_raw(*price));
            event.size = Some(self.rng.random_range(1..=1_000));
        } else {
            event.event_type = EventType::Quote;
            // half-spread up to 0.1% of price, at least one tick
            let half_spread = (*price / 2_000).max(1) ;
            let jitter: i64 = self.rng.random_range(0..=half_spread);
            let bid = (*price - half_spread - jitter).max(1);
            let ask = *price + half_spread + jitter;
            event.bid = Some(Price::from_raw(bid));
            event.ask = Some(Price::from_raw(ask));
        }
        event
    }
}
