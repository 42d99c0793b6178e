//! Notification TLV codec.
//!
//! Frame layout: magic `0xFD`, version `0x01`, u16 big-endian payload
//! length, then tag(1) + length(1) + value entries. Tags:
//!
//! | tag | field            | encoding            |
//! |-----|------------------|---------------------|
//! | 1   | source           | ascii               |
//! | 2   | seq              | u64 BE              |
//! | 3   | symbol           | ascii `CODE.MARKET` |
//! | 4   | event type       | u8 1/2/3            |
//! | 5   | price            | i64 BE, scale 1e-4  |
//! | 6   | size             | u32 BE              |
//! | 7   | bid              | i64 BE              |
//! | 8   | ask              | i64 BE              |
//! | 9   | source_ts_ms     | u64 BE              |
//! | 10  | ingest_ts_ms     | u64 BE              |
//! | 11  | instrument class | u8, absent = OTHER  |
//! | 12  | enrichment block | nested TLV          |
//!
//! Nested enrichment tags: 1=open, 2=high, 3=low, 4=last (i64 BE),
//! 5=total_volume, 6=trade_count (u64 BE), 7=prev_close (i64 BE).
//! Unknown tags are skipped on decode, not preserved.

use thiserror::Error;

use super::{
    is_valid_source, EnrichmentBlock, EventNotification, EventType, InstrumentClass, Price,
    SymbolKey, ValidityError,
};

pub const FRAME_MAGIC: u8 = 0xFD;
pub const FRAME_VERSION: u8 = 0x01;
/// Magic + version + u16 payload length.
pub const FRAME_HEADER_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic 0x{found:02X} at offset {offset}")]
    BadMagic { offset: usize, found: u8 },
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("frame truncated at offset {0}")]
    Truncated(usize),
    #[error("tag {tag} at offset {offset}: {reason}")]
    BadValue {
        tag: u8,
        offset: usize,
        reason: String,
    },
    #[error("duplicate tag {0}")]
    DuplicateTag(u8),
    #[error("tag {0} absent")]
    MissingTag(u8),
    #[error("invalid notification: {0}")]
    Invalid(#[from] ValidityError),
}

/// Append-only TLV writer used for notification frames and the nested
/// enrichment block.
pub(crate) struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        TlvWriter { buf: Vec::with_capacity(96) }
    }

    pub fn put(&mut self, tag: u8, value: &[u8]) {
        debug_assert!(value.len() <= u8::MAX as usize);
        self.buf.push(tag);
        self.buf.push(value.len() as u8);
        self.buf.extend_from_slice(value);
    }

    pub fn put_u32(&mut self, tag: u8, v: u32) {
        self.put(tag, &v.to_be_bytes());
    }

    pub fn put_u64(&mut self, tag: u8, v: u64) {
        self.put(tag, &v.to_be_bytes());
    }

    pub fn put_i64(&mut self, tag: u8, v: i64) {
        self.put(tag, &v.to_be_bytes());
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.buf
    }

    /// Wraps the payload in the frame header.
    pub fn into_frame(self) -> Vec<u8> {
        let payload = self.buf;
        assert!(payload.len() <= u16::MAX as usize, "payload exceeds frame limit");
        let mut frame = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        frame.push(FRAME_MAGIC);
        frame.push(FRAME_VERSION);
        frame.extend_from_slice(&(payload.len() as u16).to_be_bytes());
        frame.extend_from_slice(&payload);
        frame
    }
}

fn write_enrichment(block: &EnrichmentBlock) -> Vec<u8> {
    let mut w = TlvWriter::new();
    w.put_i64(1, block.day_open.raw());
    w.put_i64(2, block.day_high.raw());
    w.put_i64(3, block.day_low.raw());
    w.put_i64(4, block.last.raw());
    w.put_u64(5, block.total_volume);
    w.put_u64(6, block.trade_count);
    if let Some(prev) = block.prev_close {
        w.put_i64(7, prev.raw());
    }
    w.into_payload()
}

/// Encodes a notification as one frame. Equal notifications encode to
/// identical bytes; the OTHER instrument class is represented by omitting
/// tag 11.
pub fn encode_notification(n: &EventNotification) -> Vec<u8> {
    debug_assert!(n.validate().is_ok(), "encoding invalid notification");
    let mut w = TlvWriter::new();
    w.put(1, n.source.as_bytes());
    w.put_u64(2, n.seq);
    w.put(3, n.symbol.rendered().as_bytes());
    w.put(4, &[n.event_type.wire_code()]);
    if let Some(price) = n.price {
        w.put_i64(5, price.raw());
    }
    if let Some(size) = n.size {
        w.put_u32(6, size);
    }
    if let Some(bid) = n.bid {
        w.put_i64(7, bid.raw());
    }
    if let Some(ask) = n.ask {
        w.put_i64(8, ask.raw());
    }
    w.put_u64(9, n.source_ts_ms);
    w.put_u64(10, n.ingest_ts_ms);
    if n.instrument_class != InstrumentClass::Other {
        w.put(11, &[n.instrument_class.wire_code()]);
    }
    if let Some(block) = &n.enriched {
        w.put(12, &write_enrichment(block));
    }
    w.into_frame()
}

/// All fields a frame can carry, before any mandatory-tag or validity
/// policy is applied. Feed handlers and the strict notification decoder
/// impose different requirements on the same structure.
#[derive(Debug, Default, Clone)]
pub(crate) struct FrameFields {
    pub source: Option<String>,
    pub seq: Option<u64>,
    pub symbol: Option<SymbolKey>,
    pub event_type: Option<EventType>,
    pub price: Option<Price>,
    pub size: Option<u32>,
    pub bid: Option<Price>,
    pub ask: Option<Price>,
    pub source_ts_ms: Option<u64>,
    pub ingest_ts_ms: Option<u64>,
    pub instrument_class: Option<InstrumentClass>,
    pub enriched: Option<EnrichmentBlock>,
}

fn bad(tag: u8, offset: usize, reason: &str) -> CodecError {
    CodecError::BadValue { tag, offset, reason: reason.to_string() }
}

fn be_u64(tag: u8, offset: usize, v: &[u8]) -> Result<u64, CodecError> {
    let arr: [u8; 8] = v.try_into().map_err(|_| bad(tag, offset, "want 8 bytes"))?;
    Ok(u64::from_be_bytes(arr))
}

fn be_i64(tag: u8, offset: usize, v: &[u8]) -> Result<i64, CodecError> {
    let arr: [u8; 8] = v.try_into().map_err(|_| bad(tag, offset, "want 8 bytes"))?;
    Ok(i64::from_be_bytes(arr))
}

fn decode_enrichment(tag: u8, base: usize, payload: &[u8]) -> Result<EnrichmentBlock, CodecError> {
    let mut open = None;
    let mut high = None;
    let mut low = None;
    let mut last = None;
    let mut total_volume = None;
    let mut trade_count = None;
    let mut prev_close = None;
    let mut pos = 0usize;
    while pos < payload.len() {
        if pos + 2 > payload.len() {
            return Err(CodecError::Truncated(base + pos));
        }
        let sub_tag = payload[pos];
        let len = payload[pos + 1] as usize;
        let value_at = base + pos + 2;
        pos += 2;
        if pos + len > payload.len() {
            return Err(CodecError::Truncated(base + pos));
        }
        let value = &payload[pos..pos + len];
        pos += len;
        match sub_tag {
            1 => open = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            2 => high = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            3 => low = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            4 => last = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            5 => total_volume = Some(be_u64(tag, value_at, value)?),
            6 => trade_count = Some(be_u64(tag, value_at, value)?),
            7 => prev_close = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            _ => {} // unknown nested tags are skipped
        }
    }
    match (open, high, low, last, total_volume, trade_count) {
        (Some(day_open), Some(day_high), Some(day_low), Some(last), Some(tv), Some(tc)) => {
            Ok(EnrichmentBlock {
                day_open,
                day_high,
                day_low,
                last,
                total_volume: tv,
                trade_count: tc,
                prev_close,
            })
        }
        _ => Err(bad(tag, base, "incomplete enrichment block")),
    }
}

/// Structural parse of one frame from the front of `bytes`: header checks,
/// per-field grammar, duplicate and unknown-tag handling. Returns the
/// fields and the total frame length consumed.
pub(crate) fn read_frame_fields(bytes: &[u8]) -> Result<(FrameFields, usize), CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::Truncated(0));
    }
    if bytes[0] != FRAME_MAGIC {
        return Err(CodecError::BadMagic { offset: 0, found: bytes[0] });
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(CodecError::Truncated(bytes.len()));
    }
    if bytes[1] != FRAME_VERSION {
        return Err(CodecError::BadVersion(bytes[1]));
    }
    let payload_len = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    let frame_len = FRAME_HEADER_LEN + payload_len;
    if bytes.len() < frame_len {
        return Err(CodecError::Truncated(bytes.len()));
    }
    let payload = &bytes[FRAME_HEADER_LEN..frame_len];

    let mut fields = FrameFields::default();
    let mut seen = [false; 13];
    let mut pos = 0usize;
    while pos < payload.len() {
        let tag_at = FRAME_HEADER_LEN + pos;
        if pos + 2 > payload.len() {
            return Err(CodecError::Truncated(tag_at));
        }
        let tag = payload[pos];
        let len = payload[pos + 1] as usize;
        let value_at = tag_at + 2;
        pos += 2;
        if pos + len > payload.len() {
            return Err(CodecError::Truncated(value_at));
        }
        let value = &payload[pos..pos + len];
        pos += len;
        if let Some(flag) = seen.get_mut(tag as usize) {
            if *flag {
                return Err(CodecError::DuplicateTag(tag));
            }
            *flag = true;
        }
        match tag {
            1 => {
                let s = std::str::from_utf8(value).map_err(|_| bad(tag, value_at, "not ascii"))?;
                if !is_valid_source(s) {
                    return Err(bad(tag, value_at, "invalid source"));
                }
                fields.source = Some(s.to_string());
            }
            2 => fields.seq = Some(be_u64(tag, value_at, value)?),
            3 => {
                let s = std::str::from_utf8(value).map_err(|_| bad(tag, value_at, "not ascii"))?;
                fields.symbol =
                    Some(SymbolKey::parse(s).map_err(|e| bad(tag, value_at, &e.to_string()))?);
            }
            4 => {
                let [code] = value else {
                    return Err(bad(tag, value_at, "want 1 byte"));
                };
                fields.event_type = Some(
                    EventType::from_wire(*code)
                        .ok_or_else(|| bad(tag, value_at, "unknown event type"))?,
                );
            }
            5 => fields.price = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            6 => {
                let arr: [u8; 4] =
                    value.try_into().map_err(|_| bad(tag, value_at, "want 4 bytes"))?;
                fields.size = Some(u32::from_be_bytes(arr));
            }
            7 => fields.bid = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            8 => fields.ask = Some(Price::from_raw(be_i64(tag, value_at, value)?)),
            9 => fields.source_ts_ms = Some(be_u64(tag, value_at, value)?),
            10 => fields.ingest_ts_ms = Some(be_u64(tag, value_at, value)?),
            11 => {
                let [code] = value else {
                    return Err(bad(tag, value_at, "want 1 byte"));
                };
                fields.instrument_class = Some(
                    InstrumentClass::from_wire(*code)
                        .ok_or_else(|| bad(tag, value_at, "unknown instrument class"))?,
                );
            }
            12 => fields.enriched = Some(decode_enrichment(tag, value_at, value)?),
            _ => {} // unknown tags are skipped
        }
    }
    Ok((fields, frame_len))
}

/// Decodes one complete notification frame from the front of `bytes`,
/// returning the value and the bytes consumed. Requires mandatory tags
/// 1, 2, 3, 4, 9, 10 and full notification validity.
pub fn decode_frame(bytes: &[u8]) -> Result<(EventNotification, usize), CodecError> {
    let (fields, consumed) = read_frame_fields(bytes)?;
    let source = fields.source.ok_or(CodecError::MissingTag(1))?;
    let seq = fields.seq.ok_or(CodecError::MissingTag(2))?;
    let symbol = fields.symbol.ok_or(CodecError::MissingTag(3))?;
    let event_type = fields.event_type.ok_or(CodecError::MissingTag(4))?;
    let source_ts_ms = fields.source_ts_ms.ok_or(CodecError::MissingTag(9))?;
    let ingest_ts_ms = fields.ingest_ts_ms.ok_or(CodecError::MissingTag(10))?;
    let n = EventNotification {
        source,
        seq,
        symbol,
        event_type,
        instrument_class: fields.instrument_class.unwrap_or(InstrumentClass::Other),
        price: fields.price,
        size: fields.size,
        bid: fields.bid,
        ask: fields.ask,
        source_ts_ms,
        ingest_ts_ms,
        enriched: fields.enriched,
    };
    n.validate()?;
    Ok((n, consumed))
}

/// Decodes exactly one frame spanning the whole input.
pub fn decode_notification(bytes: &[u8]) -> Result<EventNotification, CodecError> {
    let (n, consumed) = decode_frame(bytes)?;
    if consumed != bytes.len() {
        return Err(CodecError::BadValue {
            tag: 0,
            offset: consumed,
            reason: format!("{} trailing bytes after frame", bytes.len() - consumed),
        });
    }
    Ok(n)
}
