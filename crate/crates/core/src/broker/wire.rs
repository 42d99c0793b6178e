//! Broker wire protocol, used between brokers and by clients and feeds:
//! frames of u32 big-endian length, u8 kind, payload.
//!
//! Kinds: 1=HELLO, 2=SUB, 3=UNSUB, 4=PUB, 5=LSA, 6=SUBADV, 7=HEARTBEAT,
//! 8=CREDIT. Short strings are u8-length-prefixed ASCII; counts are u16.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{FilterDecodeError, Qoi, SubscriptionFilter};
use crate::overlay::Lsa;

/// Sanity cap; no legitimate frame approaches this.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PeerKind {
    Client,
    NeighborBroker,
    Feed,
}

impl PeerKind {
    fn wire_code(self) -> u8 {
        match self {
            PeerKind::Client => 1,
            PeerKind::NeighborBroker => 2,
            PeerKind::Feed => 3,
        }
    }

    fn from_wire(code: u8) -> Option<Self> {
        match code {
            1 => Some(PeerKind::Client),
            2 => Some(PeerKind::NeighborBroker),
            3 => Some(PeerKind::Feed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireFrame {
    Hello {
        node_id: String,
        kind: PeerKind,
        site: String,
    },
    Sub {
        sub_id: u64,
        qoi: Qoi,
        filter: SubscriptionFilter,
    },
    Unsub {
        sub_id: u64,
    },
    /// Payload is a notification TLV frame, passed through opaquely so
    /// forwarding stays byte-identical.
    Pub {
        frame: Vec<u8>,
    },
    Lsa(Lsa),
    SubAdv {
        advert_seq: u64,
        filters: Vec<SubscriptionFilter>,
    },
    Heartbeat {
        ts_ms: u64,
    },
    Credit {
        n: u32,
    },
}

impl WireFrame {
    pub fn kind_code(&self) -> u8 {
        match self {
            WireFrame::Hello { .. } => 1,
            WireFrame::Sub { .. } => 2,
            WireFrame::Unsub { .. } => 3,
            WireFrame::Pub { .. } => 4,
            WireFrame::Lsa(_) => 5,
            WireFrame::SubAdv { .. } => 6,
            WireFrame::Heartbeat { .. } => 7,
            WireFrame::Credit { .. } => 8,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WireFrame::Hello { .. } => "HELLO",
            WireFrame::Sub { .. } => "SUB",
            WireFrame::Unsub { .. } => "UNSUB",
            WireFrame::Pub { .. } => "PUB",
            WireFrame::Lsa(_) => "LSA",
            WireFrame::SubAdv { .. } => "SUBADV",
            WireFrame::Heartbeat { .. } => "HEARTBEAT",
            WireFrame::Credit { .. } => "CREDIT",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated at offset {0}")]
    Truncated(usize),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("frame length {0} exceeds limit")]
    TooLarge(usize),
    #[error("declared length {declared} but {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("bad value in {0}")]
    BadValue(&'static str),
    #[error("bad filter: {0}")]
    Filter(#[from] FilterDecodeError),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u8) -> Self {
        // length placeholder patched in finish()
        Writer { buf: vec![0, 0, 0, 0, kind] }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn str8(&mut self, s: &str) {
        debug_assert!(s.len() <= u8::MAX as usize);
        self.buf.push(s.len() as u8);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn bytes16(&mut self, b: &[u8]) {
        debug_assert!(b.len() <= u16::MAX as usize);
        self.u16(b.len() as u16);
        self.buf.extend_from_slice(b);
    }

    fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn finish(mut self) -> Vec<u8> {
        let body_len = (self.buf.len() - 4) as u32;
        self.buf[0..4].copy_from_slice(&body_len.to_be_bytes());
        self.buf
    }
}

pub fn encode_wire_frame(frame: &WireFrame) -> Vec<u8> {
    let mut w = Writer::new(frame.kind_code());
    match frame {
        WireFrame::Hello { node_id, kind, site } => {
            w.u8(kind.wire_code());
            w.str8(node_id);
            w.str8(site);
        }
        WireFrame::Sub { sub_id, qoi, filter } => {
            w.u64(*sub_id);
            w.u8(qoi.wire_code());
            w.raw(&filter.canonical_bytes());
        }
        WireFrame::Unsub { sub_id } => w.u64(*sub_id),
        WireFrame::Pub { frame } => w.raw(frame),
        WireFrame::Lsa(lsa) => {
            w.str8(&lsa.origin);
            w.u64(lsa.seq);
            w.str8(&lsa.site);
            w.u16(lsa.neighbors.len() as u16);
            for (id, latency) in &lsa.neighbors {
                w.str8(id);
                w.u32(*latency);
            }
            w.u16(lsa.sources.len() as u16);
            for source in &lsa.sources {
                w.str8(source);
            }
            w.u16(lsa.interest.len() as u16);
            for filter in &lsa.interest {
                w.bytes16(&filter.canonical_bytes());
            }
        }
        WireFrame::SubAdv { advert_seq, filters } => {
            w.u64(*advert_seq);
            w.u16(filters.len() as u16);
            for filter in filters {
                w.bytes16(&filter.canonical_bytes());
            }
        }
        WireFrame::Heartbeat { ts_ms } => w.u64(*ts_ms),
        WireFrame::Credit { n } => w.u32(*n),
    }
    w.finish()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str8(&mut self) -> Result<String, WireError> {
        let len = self.u8()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::BadValue("string"))
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    fn done(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::LengthMismatch { declared: self.buf.len(), actual: self.pos })
        }
    }
}

/// Returns the total byte length of the frame at the front of `buf`, when
/// the length prefix is available. Used by stream transports to reassemble.
pub fn frame_len(buf: &[u8]) -> Result<Option<usize>, WireError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let body = u32::from_be_bytes(buf[0..4].try_into().unwrap()) as usize;
    if body > MAX_FRAME_BYTES {
        return Err(WireError::TooLarge(body));
    }
    Ok(Some(4 + body))
}

/// Decodes one complete frame (length prefix included, exactly spanning
/// `bytes`).
pub fn decode_wire_frame(bytes: &[u8]) -> Result<WireFrame, WireError> {
    let total = frame_len(bytes)?.ok_or(WireError::Truncated(bytes.len()))?;
    if total != bytes.len() {
        return Err(WireError::LengthMismatch { declared: total, actual: bytes.len() });
    }
    let kind = bytes[4];
    let mut r = Reader { buf: bytes, pos: 5 };
    let frame = match kind {
        1 => {
            let kind = PeerKind::from_wire(r.u8()?).ok_or(WireError::BadValue("peer kind"))?;
            let node_id = r.str8()?;
            let site = r.str8()?;
            WireFrame::Hello { node_id, kind, site }
        }
        2 => {
            let sub_id = r.u64()?;
            let qoi = Qoi::from_wire(r.u8()?).ok_or(WireError::BadValue("qoi"))?;
            let filter = SubscriptionFilter::from_canonical_bytes(r.rest())?;
            WireFrame::Sub { sub_id, qoi, filter }
        }
        3 => WireFrame::Unsub { sub_id: r.u64()? },
        4 => WireFrame::Pub { frame: r.rest().to_vec() },
        5 => {
            let origin = r.str8()?;
            let seq = r.u64()?;
            let site = r.str8()?;
            let mut neighbors = BTreeMap::new();
            for _ in 0..r.u16()? {
                let id = r.str8()?;
                let latency = r.u32()?;
                neighbors.insert(id, latency);
            }
            let mut sources = BTreeSet::new();
            for _ in 0..r.u16()? {
                sources.insert(r.str8()?);
            }
            let mut interest = BTreeSet::new();
            for _ in 0..r.u16()? {
                let len = r.u16()? as usize;
                let bytes = r.take(len)?;
                interest.insert(SubscriptionFilter::from_canonical_bytes(bytes)?);
            }
            WireFrame::Lsa(Lsa { origin, seq, site, neighbors, sources, interest })
        }
        6 => {
            let advert_seq = r.u64()?;
            let mut filters = Vec::new();
            for _ in 0..r.u16()? {
                let len = r.u16()? as usize;
                let bytes = r.take(len)?;
                filters.push(SubscriptionFilter::from_canonical_bytes(bytes)?);
            }
            WireFrame::SubAdv { advert_seq, filters }
        }
        7 => WireFrame::Heartbeat { ts_ms: r.u64()? },
        8 => WireFrame::Credit { n: r.u32()? },
        other => return Err(WireError::UnknownKind(other)),
    };
    r.done()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_filter_expr;

    fn roundtrip(frame: WireFrame) {
        let bytes = encode_wire_frame(&frame);
        assert_eq!(frame_len(&bytes).unwrap(), Some(bytes.len()));
        assert_eq!(decode_wire_frame(&bytes).unwrap(), frame);
    }

    #[test]
    fn all_kinds_roundtrip() {
        roundtrip(WireFrame::Hello {
            node_id: "b1".into(),
            kind: PeerKind::NeighborBroker,
            site: "FRA".into(),
        });
        roundtrip(WireFrame::Sub {
            sub_id: 9,
            qoi: Qoi::Complete,
            filter: parse_filter_expr("source=SIM1 type=TRADE symbol=AAA.SIM").unwrap(),
        });
        roundtrip(WireFrame::Unsub { sub_id: 9 });
        roundtrip(WireFrame::Pub { frame: vec![0xFD, 1, 0, 0] });
        roundtrip(WireFrame::Lsa(Lsa {
            origin: "b1".into(),
            seq: 42,
            site: "FRA".into(),
            neighbors: [("b2".to_string(), 5)].into(),
            sources: ["SIM1".to_string()].into(),
            interest: [parse_filter_expr("prefix=AA").unwrap()].into(),
        }));
        roundtrip(WireFrame::SubAdv {
            advert_seq: 3,
            filters: vec![
                SubscriptionFilter::wildcard(),
                parse_filter_expr("source=SIM1").unwrap(),
            ],
        });
        roundtrip(WireFrame::Heartbeat { ts_ms: 123_456 });
        roundtrip(WireFrame::Credit { n: 64 });
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = encode_wire_frame(&WireFrame::Heartbeat { ts_ms: 1 });
        assert!(decode_wire_frame(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(frame_len(&bytes[..3]).unwrap(), None);
        let mut bad_kind = bytes.clone();
        bad_kind[4] = 99;
        assert!(matches!(decode_wire_frame(&bad_kind), Err(WireError::UnknownKind(99))));
        // over-long declared length
        let mut huge = bytes;
        huge[0..4].copy_from_slice(&(MAX_FRAME_BYTES as u32 + 1).to_be_bytes());
        assert!(matches!(frame_len(&huge), Err(WireError::TooLarge(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_wire_frame(&WireFrame::Credit { n: 1 });
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(decode_wire_frame(&bytes).is_err());
    }
}
