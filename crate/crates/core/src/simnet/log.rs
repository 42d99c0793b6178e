//! Structured event log: everything the verifier needs to re-check a run,
//! rendered as one deterministic ASCII line per record.

use thiserror::Error;

use crate::model::{EventNotification, EventType, InstrumentClass, Price, SymbolKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    LinkDown,
    LinkUp,
    Crash,
}

impl FaultKind {
    fn name(self) -> &'static str {
        match self {
            FaultKind::LinkDown => "link_down",
            FaultKind::LinkUp => "link_up",
            FaultKind::Crash => "crash",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "link_down" => Some(FaultKind::LinkDown),
            "link_up" => Some(FaultKind::LinkUp),
            "crash" => Some(FaultKind::Crash),
            _ => None,
        }
    }
}

/// Filter-relevant identity of one notification as it appears in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteId {
    pub source: String,
    pub seq: u64,
    pub symbol: SymbolKey,
    pub event_type: EventType,
    pub class: InstrumentClass,
}

impl NoteId {
    pub fn of(n: &EventNotification) -> Self {
        NoteId {
            source: n.source.clone(),
            seq: n.seq,
            symbol: n.symbol.clone(),
            event_type: n.event_type,
            class: n.instrument_class,
        }
    }

    pub fn key(&self) -> (String, u64) {
        (self.source.clone(), self.seq)
    }

    /// A structurally valid notification carrying this identity; filters
    /// only read the identity fields, so dummy payloads suffice for
    /// oracle-side matching.
    pub fn stub(&self) -> EventNotification {
        let (price, size, bid, ask) = match self.event_type {
            EventType::Trade => (Some(Price::from_units(1)), Some(1), None, None),
            EventType::Quote => (None, None, Some(Price::from_units(1)), Some(Price::from_units(1))),
            EventType::Status => (None, None, None, None),
        };
        EventNotification {
            source: self.source.clone(),
            seq: self.seq,
            symbol: self.symbol.clone(),
            event_type: self.event_type,
            instrument_class: self.class,
            price,
            size,
            bid,
            ask,
            source_ts_ms: 0,
            ingest_ts_ms: 0,
            enriched: None,
        }
    }

    fn render(&self) -> String {
        format!(
            "src={} seq={} sym={} type={} class={}",
            self.source, self.seq, self.symbol, self.event_type, self.class
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogRecord {
    /// A feed-accepted notification entered the mesh at its ingress broker.
    Publish { t: u64, feed: String, note: NoteId },
    /// A feed event was purged.
    Reject { t: u64, feed: String, kind: String },
    /// One PUB copy traversed a link (recorded at arrival).
    LinkPub { t: u64, from: String, to: String, note: NoteId },
    /// A PUB copy died (carrier down, generation fenced, or dead broker).
    Lost { t: u64, from: String, to: String, source: String, seq: u64 },
    /// A subscriber drained one notification.
    Deliver { t: u64, sub: String, note: NoteId, latency_ms: u64 },
    /// A scenario fault was applied.
    Fault { t: u64, kind: FaultKind, a: String, b: Option<String> },
    /// Subscriber lifecycle markers.
    SubActive { t: u64, sub: String, active: bool },
    /// All live topology views became equal again.
    Converged { t: u64 },
}

impl LogRecord {
    pub fn t(&self) -> u64 {
        match self {
            LogRecord::Publish { t, .. }
            | LogRecord::Reject { t, .. }
            | LogRecord::LinkPub { t, .. }
            | LogRecord::Lost { t, .. }
            | LogRecord::Deliver { t, .. }
            | LogRecord::Fault { t, .. }
            | LogRecord::SubActive { t, .. }
            | LogRecord::Converged { t } => *t,
        }
    }

    pub fn render(&self) -> String {
        match self {
            LogRecord::Publish { t, feed, note } => {
                format!("t={t} ev=PUBLISH feed={feed} {}", note.render())
            }
            LogRecord::Reject { t, feed, kind } => {
                format!("t={t} ev=REJECT feed={feed} kind={kind}")
            }
            LogRecord::LinkPub { t, from, to, note } => {
                format!("t={t} ev=LINKPUB from={from} to={to} {}", note.render())
            }
            LogRecord::Lost { t, from, to, source, seq } => {
                format!("t={t} ev=LOST from={from} to={to} src={source} seq={seq}")
            }
            LogRecord::Deliver { t, sub, note, latency_ms } => {
                format!("t={t} ev=DELIVER sub={sub} {} lat={latency_ms}", note.render())
            }
            LogRecord::Fault { t, kind, a, b } => match b {
                Some(b) => format!("t={t} ev=FAULT kind={} a={a} b={b}", kind.name()),
                None => format!("t={t} ev=FAULT kind={} a={a}", kind.name()),
            },
            LogRecord::SubActive { t, sub, active } => {
                format!("t={t} ev=SUB sub={sub} active={active}")
            }
            LogRecord::Converged { t } => format!("t={t} ev=CONVERGED"),
        }
    }
}

pub fn render_log(log: &[LogRecord]) -> String {
    let mut out = String::new();
    for record in log {
        out.push_str(&record.render());
        out.push('\n');
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("log line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

fn fields_of(line: &str) -> Result<Vec<(&str, &str)>, String> {
    line.split_whitespace()
        .map(|token| token.split_once('=').ok_or_else(|| format!("bad token {token:?}")))
        .collect()
}

struct FieldMap<'a>(Vec<(&'a str, &'a str)>);

impl<'a> FieldMap<'a> {
    fn get(&self, key: &str) -> Result<&'a str, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing field {key}"))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, String> {
        self.get(key)?
            .parse()
            .map_err(|_| format!("bad number in field {key}"))
    }

    fn note(&self) -> Result<NoteId, String> {
        Ok(NoteId {
            source: self.get("src")?.to_string(),
            seq: self.num("seq")?,
            symbol: SymbolKey::parse(self.get("sym")?).map_err(|e| e.to_string())?,
            event_type: EventType::parse(self.get("type")?).ok_or("bad type")?,
            class: InstrumentClass::parse(self.get("class")?).ok_or("bad class")?,
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, LogParseError> {
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let record = (|| -> Result<LogRecord, String> {
            let fields = FieldMap(fields_of(line)?);
            let t: u64 = fields.num("t")?;
            Ok(match fields.get("ev")? {
                "PUBLISH" => LogRecord::Publish {
                    t,
                    feed: fields.get("feed")?.to_string(),
                    note: fields.note()?,
                },
                "REJECT" => LogRecord::Reject {
                    t,
                    feed: fields.get("feed")?.to_string(),
                    kind: fields.get("kind")?.to_string(),
                },
                "LINKPUB" => LogRecord::LinkPub {
                    t,
                    from: fields.get("from")?.to_string(),
                    to: fields.get("to")?.to_string(),
                    note: fields.note()?,
                },
                "LOST" => LogRecord::Lost {
                    t,
                    from: fields.get("from")?.to_string(),
                    to: fields.get("to")?.to_string(),
                    source: fields.get("src")?.to_string(),
                    seq: fields.num("seq")?,
                },
                "DELIVER" => LogRecord::Deliver {
                    t,
                    sub: fields.get("sub")?.to_string(),
                    note: fields.note()?,
                    latency_ms: fields.num("lat")?,
                },
                "FAULT" => LogRecord::Fault {
                    t,
                    kind: FaultKind::parse(fields.get("kind")?).ok_or("bad fault kind")?,
                    a: fields.get("a")?.to_string(),
                    b: fields.get("b").ok().map(|s| s.to_string()),
                },
                "SUB" => LogRecord::SubActive {
                    t,
                    sub: fields.get("sub")?.to_string(),
                    active: fields.num::<bool>("active").or_else(|_| {
                        fields.get("active").map(|v| v == "true")
                    })?,
                },
                "CONVERGED" => LogRecord::Converged { t },
                other => return Err(format!("unknown event {other:?}")),
            })
        })()
        .map_err(|message| LogParseError { line: line_no, message })?;
        out.push(record);
    }
    Ok(out)
}
