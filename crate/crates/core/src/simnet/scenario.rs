//! Scenario files: line-oriented ASCII, `#` comments.
//!
//! ```text
//! seed 42
//! site FRA
//! site MIL
//! broker b1 site=FRA store=mem
//! broker b2 site=MIL
//! link b1 b2 latency_ms=5 bandwidth_mps=1000
//! feed f1 broker=b1 source=SIM1 symbols=8 rate=50 seed=7 trade_pct=70
//! sub s1 broker=b2 qoi=COMPLETE filter="source=SIM1 type=TRADE" drain=100
//! at 10000 link_down b1 b2
//! at 15000 link_up b1 b2
//! end 30000
//! ```
//!
//! `feed` and `sub` accept optional `start=<t_ms>` / `stop=<t_ms>`. Feeds
//! default to starting at 1000 ms so publishing begins on a converged
//! mesh.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{parse_filter_expr, Qoi, SubscriptionFilter};
use crate::overlay::{BrokerId, SiteId};

/// Default feed start when the directive names none.
pub const DEFAULT_FEED_START_MS: u64 = 1_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: undefined {what} {id:?}")]
    Reference { line: usize, what: &'static str, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    None,
    Mem,
    Dir,
}

#[derive(Debug, Clone)]
pub struct BrokerSpec {
    pub site: SiteId,
    pub store: StoreKind,
}

#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub a: BrokerId,
    pub b: BrokerId,
    pub latency_ms: u32,
    pub bandwidth_mps: u32,
}

impl LinkSpec {
    pub fn touches(&self, x: &str, y: &str) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }
}

#[derive(Debug, Clone)]
pub struct FeedSpec {
    pub broker: BrokerId,
    pub source: String,
    pub symbols: usize,
    pub rate: u32,
    pub seed: u64,
    pub trade_pct: u8,
    pub start_ms: u64,
    pub stop_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SubSpec {
    pub broker: BrokerId,
    pub qoi: Qoi,
    pub filter: SubscriptionFilter,
    pub drain_per_s: u32,
    pub start_ms: u64,
    pub stop_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimedAction {
    LinkDown(BrokerId, BrokerId),
    LinkUp(BrokerId, BrokerId),
    Crash(BrokerId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub at_ms: u64,
    pub action: TimedAction,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub sites: BTreeSet<SiteId>,
    pub brokers: BTreeMap<BrokerId, BrokerSpec>,
    pub links: Vec<LinkSpec>,
    pub feeds: BTreeMap<String, FeedSpec>,
    pub subscribers: BTreeMap<String, SubSpec>,
    pub events: Vec<TimedEvent>,
    pub end_ms: u64,
}

impl Scenario {
    pub fn link_between(&self, a: &str, b: &str) -> Option<usize> {
        self.links.iter().position(|l| l.touches(a, b))
    }
}

/// Splits a directive line into tokens, honoring double quotes (used by
/// `filter="..."` values).
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for c in line.chars() {
        match c {
            '"' => in_quotes = !in_quotes,
            c if c.is_whitespace() && !in_quotes => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if in_quotes {
        return Err("unterminated quote".to_string());
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    Ok(tokens)
}

struct KvArgs<'a> {
    line_no: usize,
    pairs: BTreeMap<&'a str, &'a str>,
}

impl<'a> KvArgs<'a> {
    fn parse(line_no: usize, tokens: &'a [String], allowed: &[&str]) -> Result<Self, ScenarioError> {
        let mut pairs = BTreeMap::new();
        for token in tokens {
            let (key, value) = token.split_once('=').ok_or_else(|| ScenarioError::Parse {
                line: line_no,
                message: format!("expected key=value, got {token:?}"),
            })?;
            if !allowed.contains(&key) {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("unknown key {key:?}"),
                });
            }
            if pairs.insert(key, value).is_some() {
                return Err(ScenarioError::Parse {
                    line: line_no,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvArgs { line_no, pairs })
    }

    fn required(&self, key: &str) -> Result<&'a str, ScenarioError> {
        self.pairs.get(key).copied().ok_or_else(|| ScenarioError::Parse {
            line: self.line_no,
            message: format!("missing key {key:?}"),
        })
    }

    fn optional(&self, key: &str) -> Option<&'a str> {
        self.pairs.get(key).copied()
    }

    fn number<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T, ScenarioError> {
        value.parse().map_err(|_| ScenarioError::Parse {
            line: self.line_no,
            message: format!("bad number for {key}: {value:?}"),
        })
    }
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut seed = 0u64;
    let mut sites = BTreeSet::new();
    let mut brokers: BTreeMap<BrokerId, BrokerSpec> = BTreeMap::new();
    let mut links: Vec<LinkSpec> = Vec::new();
    let mut feeds: BTreeMap<String, FeedSpec> = BTreeMap::new();
    let mut subscribers: BTreeMap<String, SubSpec> = BTreeMap::new();
    let mut events: Vec<TimedEvent> = Vec::new();
    let mut end_ms: Option<u64> = None;
    // (line, what, id) pairs resolved after the full file is read, so
    // definition order does not matter.
    let mut broker_refs: Vec<(usize, String)> = Vec::new();
    let mut site_refs: Vec<(usize, String)> = Vec::new();
    let mut link_refs: Vec<(usize, String, String)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| ScenarioError::Parse { line: line_no, message };
        let tokens = tokenize(line).map_err(parse_err)?;
        let (directive, rest) = tokens.split_first().expect("non-empty line");
        match directive.as_str() {
            "seed" => {
                let [value] = rest else {
                    return Err(parse_err("usage: seed <n>".into()));
                };
                seed = value
                    .parse()
                    .map_err(|_| parse_err(format!("bad seed {value:?}")))?;
            }
            "site" => {
                let [id] = rest else {
                    return Err(parse_err("usage: site <id>".into()));
                };
                if !sites.insert(id.clone()) {
                    return Err(parse_err(format!("duplicate site {id:?}")));
                }
            }
            "broker" => {
                let (id, kv_tokens) = rest.split_first().ok_or_else(|| {
                    parse_err("usage: broker <id> site=<id> [store=mem|dir]".into())
                })?;
                let kv = KvArgs::parse(line_no, kv_tokens, &["site", "store"])?;
                let site = kv.required("site")?.to_string();
                let store = match kv.optional("store") {
                    None => StoreKind::None,
                    Some("mem") => StoreKind::Mem,
                    Some("dir") => StoreKind::Dir,
                    Some(other) => {
                        return Err(parse_err(format!("bad store kind {other:?}")))
                    }
                };
                site_refs.push((line_no, site.clone()));
                if brokers
                    .insert(id.clone(), BrokerSpec { site, store })
                    .is_some()
                {
                    return Err(parse_err(format!("duplicate broker {id:?}")));
                }
            }
            "link" => {
                if rest.len() < 2 {
                    return Err(parse_err(
                        "usage: link <a> <b> latency_ms=<n> bandwidth_mps=<n>".into(),
                    ));
                }
                let a = rest[0].clone();
                let b = rest[1].clone();
                if a == b {
                    return Err(parse_err("link endpoints must differ".into()));
                }
                let kv = KvArgs::parse(line_no, &rest[2..], &["latency_ms", "bandwidth_mps"])?;
                let latency_ms: u32 = kv.number("latency_ms", kv.required("latency_ms")?)?;
                let bandwidth_mps: u32 =
                    kv.number("bandwidth_mps", kv.required("bandwidth_mps")?)?;
                if bandwidth_mps == 0 {
                    return Err(parse_err("bandwidth_mps must be positive".into()));
                }
                if links.iter().any(|l| l.touches(&a, &b)) {
                    return Err(parse_err(format!("duplicate link {a} {b}")));
                }
                broker_refs.push((line_no, a.clone()));
                broker_refs.push((line_no, b.clone()));
                links.push(LinkSpec { a, b, latency_ms, bandwidth_mps });
            }
            "feed" => {
                let (id, kv_tokens) = rest.split_first().ok_or_else(|| {
                    parse_err("usage: feed <id> broker=<id> source=<NAME> ...".into())
                })?;
                let kv = KvArgs::parse(
                    line_no,
                    kv_tokens,
                    &["broker", "source", "symbols", "rate", "seed", "trade_pct", "start", "stop"],
                )?;
                let broker = kv.required("broker")?.to_string();
                let source = kv.required("source")?.to_string();
                if !crate::model::is_valid_source(&source) {
                    return Err(parse_err(format!("bad source name {source:?}")));
                }
                let symbols: usize = kv.number("symbols", kv.required("symbols")?)?;
                let rate: u32 = kv.number("rate", kv.required("rate")?)?;
                let feed_seed: u64 = kv.number("seed", kv.required("seed")?)?;
                let trade_pct: u8 = kv.number("trade_pct", kv.required("trade_pct")?)?;
                if symbols == 0 || rate == 0 {
                    return Err(parse_err("symbols and rate must be positive".into()));
                }
                if trade_pct > 100 {
                    return Err(parse_err("trade_pct must be 0..100".into()));
                }
                let start_ms = match kv.optional("start") {
                    Some(v) => kv.number("start", v)?,
                    None => DEFAULT_FEED_START_MS,
                };
                let stop_ms = match kv.optional("stop") {
                    Some(v) => Some(kv.number("stop", v)?),
                    None => None,
                };
                if feeds.values().any(|f| f.source == source) {
                    return Err(parse_err(format!("source {source:?} already has a feed")));
                }
                broker_refs.push((line_no, broker.clone()));
                let spec = FeedSpec {
                    broker,
                    source,
                    symbols,
                    rate,
                    seed: feed_seed,
                    trade_pct,
                    start_ms,
                    stop_ms,
                };
                if feeds.insert(id.clone(), spec).is_some() {
                    return Err(parse_err(format!("duplicate feed {id:?}")));
                }
            }
            "sub" => {
                let (id, kv_tokens) = rest.split_first().ok_or_else(|| {
                    parse_err("usage: sub <id> broker=<id> qoi=... filter=\"...\" drain=<n>".into())
                })?;
                let kv = KvArgs::parse(
                    line_no,
                    kv_tokens,
                    &["broker", "qoi", "filter", "drain", "start", "stop"],
                )?;
                let broker = kv.required("broker")?.to_string();
                let qoi = Qoi::parse(kv.required("qoi")?)
                    .ok_or_else(|| parse_err("qoi must be CONFLATED or COMPLETE".into()))?;
                let filter = parse_filter_expr(kv.required("filter")?)
                    .map_err(|e| parse_err(e.to_string()))?;
                let drain_per_s: u32 = kv.number("drain", kv.required("drain")?)?;
                if drain_per_s == 0 {
                    return Err(parse_err("drain must be positive".into()));
                }
                let start_ms = match kv.optional("start") {
                    Some(v) => kv.number("start", v)?,
                    None => 0,
                };
                let stop_ms = match kv.optional("stop") {
                    Some(v) => Some(kv.number("stop", v)?),
                    None => None,
                };
                broker_refs.push((line_no, broker.clone()));
                let spec = SubSpec { broker, qoi, filter, drain_per_s, start_ms, stop_ms };
                if subscribers.insert(id.clone(), spec).is_some() {
                    return Err(parse_err(format!("duplicate sub {id:?}")));
                }
            }
            "at" => {
                if rest.len() < 2 {
                    return Err(parse_err("usage: at <t_ms> <action> ...".into()));
                }
                let at_ms: u64 = rest[0]
                    .parse()
                    .map_err(|_| parse_err(format!("bad time {:?}", rest[0])))?;
                let action = match (rest[1].as_str(), &rest[2..]) {
                    ("link_down", [a, b]) => {
                        link_refs.push((line_no, a.clone(), b.clone()));
                        TimedAction::LinkDown(a.clone(), b.clone())
                    }
                    ("link_up", [a, b]) => {
                        link_refs.push((line_no, a.clone(), b.clone()));
                        TimedAction::LinkUp(a.clone(), b.clone())
                    }
                    ("crash", [broker]) => {
                        broker_refs.push((line_no, broker.clone()));
                        TimedAction::Crash(broker.clone())
                    }
                    (other, _) => {
                        return Err(parse_err(format!("unknown or malformed action {other:?}")))
                    }
                };
                events.push(TimedEvent { at_ms, action });
            }
            "end" => {
                let [value] = rest else {
                    return Err(parse_err("usage: end <t_ms>".into()));
                };
                let t: u64 = value
                    .parse()
                    .map_err(|_| parse_err(format!("bad time {value:?}")))?;
                if t == 0 {
                    return Err(parse_err("end must be positive".into()));
                }
                end_ms = Some(t);
            }
            other => return Err(parse_err(format!("unknown directive {other:?}"))),
        }
    }

    let end_ms = end_ms.ok_or(ScenarioError::Parse {
        line: text.lines().count(),
        message: "missing end directive".into(),
    })?;
    for (line, site) in site_refs {
        if !sites.contains(&site) {
            return Err(ScenarioError::Reference { line, what: "site", id: site });
        }
    }
    for (line, broker) in broker_refs {
        if !brokers.contains_key(&broker) {
            return Err(ScenarioError::Reference { line, what: "broker", id: broker });
        }
    }
    let scenario = Scenario {
        seed,
        sites,
        brokers,
        links,
        feeds,
        subscribers,
        events,
        end_ms,
    };
    for (line, a, b) in link_refs {
        if scenario.link_between(&a, &b).is_none() {
            return Err(ScenarioError::Reference {
                line,
                what: "link",
                id: format!("{a} {b}"),
            });
        }
    }
    let mut sorted_events = scenario.events.clone();
    sorted_events.sort_by_key(|e| e.at_ms);
    Ok(Scenario { events: sorted_events, ..scenario })
}
