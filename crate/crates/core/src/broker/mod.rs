//! A content-based pub/sub broker node.
//!
//! The broker is a single logical event loop: every entry point takes the
//! current clock and returns the effects (frames to send, links to close)
//! for the transport to execute. The same core runs embedded inside the
//! simulator and behind TCP in `brokerd`; it never spawns threads or does
//! I/O itself.
//!
//! Responsibilities: client sessions and QoI delivery, the ticker plant
//! for locally attached feeds (validate, normalize, enrich, store),
//! link-state topology maintenance, per-source spanning-tree forwarding
//! gated by subtree interest, per-link duplicate suppression, and
//! store-backed recovery sweeps after reconvergence or late subscription.

mod session;
pub mod wire;

pub use session::{Session, SessionCounters};
pub use wire::{decode_wire_frame, encode_wire_frame, frame_len, PeerKind, WireError, WireFrame};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::enrich::{EnrichEngine, RuleSet};
use crate::feedpipe::{FeedConfig, FeedHandler, RawFeedEvent, RejectReason};
use crate::model::{
    decode_notification, encode_notification, filter_matches, merge_filters, EventNotification,
    Subscription, SubscriptionFilter,
};
use crate::overlay::{
    compute_tree, BrokerId, Lsa, SiteId, SpanningTree, TopologyView, LSA_REFRESH_MS,
};
use crate::store::{EventStore, StoreError};

/// Transport-assigned identifier for one attachment point (a simulated
/// link endpoint or a TCP connection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u64);

pub type SessionId = u64;

/// Per-link (source, seq) duplicate-suppression window size, LRU-evicted.
pub const DEDUPE_WINDOW: usize = 1 << 16;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub id: BrokerId,
    pub site: SiteId,
    /// Bounded delivery queue per session.
    pub queue_capacity: usize,
    /// COMPLETE reorder window; arrivals are released ascending per source.
    pub reorder_hold_ms: u64,
    /// Debounce between a topology/interest change and the recovery sweep.
    pub sweep_delay_ms: u64,
    pub heartbeat_interval_ms: u64,
    /// Silence after which a believed-up link is declared down
    /// (3 missed heartbeats at the default interval).
    pub link_timeout_ms: u64,
    /// Session backlog at which local feeds are asked to pause.
    pub backpressure_threshold: usize,
    /// Whether detected derived events are republished on the reserved
    /// source. Meshes with more than one enriching broker must leave this
    /// on at most one of them: the reserved source has a single sequence
    /// namespace.
    pub publish_derived: bool,
}

impl BrokerConfig {
    pub fn new(id: &str, site: &str) -> Self {
        BrokerConfig {
            id: id.to_string(),
            site: site.to_string(),
            queue_capacity: 1024,
            reorder_hold_ms: 2_000,
            sweep_delay_ms: 500,
            heartbeat_interval_ms: 1_000,
            link_timeout_ms: 3_000,
            backpressure_threshold: 4_096,
            publish_derived: true,
        }
    }
}

/// Where a notification entered this broker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    LocalFeed,
    Neighbor(LinkId),
    /// Store-backed recovery sweep re-dispatch.
    Recovery,
}

/// Instructions for the transport layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send { link: LinkId, frame: WireFrame },
    CloseLink { link: LinkId },
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("subscription id {0} already exists in session")]
    DuplicateSubscription(u64),
    #[error("unknown subscription id {0}")]
    UnknownSubscription(u64),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("feed source {0:?} not attached")]
    UnknownFeed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Outcome of one feed event entering the ticker plant.
#[derive(Debug)]
pub enum IngestOutcome {
    /// The enriched notification, as published into the mesh.
    Accepted(Box<EventNotification>),
    Rejected(RejectReason),
}

#[derive(Debug)]
struct DedupeWindow {
    seen: HashSet<u64>,
    order: VecDeque<u64>,
}

impl DedupeWindow {
    fn new() -> Self {
        DedupeWindow { seen: HashSet::new(), order: VecDeque::new() }
    }

    /// Records (and admits) a seq not in the window; false means the seq
    /// was already forwarded on this link.
    fn admit(&mut self, seq: u64) -> bool {
        if !self.seen.insert(seq) {
            return false;
        }
        self.order.push_back(seq);
        if self.order.len() > DEDUPE_WINDOW {
            let evicted = self.order.pop_front().unwrap();
            self.seen.remove(&evicted);
        }
        true
    }
}

#[derive(Debug)]
struct Link {
    peer_id: Option<BrokerId>,
    peer_kind: Option<PeerKind>,
    believed_up: bool,
    last_heard_ms: u64,
    latency_ms: u32,
    /// Per source: seqs already forwarded on this link.
    sent: HashMap<String, DedupeWindow>,
    /// Interest learned from the neighbor's SUBADV frames.
    learned_filters: BTreeSet<SubscriptionFilter>,
    advert_seq_in: u64,
    advert_seq_out: u64,
    last_advertised: Option<BTreeSet<SubscriptionFilter>>,
    /// Session bound to this link for CLIENT peers.
    session: Option<SessionId>,
    /// Feed source bound to this link for FEED peers.
    feed_source: Option<String>,
}

impl Link {
    fn new(latency_ms: u32) -> Self {
        Link {
            peer_id: None,
            peer_kind: None,
            believed_up: false,
            last_heard_ms: 0,
            latency_ms,
            sent: HashMap::new(),
            learned_filters: BTreeSet::new(),
            advert_seq_in: 0,
            advert_seq_out: 0,
            last_advertised: None,
            session: None,
            feed_source: None,
        }
    }

    fn is_neighbor(&self) -> bool {
        self.peer_kind == Some(PeerKind::NeighborBroker)
    }

    fn admit_send(&mut self, source: &str, seq: u64) -> bool {
        self.sent
            .entry(source.to_string())
            .or_insert_with(DedupeWindow::new)
            .admit(seq)
    }
}

pub struct Broker {
    cfg: BrokerConfig,
    links: BTreeMap<LinkId, Link>,
    sessions: BTreeMap<SessionId, Session>,
    next_session_id: SessionId,
    view: TopologyView,
    /// Spanning trees cached per root; rebuilt on every view change.
    trees: BTreeMap<BrokerId, SpanningTree>,
    /// Per (tree root, child of self): merged interest of the child's
    /// subtree. The forwarding hot path consults only this.
    subtree_interest: BTreeMap<(BrokerId, BrokerId), Vec<SubscriptionFilter>>,
    lsa_seq: u64,
    last_lsa_originated_ms: u64,
    last_heartbeat_ms: Option<u64>,
    store: Option<EventStore>,
    enrich: EnrichEngine,
    feeds: BTreeMap<String, FeedHandler>,
    pending_sweep_at: Option<u64>,
}

impl Broker {
    pub fn new(cfg: BrokerConfig, store: Option<EventStore>) -> Self {
        Self::with_rules(cfg, store, RuleSet::default())
    }

    pub fn with_rules(cfg: BrokerConfig, store: Option<EventStore>, rules: RuleSet) -> Self {
        let view = TopologyView::new(&cfg.id, &cfg.site);
        Broker {
            cfg,
            links: BTreeMap::new(),
            sessions: BTreeMap::new(),
            next_session_id: 1,
            view,
            trees: BTreeMap::new(),
            subtree_interest: BTreeMap::new(),
            lsa_seq: 0,
            last_lsa_originated_ms: 0,
            last_heartbeat_ms: None,
            store,
            enrich: EnrichEngine::new(rules),
            feeds: BTreeMap::new(),
            pending_sweep_at: None,
        }
    }

    pub fn id(&self) -> &BrokerId {
        &self.cfg.id
    }

    pub fn site(&self) -> &SiteId {
        &self.cfg.site
    }

    pub fn view(&self) -> &TopologyView {
        &self.view
    }

    pub fn store(&self) -> Option<&EventStore> {
        self.store.as_ref()
    }

    pub fn feed_handler(&self, source: &str) -> Option<&FeedHandler> {
        self.feeds.get(source)
    }

    pub fn session_counters(&self, session: SessionId) -> Option<SessionCounters> {
        self.sessions.get(&session).map(|s| s.counters())
    }

    pub fn session_backlog(&self, session: SessionId) -> usize {
        self.sessions.get(&session).map(|s| s.backlog()).unwrap_or(0)
    }

    /// True when some session's backlog exceeds the threshold; local feeds
    /// should pause until consumers catch up.
    pub fn backpressured(&self) -> bool {
        self.sessions
            .values()
            .any(|s| s.backlog() > self.cfg.backpressure_threshold)
    }

    /// No undelivered work anywhere: used by the simulator's quiescence
    /// detection.
    pub fn is_quiet(&self) -> bool {
        self.pending_sweep_at.is_none() && self.sessions.values().all(|s| s.backlog() == 0)
    }

    // ------------------------------------------------------------------
    // link lifecycle
    // ------------------------------------------------------------------

    /// Registers a transport attachment point toward a (potential)
    /// neighbor broker and greets it.
    pub fn attach_link(&mut self, link: LinkId, latency_ms: u32, now_ms: u64) -> Vec<Effect> {
        let state = self.links.entry(link).or_insert_with(|| Link::new(latency_ms));
        state.latency_ms = latency_ms;
        state.last_heard_ms = state.last_heard_ms.max(now_ms);
        vec![Effect::Send {
            link,
            frame: WireFrame::Hello {
                node_id: self.cfg.id.clone(),
                kind: PeerKind::NeighborBroker,
                site: self.cfg.site.clone(),
            },
        }]
    }

    /// The transport lost the attachment (socket closed).
    pub fn detach_link(&mut self, link: LinkId, now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        let was_up = self.links.get(&link).is_some_and(|l| l.believed_up);
        if was_up {
            self.mark_link_down(link, now_ms, &mut effects);
        }
        if let Some(state) = self.links.remove(&link) {
            if let Some(session) = state.session {
                self.remove_session(session, now_ms, &mut effects);
            }
        }
        effects
    }

    fn mark_link_up(&mut self, link: LinkId, now_ms: u64, effects: &mut Vec<Effect>) {
        {
            let state = self.links.get_mut(&link).expect("known link");
            state.believed_up = true;
            state.last_heard_ms = now_ms;
            state.last_advertised = None;
        }
        // Catch a (re)joining neighbor up on everything we know, then
        // announce the new adjacency.
        let known: Vec<Lsa> = self
            .view
            .nodes()
            .map(|(id, _)| id.clone())
            .filter(|id| *id != self.cfg.id)
            .filter_map(|id| self.view.lsa_snapshot(&id))
            .collect();
        for lsa in known {
            effects.push(Effect::Send { link, frame: WireFrame::Lsa(lsa) });
        }
        self.originate_lsa(now_ms, effects);
        self.on_state_changed(now_ms, effects);
    }

    fn mark_link_down(&mut self, link: LinkId, now_ms: u64, effects: &mut Vec<Effect>) {
        {
            let state = self.links.get_mut(&link).expect("known link");
            state.believed_up = false;
            state.learned_filters.clear();
            state.advert_seq_in = 0;
            state.last_advertised = None;
        }
        self.originate_lsa(now_ms, effects);
        self.on_state_changed(now_ms, effects);
    }

    // ------------------------------------------------------------------
    // local entities (embedded feeds, client sessions)
    // ------------------------------------------------------------------

    /// Attaches a feed pipeline for one source; announced in the LSA so
    /// remote brokers can root this source's tree here.
    pub fn attach_feed(&mut self, cfg: FeedConfig, now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        let source = cfg.expected_source.clone();
        self.feeds.insert(source, FeedHandler::new(cfg));
        self.originate_lsa(now_ms, &mut effects);
        self.on_state_changed(now_ms, &mut effects);
        effects
    }

    /// Runs one raw event through the ticker plant: validate, normalize,
    /// enrich, store, publish. Derived events follow the same path on the
    /// reserved source.
    pub fn feed_ingest_raw(
        &mut self,
        source: &str,
        raw: RawFeedEvent,
        now_ms: u64,
    ) -> Result<(IngestOutcome, Vec<Effect>), BrokerError> {
        let handler = self
            .feeds
            .get_mut(source)
            .ok_or_else(|| BrokerError::UnknownFeed(source.to_string()))?;
        let mut effects = Vec::new();
        match handler.ingest_raw(raw, now_ms) {
            Err(reason) => Ok((IngestOutcome::Rejected(reason), effects)),
            Ok(n) => {
                let (enriched, derived) = self.enrich.process(&n);
                self.publish_notification(&enriched, now_ms, &mut effects)?;
                if self.cfg.publish_derived {
                    for event in derived {
                        let dn = self.enrich.derived_notification(&event, now_ms);
                        self.publish_notification(&dn, now_ms, &mut effects)?;
                    }
                }
                Ok((IngestOutcome::Accepted(Box::new(enriched)), effects))
            }
        }
    }

    fn publish_notification(
        &mut self,
        n: &EventNotification,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) -> Result<(), BrokerError> {
        if let Some(store) = &mut self.store {
            store.append(n)?;
        }
        self.dispatch(n, None, Arrival::LocalFeed, now_ms, effects);
        Ok(())
    }

    /// Opens an embedded client session (simulator subscribers, tests).
    pub fn open_session(&mut self) -> SessionId {
        let id = self.next_session_id;
        self.next_session_id += 1;
        self.sessions.insert(
            id,
            Session::new(
                id,
                PeerKind::Client,
                None,
                self.cfg.queue_capacity,
                self.cfg.reorder_hold_ms,
            ),
        );
        id
    }

    pub fn close_session(&mut self, session: SessionId, now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        self.remove_session(session, now_ms, &mut effects);
        effects
    }

    fn remove_session(&mut self, session: SessionId, now_ms: u64, effects: &mut Vec<Effect>) {
        if self.sessions.remove(&session).is_some() {
            self.on_local_interest_changed(now_ms, effects);
        }
    }

    pub fn subscribe(
        &mut self,
        session: SessionId,
        sub: Subscription,
        now_ms: u64,
    ) -> Result<Vec<Effect>, BrokerError> {
        let state = self
            .sessions
            .get_mut(&session)
            .ok_or(BrokerError::UnknownSession(session))?;
        if state.subscriptions.contains_key(&sub.id) {
            return Err(BrokerError::DuplicateSubscription(sub.id));
        }
        state.subscriptions.insert(sub.id, sub);
        let mut effects = Vec::new();
        self.on_local_interest_changed(now_ms, &mut effects);
        Ok(effects)
    }

    pub fn unsubscribe(
        &mut self,
        session: SessionId,
        sub_id: u64,
        now_ms: u64,
    ) -> Result<Vec<Effect>, BrokerError> {
        let state = self
            .sessions
            .get_mut(&session)
            .ok_or(BrokerError::UnknownSession(session))?;
        if state.subscriptions.remove(&sub_id).is_none() {
            return Err(BrokerError::UnknownSubscription(sub_id));
        }
        let mut effects = Vec::new();
        self.on_local_interest_changed(now_ms, &mut effects);
        Ok(effects)
    }

    /// Removes and returns up to `max` deliverable notifications.
    pub fn drain(&mut self, session: SessionId, max: usize, now_ms: u64) -> Vec<EventNotification> {
        self.sessions
            .get_mut(&session)
            .map(|s| s.drain(max, now_ms))
            .unwrap_or_default()
    }

    // ------------------------------------------------------------------
    // frame handling
    // ------------------------------------------------------------------

    pub fn handle_frame(&mut self, link: LinkId, bytes: &[u8], now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        // Transport-initiated inbound attachment (TCP accept).
        self.links.entry(link).or_insert_with(|| Link::new(1));
        match decode_wire_frame(bytes) {
            Ok(frame) => self.handle_decoded(link, frame, now_ms, &mut effects),
            Err(_) => {
                // A peer speaking garbage is cut off.
                effects.push(Effect::CloseLink { link });
                if self.links.get(&link).is_some_and(|l| l.believed_up) {
                    self.mark_link_down(link, now_ms, &mut effects);
                }
            }
        }
        effects
    }

    fn handle_decoded(
        &mut self,
        link: LinkId,
        frame: WireFrame,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        self.links.get_mut(&link).expect("link registered").last_heard_ms = now_ms;
        match frame {
            WireFrame::Hello { node_id, kind, site: _ } => {
                let needs_up;
                let needs_feed;
                let needs_session;
                let first_contact;
                {
                    let state = self.links.get_mut(&link).unwrap();
                    first_contact = state.peer_id.is_none();
                    state.peer_id = Some(node_id.clone());
                    state.peer_kind = Some(kind);
                    needs_up = kind == PeerKind::NeighborBroker && !state.believed_up;
                    needs_feed = kind == PeerKind::Feed && state.feed_source.is_none();
                    needs_session = kind == PeerKind::Client && state.session.is_none();
                }
                if first_contact && kind == PeerKind::NeighborBroker {
                    effects.push(Effect::Send {
                        link,
                        frame: WireFrame::Hello {
                            node_id: self.cfg.id.clone(),
                            kind: PeerKind::NeighborBroker,
                            site: self.cfg.site.clone(),
                        },
                    });
                }
                if needs_up {
                    self.mark_link_up(link, now_ms, effects);
                }
                if needs_session {
                    let id = self.next_session_id;
                    self.next_session_id += 1;
                    self.sessions.insert(
                        id,
                        Session::new(
                            id,
                            PeerKind::Client,
                            Some(link),
                            self.cfg.queue_capacity,
                            self.cfg.reorder_hold_ms,
                        ),
                    );
                    self.links.get_mut(&link).unwrap().session = Some(id);
                }
                if needs_feed {
                    self.links.get_mut(&link).unwrap().feed_source = Some(node_id.clone());
                    let fx = self.attach_feed(FeedConfig::new(&node_id, &node_id), now_ms);
                    effects.extend(fx);
                }
            }
            WireFrame::Heartbeat { .. } => {
                let state = self.links.get(&link).unwrap();
                if state.is_neighbor() && !state.believed_up && state.peer_id.is_some() {
                    self.mark_link_up(link, now_ms, effects);
                }
            }
            WireFrame::Lsa(lsa) => {
                if self.view.apply_lsa(lsa.clone(), now_ms) {
                    self.flood_lsa(&lsa, Some(link), effects);
                    self.on_state_changed(now_ms, effects);
                }
            }
            WireFrame::SubAdv { advert_seq, filters } => {
                let state = self.links.get_mut(&link).unwrap();
                if advert_seq > state.advert_seq_in {
                    state.advert_seq_in = advert_seq;
                    state.learned_filters = filters.into_iter().collect();
                    self.refresh_adverts(effects);
                }
            }
            WireFrame::Sub { sub_id, qoi, filter } => {
                if let Some(session) = self.links.get(&link).unwrap().session {
                    if let Ok(fx) =
                        self.subscribe(session, Subscription { id: sub_id, filter, qoi }, now_ms)
                    {
                        effects.extend(fx);
                    }
                }
            }
            WireFrame::Unsub { sub_id } => {
                if let Some(session) = self.links.get(&link).unwrap().session {
                    if let Ok(fx) = self.unsubscribe(session, sub_id, now_ms) {
                        effects.extend(fx);
                    }
                }
            }
            WireFrame::Credit { n } => {
                if let Some(session) = self.links.get(&link).unwrap().session {
                    if let Some(s) = self.sessions.get_mut(&session) {
                        s.grant_credits(n);
                    }
                }
            }
            WireFrame::Pub { frame } => {
                let (peer_kind, feed_source) = {
                    let state = self.links.get(&link).unwrap();
                    (state.peer_kind, state.feed_source.clone())
                };
                match peer_kind {
                    Some(PeerKind::Feed) => {
                        let source = feed_source.unwrap_or_default();
                        match crate::feedpipe::parse_binary_frame(&frame, 0) {
                            Ok((raw, _)) => {
                                if let Ok((_, fx)) = self.feed_ingest_raw(&source, raw, now_ms) {
                                    effects.extend(fx);
                                }
                            }
                            Err(_) => {
                                // Malformed feed frames are purged and
                                // counted, not fatal.
                                if let Some(h) = self.feeds.get_mut(&source) {
                                    let _ = h.ingest_frame(&frame, 0, now_ms);
                                }
                            }
                        }
                    }
                    Some(PeerKind::NeighborBroker) => match decode_notification(&frame) {
                        Ok(n) => {
                            self.dispatch(&n, Some(frame), Arrival::Neighbor(link), now_ms, effects);
                        }
                        Err(_) => {
                            effects.push(Effect::CloseLink { link });
                            self.mark_link_down(link, now_ms, effects);
                        }
                    },
                    _ => {
                        // Clients do not publish.
                        effects.push(Effect::CloseLink { link });
                    }
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // routing and dispatch
    // ------------------------------------------------------------------

    /// Pure forwarding decision: the child links of this broker on the
    /// spanning tree rooted at the source's ingress broker, restricted to
    /// children whose subtree interest matches the notification. Unknown
    /// ingress degrades to a conservative flood on all neighbor links
    /// except the arrival, until the topology converges.
    pub fn route(&self, n: &EventNotification, arrival: Arrival) -> BTreeSet<LinkId> {
        let arrival_link = match arrival {
            Arrival::Neighbor(l) => Some(l),
            _ => None,
        };
        let mut out = BTreeSet::new();
        match self.view.ingress_of(&n.source) {
            Some(root) => {
                let Some(tree) = self.trees.get(root) else {
                    return out;
                };
                for child in tree.children_of(&self.cfg.id) {
                    let interested = self
                        .subtree_interest
                        .get(&(root.clone(), child.clone()))
                        .is_some_and(|filters| filters.iter().any(|f| filter_matches(f, n)));
                    if !interested {
                        continue;
                    }
                    if let Some(link) = self.link_to(child) {
                        if Some(link) != arrival_link {
                            out.insert(link);
                        }
                    }
                }
            }
            None => {
                for (id, state) in &self.links {
                    if state.believed_up && state.is_neighbor() && Some(*id) != arrival_link {
                        out.insert(*id);
                    }
                }
            }
        }
        out
    }

    fn link_to(&self, peer: &BrokerId) -> Option<LinkId> {
        self.links
            .iter()
            .find(|(_, l)| l.believed_up && l.is_neighbor() && l.peer_id.as_ref() == Some(peer))
            .map(|(id, _)| *id)
    }

    /// Local matching plus mesh forwarding with per-link duplicate
    /// suppression.
    fn dispatch(
        &mut self,
        n: &EventNotification,
        encoded: Option<Vec<u8>>,
        arrival: Arrival,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        // (a) local sessions: one copy per session, strongest matching QoI
        // wins.
        for session in self.sessions.values_mut() {
            let qoi = session
                .subscriptions
                .values()
                .filter(|sub| filter_matches(&sub.filter, n))
                .map(|sub| sub.qoi)
                .max();
            if let Some(qoi) = qoi {
                session.enqueue(n.clone(), qoi, now_ms);
            }
        }
        // (b) forwarding.
        let targets = self.route(n, arrival);
        if targets.is_empty() {
            return;
        }
        let bytes = encoded.unwrap_or_else(|| encode_notification(n));
        for target in targets {
            let link = self.links.get_mut(&target).expect("routed link exists");
            if link.admit_send(&n.source, n.seq) {
                effects.push(Effect::Send {
                    link: target,
                    frame: WireFrame::Pub { frame: bytes.clone() },
                });
            }
        }
    }

    // ------------------------------------------------------------------
    // overlay maintenance
    // ------------------------------------------------------------------

    fn local_interest(&self) -> BTreeSet<SubscriptionFilter> {
        let all: BTreeSet<SubscriptionFilter> = self
            .sessions
            .values()
            .flat_map(|s| s.subscriptions.values().map(|sub| sub.filter.clone()))
            .collect();
        merge_filters(&all)
    }

    fn originate_lsa(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        self.lsa_seq = (self.lsa_seq + 1).max(now_ms);
        let mut neighbors = BTreeMap::new();
        for state in self.links.values() {
            if state.believed_up && state.is_neighbor() {
                if let Some(peer) = &state.peer_id {
                    let entry = neighbors.entry(peer.clone()).or_insert(state.latency_ms);
                    *entry = (*entry).min(state.latency_ms);
                }
            }
        }
        let mut sources: BTreeSet<String> = self.feeds.keys().cloned().collect();
        if self.cfg.publish_derived && !self.feeds.is_empty() {
            sources.insert(crate::enrich::DERIVED_SOURCE.to_string());
        }
        let lsa = Lsa {
            origin: self.cfg.id.clone(),
            seq: self.lsa_seq,
            site: self.cfg.site.clone(),
            neighbors,
            sources,
            interest: self.local_interest(),
        };
        self.view.originate(lsa.clone(), now_ms);
        self.last_lsa_originated_ms = now_ms;
        self.flood_lsa(&lsa, None, effects);
    }

    fn flood_lsa(&self, lsa: &Lsa, except: Option<LinkId>, effects: &mut Vec<Effect>) {
        for (id, state) in &self.links {
            if state.believed_up && state.is_neighbor() && Some(*id) != except {
                effects.push(Effect::Send { link: *id, frame: WireFrame::Lsa(lsa.clone()) });
            }
        }
    }

    fn on_local_interest_changed(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        self.originate_lsa(now_ms, effects);
        self.on_state_changed(now_ms, effects);
    }

    /// View or interest changed: rebuild trees and the subtree-interest
    /// cache, refresh advertisements, and schedule a recovery sweep.
    fn on_state_changed(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        self.rebuild_routing();
        self.refresh_adverts(effects);
        if self.store.is_some() && self.pending_sweep_at.is_none() {
            self.pending_sweep_at = Some(now_ms + self.cfg.sweep_delay_ms);
        }
    }

    fn rebuild_routing(&mut self) {
        self.trees.clear();
        self.subtree_interest.clear();
        let roots: Vec<BrokerId> = self.view.nodes().map(|(id, _)| id.clone()).collect();
        for root in roots {
            let Ok(tree) = compute_tree(&self.view, &root) else {
                continue;
            };
            if !tree.contains(&self.cfg.id) {
                continue; // not in this source's component
            }
            let children: Vec<BrokerId> = tree.children_of(&self.cfg.id).cloned().collect();
            for child in children {
                let mut filters: BTreeSet<SubscriptionFilter> = BTreeSet::new();
                for member in tree.subtree(&child) {
                    if let Some(interest) = self.view.interest_of(&member) {
                        filters.extend(interest.iter().cloned());
                    }
                }
                self.subtree_interest.insert(
                    (root.clone(), child),
                    merge_filters(&filters).into_iter().collect(),
                );
            }
            self.trees.insert(root, tree);
        }
    }

    /// Split-horizon per-neighbor SUBADV refresh; a payload goes out only
    /// when it differs from the last one sent on that link.
    fn refresh_adverts(&mut self, effects: &mut Vec<Effect>) {
        let local = self.local_interest();
        let learned: BTreeMap<LinkId, BTreeSet<SubscriptionFilter>> = self
            .links
            .iter()
            .filter(|(_, l)| l.believed_up && l.is_neighbor())
            .map(|(id, l)| (*id, l.learned_filters.clone()))
            .collect();
        let adverts = crate::overlay::split_horizon_adverts(&local, &learned);
        for (link_id, filters) in adverts {
            let state = self.links.get_mut(&link_id).expect("advertised link exists");
            if state.last_advertised.as_ref() == Some(&filters) {
                continue;
            }
            state.advert_seq_out += 1;
            effects.push(Effect::Send {
                link: link_id,
                frame: WireFrame::SubAdv {
                    advert_seq: state.advert_seq_out,
                    filters: filters.iter().cloned().collect(),
                },
            });
            state.last_advertised = Some(filters);
        }
    }

    // ------------------------------------------------------------------
    // timers
    // ------------------------------------------------------------------

    pub fn on_tick(&mut self, now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();

        // Heartbeats on established neighbor links; HELLO probes where no
        // peer has answered yet. Probes double as heal detection: the
        // first frame heard on a silent link marks it up again.
        let due_heartbeat = self
            .last_heartbeat_ms
            .is_none_or(|last| now_ms >= last + self.cfg.heartbeat_interval_ms);
        if due_heartbeat {
            self.last_heartbeat_ms = Some(now_ms);
            let hello = WireFrame::Hello {
                node_id: self.cfg.id.clone(),
                kind: PeerKind::NeighborBroker,
                site: self.cfg.site.clone(),
            };
            for (id, state) in &self.links {
                if state.session.is_some() || state.feed_source.is_some() {
                    continue; // client and feed links carry no broker control
                }
                let frame = if state.believed_up {
                    WireFrame::Heartbeat { ts_ms: now_ms }
                } else {
                    hello.clone()
                };
                effects.push(Effect::Send { link: *id, frame });
            }
        }

        // Declare silent neighbor links down.
        let timed_out: Vec<LinkId> = self
            .links
            .iter()
            .filter(|(_, l)| {
                l.believed_up
                    && l.is_neighbor()
                    && now_ms.saturating_sub(l.last_heard_ms) > self.cfg.link_timeout_ms
            })
            .map(|(id, _)| *id)
            .collect();
        for link in timed_out {
            self.mark_link_down(link, now_ms, &mut effects);
        }

        // Soft-state refresh and purge.
        if now_ms.saturating_sub(self.last_lsa_originated_ms) >= LSA_REFRESH_MS {
            self.originate_lsa(now_ms, &mut effects);
        }
        if self.view.purge_stale(now_ms) {
            self.on_state_changed(now_ms, &mut effects);
        }

        // Release reorder holds into the delivery queues.
        for session in self.sessions.values_mut() {
            session.release_due(now_ms);
        }

        // Recovery sweep.
        if self.pending_sweep_at.is_some_and(|due| now_ms >= due) {
            self.pending_sweep_at = None;
            self.run_sweep(now_ms, &mut effects);
        }

        // Pump link-bound client sessions onto the wire.
        self.pump_link_sessions(now_ms, &mut effects);

        effects
    }

    /// Re-dispatches the whole store through matching and routing. Session
    /// gates and per-link dedupe windows reduce this to exactly the
    /// missing deliveries; everything else is suppressed. Triggered
    /// (debounced) by reconvergence and interest changes.
    fn run_sweep(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        let Some(store) = &self.store else {
            return;
        };
        let entries: Vec<EventNotification> = store.scan().cloned().collect();
        for n in entries {
            self.dispatch(&n, None, Arrival::Recovery, now_ms, effects);
        }
    }

    fn pump_link_sessions(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        let bound: Vec<(SessionId, LinkId)> = self
            .sessions
            .values()
            .filter_map(|s| s.link.map(|l| (s.id, l)))
            .collect();
        for (session_id, link) in bound {
            let batch = self
                .sessions
                .get_mut(&session_id)
                .map(|s| s.drain(64, now_ms))
                .unwrap_or_default();
            for n in batch {
                effects.push(Effect::Send {
                    link,
                    frame: WireFrame::Pub { frame: encode_notification(&n) },
                });
            }
        }
    }
}
