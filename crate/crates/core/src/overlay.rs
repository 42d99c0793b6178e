//! Mesh topology maintenance: link-state dissemination, deterministic
//! per-source spanning trees, and subscription-interest propagation with
//! covering aggregation.
//!
//! Each broker floods a link-state announcement naming its site, its
//! neighbors with latency costs, its attached feed sources, and its
//! cover-reduced local subscription interest. An edge enters the topology
//! only when both endpoints announce it. Trees are shortest-path by summed
//! latency with parent selection made deterministic: among predecessors at
//! optimal distance, the smallest broker id wins.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::model::SubscriptionFilter;

pub type BrokerId = String;
pub type SiteId = String;

pub const LSA_REFRESH_MS: u64 = 10_000;
pub const LSA_MAX_AGE_MS: u64 = 30_000;

/// One broker's link-state announcement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lsa {
    pub origin: BrokerId,
    pub seq: u64,
    pub site: SiteId,
    /// Neighbor broker id -> link latency in ms.
    pub neighbors: BTreeMap<BrokerId, u32>,
    /// Feed sources attached at the origin.
    pub sources: BTreeSet<String>,
    /// Cover-reduced union of the origin's local subscription filters.
    pub interest: BTreeSet<SubscriptionFilter>,
}

#[derive(Debug, Clone)]
struct LsaRecord {
    lsa: Lsa,
    received_at_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("broker {0} not present in topology view")]
    UnknownBroker(BrokerId),
}

/// A broker's view of the mesh, assembled from LSAs. Always contains the
/// owning broker itself.
#[derive(Debug, Clone)]
pub struct TopologyView {
    self_id: BrokerId,
    records: BTreeMap<BrokerId, LsaRecord>,
}

impl TopologyView {
    pub fn new(self_id: &str, self_site: &str) -> Self {
        let own = Lsa {
            origin: self_id.to_string(),
            seq: 0,
            site: self_site.to_string(),
            neighbors: BTreeMap::new(),
            sources: BTreeSet::new(),
            interest: BTreeSet::new(),
        };
        let mut records = BTreeMap::new();
        records.insert(
            self_id.to_string(),
            LsaRecord { lsa: own, received_at_ms: 0 },
        );
        TopologyView { self_id: self_id.to_string(), records }
    }

    pub fn self_id(&self) -> &BrokerId {
        &self.self_id
    }

    pub fn self_lsa(&self) -> &Lsa {
        &self.records[&self.self_id].lsa
    }

    /// Replaces the owning broker's own announcement; `seq` must increase.
    pub fn originate(&mut self, lsa: Lsa, now_ms: u64) {
        debug_assert_eq!(lsa.origin, self.self_id);
        debug_assert!(lsa.seq > self.self_lsa().seq);
        self.records
            .insert(self.self_id.clone(), LsaRecord { lsa, received_at_ms: now_ms });
    }

    /// Applies a received announcement. Announcements with `seq` at or
    /// below the recorded one for the origin are ignored. Returns whether
    /// the view changed (changed announcements are re-flooded by the
    /// caller to every neighbor except the arrival link).
    pub fn apply_lsa(&mut self, lsa: Lsa, now_ms: u64) -> bool {
        if lsa.origin == self.self_id {
            return false; // own echoes never regress local state
        }
        if let Some(existing) = self.records.get_mut(&lsa.origin) {
            if lsa.seq <= existing.lsa.seq {
                return false;
            }
            let changed = existing.lsa != lsa;
            *existing = LsaRecord { lsa, received_at_ms: now_ms };
            changed
        } else {
            self.records
                .insert(lsa.origin.clone(), LsaRecord { lsa, received_at_ms: now_ms });
            true
        }
    }

    /// Drops soft-state records that have not been refreshed; the owning
    /// broker's record never expires. Returns whether anything was purged.
    pub fn purge_stale(&mut self, now_ms: u64) -> bool {
        let self_id = self.self_id.clone();
        let before = self.records.len();
        self.records.retain(|id, rec| {
            *id == self_id || now_ms.saturating_sub(rec.received_at_ms) <= LSA_MAX_AGE_MS
        });
        self.records.len() != before
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&BrokerId, &SiteId)> {
        self.records.values().map(|r| (&r.lsa.origin, &r.lsa.site))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn site_of(&self, id: &str) -> Option<&SiteId> {
        self.records.get(id).map(|r| &r.lsa.site)
    }

    /// Undirected confirmed edges: present only when both endpoints
    /// announce each other. Stored once under canonical (smaller, larger)
    /// ordering; the latency is taken from the smaller endpoint's record.
    pub fn edges(&self) -> BTreeMap<(BrokerId, BrokerId), u32> {
        let mut edges = BTreeMap::new();
        for rec in self.records.values() {
            let a = &rec.lsa.origin;
            for (b, &latency) in &rec.lsa.neighbors {
                if a >= b {
                    continue;
                }
                let confirmed = self
                    .records
                    .get(b)
                    .is_some_and(|rb| rb.lsa.neighbors.contains_key(a));
                if confirmed {
                    edges.insert((a.clone(), b.clone()), latency);
                }
            }
        }
        edges
    }

    /// The broker a feed source is attached to, when announced.
    pub fn ingress_of(&self, source: &str) -> Option<&BrokerId> {
        self.records
            .values()
            .find(|r| r.lsa.sources.contains(source))
            .map(|r| &r.lsa.origin)
    }

    /// Merged local interest announced by one broker.
    pub fn interest_of(&self, id: &str) -> Option<&BTreeSet<SubscriptionFilter>> {
        self.records.get(id).map(|r| &r.lsa.interest)
    }

    /// The stored announcement for `id`, for full-db sync on link-up.
    pub fn lsa_snapshot(&self, id: &str) -> Option<Lsa> {
        self.records.get(id).map(|r| r.lsa.clone())
    }

    /// Stable content digest, used by the simulator's convergence checks.
    /// Refresh timestamps and seq numbers are excluded so equal topology
    /// knowledge hashes equal.
    pub fn digest(&self) -> u64 {
        // FNV-1a over a canonical rendering.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for rec in self.records.values() {
            let lsa = &rec.lsa;
            eat(lsa.origin.as_bytes());
            eat(lsa.site.as_bytes());
            for (n, lat) in &lsa.neighbors {
                eat(n.as_bytes());
                eat(&lat.to_be_bytes());
            }
            for s in &lsa.sources {
                eat(s.as_bytes());
            }
            for f in &lsa.interest {
                eat(&f.canonical_bytes());
            }
            eat(&[0xFF]);
        }
        hash
    }
}

/// Shortest-path tree rooted at one broker, spanning exactly the connected
/// component of the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    pub source: BrokerId,
    pub parent: BTreeMap<BrokerId, BrokerId>,
    pub children: BTreeMap<BrokerId, BTreeSet<BrokerId>>,
    pub distance: BTreeMap<BrokerId, u64>,
}

impl SpanningTree {
    pub fn contains(&self, id: &str) -> bool {
        self.distance.contains_key(id)
    }

    pub fn children_of(&self, id: &str) -> impl Iterator<Item = &BrokerId> {
        self.children.get(id).into_iter().flatten()
    }

    /// All brokers in the subtree rooted at `id`, including `id` itself.
    pub fn subtree(&self, id: &str) -> BTreeSet<BrokerId> {
        let mut out = BTreeSet::new();
        if !self.contains(id) {
            return out;
        }
        let mut stack = vec![id.to_string()];
        while let Some(node) = stack.pop() {
            if let Some(kids) = self.children.get(&node) {
                stack.extend(kids.iter().cloned());
            }
            out.insert(node);
        }
        out
    }

    /// Number of tree edges in the minimal subtree connecting the root to
    /// every broker in `targets`; this is the fan-out cost of a multicast.
    pub fn steiner_edge_count(&self, targets: &BTreeSet<BrokerId>) -> usize {
        let mut needed: BTreeSet<(BrokerId, BrokerId)> = BTreeSet::new();
        for target in targets {
            if !self.contains(target) {
                continue;
            }
            let mut node = target.clone();
            while let Some(parent) = self.parent.get(&node) {
                let edge = (parent.clone(), node.clone());
                if !needed.insert(edge) {
                    break; // shared path already walked
                }
                node = parent.clone();
            }
        }
        needed.len()
    }
}

/// Deterministic shortest-path tree by summed latency. Among equal-cost
/// predecessors the smallest broker id becomes the parent, so equal views
/// always yield identical trees.
pub fn compute_tree(view: &TopologyView, source: &str) -> Result<SpanningTree, OverlayError> {
    if !view.contains(source) {
        return Err(OverlayError::UnknownBroker(source.to_string()));
    }
    // Adjacency from confirmed edges.
    let mut adjacency: BTreeMap<BrokerId, Vec<(BrokerId, u32)>> = BTreeMap::new();
    for ((a, b), latency) in view.edges() {
        adjacency.entry(a.clone()).or_default().push((b.clone(), latency));
        adjacency.entry(b).or_default().push((a, latency));
    }

    let mut distance: BTreeMap<BrokerId, u64> = BTreeMap::new();
    distance.insert(source.to_string(), 0);
    let mut heap: BinaryHeap<Reverse<(u64, BrokerId)>> = BinaryHeap::new();
    heap.push(Reverse((0, source.to_string())));
    while let Some(Reverse((dist, node))) = heap.pop() {
        if distance.get(&node).copied() != Some(dist) {
            continue;
        }
        for (next, latency) in adjacency.get(&node).into_iter().flatten() {
            let cand = dist + u64::from(*latency);
            if distance.get(next).is_none_or(|&d| cand < d) {
                distance.insert(next.clone(), cand);
                heap.push(Reverse((cand, next.clone())));
            }
        }
    }

    // Parent = smallest-id predecessor at optimal distance.
    let mut parent: BTreeMap<BrokerId, BrokerId> = BTreeMap::new();
    let mut children: BTreeMap<BrokerId, BTreeSet<BrokerId>> = BTreeMap::new();
    children.insert(source.to_string(), BTreeSet::new());
    for (node, &dist) in &distance {
        if node == source {
            continue;
        }
        let best = adjacency
            .get(node)
            .into_iter()
            .flatten()
            .filter(|(pred, latency)| {
                dist.checked_sub(u64::from(*latency))
                    .is_some_and(|want| distance.get(pred).copied() == Some(want))
            })
            .map(|(pred, _)| pred.clone())
            .min()
            .expect("reached node has an optimal predecessor");
        children.entry(best.clone()).or_default().insert(node.clone());
        children.entry(node.clone()).or_default();
        parent.insert(node.clone(), best);
    }
    Ok(SpanningTree { source: source.to_string(), parent, children, distance })
}

/// Per-neighbor advertisement payloads with split horizon: the payload for
/// a link is the cover-reduced merge of the local filter set and of the
/// filters learned from every other link. Interest never reflects back
/// over the link it was learned from.
pub fn split_horizon_adverts<L: Ord + Clone>(
    local: &BTreeSet<SubscriptionFilter>,
    learned: &BTreeMap<L, BTreeSet<SubscriptionFilter>>,
) -> BTreeMap<L, BTreeSet<SubscriptionFilter>> {
    learned
        .keys()
        .map(|link| {
            let mut combined = local.clone();
            for (other, filters) in learned {
                if other != link {
                    combined.extend(filters.iter().cloned());
                }
            }
            (link.clone(), crate::model::merge_filters(&combined))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_filter_expr;

    fn lsa(origin: &str, seq: u64, neighbors: &[(&str, u32)]) -> Lsa {
        Lsa {
            origin: origin.to_string(),
            seq,
            site: format!("site-{origin}"),
            neighbors: neighbors
                .iter()
                .map(|(id, lat)| (id.to_string(), *lat))
                .collect(),
            sources: BTreeSet::new(),
            interest: BTreeSet::new(),
        }
    }

    /// Builds a fully-converged view of an undirected edge list.
    fn view_of(self_id: &str, edges: &[(&str, &str, u32)]) -> TopologyView {
        let mut neighbors: BTreeMap<&str, Vec<(&str, u32)>> = BTreeMap::new();
        for (a, b, lat) in edges {
            neighbors.entry(a).or_default().push((b, *lat));
            neighbors.entry(b).or_default().push((a, *lat));
        }
        let mut view = TopologyView::new(self_id, &format!("site-{self_id}"));
        for (node, adj) in &neighbors {
            let announcement = lsa(node, 1, adj);
            if *node == self_id {
                view.originate(announcement, 0);
            } else {
                view.apply_lsa(announcement, 0);
            }
        }
        view
    }

    #[test]
    fn stale_lsa_ignored() {
        let mut view = TopologyView::new("a", "s");
        assert!(view.apply_lsa(lsa("b", 5, &[("a", 1)]), 0));
        assert!(!view.apply_lsa(lsa("b", 5, &[("a", 9)]), 0));
        assert!(!view.apply_lsa(lsa("b", 4, &[("a", 9)]), 0));
        assert!(view.apply_lsa(lsa("b", 6, &[("a", 9)]), 0));
    }

    #[test]
    fn new_node_appears_with_confirmed_edges() {
        let mut view = TopologyView::new("a", "s");
        view.originate(lsa("a", 1, &[("b", 5)]), 0);
        // one-sided claim: no edge yet
        assert!(view.edges().is_empty());
        view.apply_lsa(lsa("b", 1, &[("a", 5)]), 0);
        assert_eq!(view.edges()[&("a".to_string(), "b".to_string())], 5);
        assert_eq!(view.nodes().count(), 2);
    }

    #[test]
    fn equal_views_have_equal_digests() {
        let v1 = view_of("a", &[("a", "b", 5), ("b", "c", 7)]);
        let v2 = view_of("b", &[("b", "c", 7), ("a", "b", 5)]);
        assert_eq!(v1.digest(), v2.digest());
        let v3 = view_of("a", &[("a", "b", 5), ("b", "c", 8)]);
        assert_ne!(v1.digest(), v3.digest());
    }

    #[test]
    fn purge_keeps_fresh_and_self() {
        let mut view = TopologyView::new("a", "s");
        view.apply_lsa(lsa("b", 1, &[("a", 1)]), 0);
        view.apply_lsa(lsa("c", 1, &[("a", 1)]), 29_000);
        assert!(view.purge_stale(40_000));
        assert!(view.contains("a"));
        assert!(!view.contains("b"));
        assert!(view.contains("c"));
    }

    #[test]
    fn single_node_tree_is_trivial() {
        let view = TopologyView::new("a", "s");
        let tree = compute_tree(&view, "a").unwrap();
        assert!(tree.parent.is_empty());
        assert_eq!(tree.children_of("a").count(), 0);
        assert_eq!(tree.distance[&"a".to_string()], 0);
        assert!(compute_tree(&view, "zz").is_err());
    }

    #[test]
    fn triangle_avoids_expensive_edge() {
        let view = view_of("a", &[("a", "b", 1), ("b", "c", 1), ("a", "c", 10)]);
        let tree = compute_tree(&view, "a").unwrap();
        assert_eq!(tree.parent[&"b".to_string()], "a");
        assert_eq!(tree.parent[&"c".to_string()], "b");
        assert_eq!(tree.distance[&"c".to_string()], 2);
    }

    #[test]
    fn equal_cost_diamond_breaks_ties_by_parent_id() {
        // a-b and a-c cost 1; b-d and c-d cost 1: d reachable via b or c.
        let view = view_of("a", &[("a", "b", 1), ("a", "c", 1), ("b", "d", 1), ("c", "d", 1)]);
        let t1 = compute_tree(&view, "a").unwrap();
        assert_eq!(t1.parent[&"d".to_string()], "b");
        let t2 = compute_tree(&view, "a").unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn tree_spans_only_the_source_component() {
        let view = view_of("a", &[("a", "b", 1), ("c", "d", 1)]);
        let tree = compute_tree(&view, "a").unwrap();
        assert!(tree.contains("b"));
        assert!(!tree.contains("c"));
        assert_eq!(tree.subtree("a"), ["a".to_string(), "b".to_string()].into());
    }

    #[test]
    fn steiner_count_shares_common_paths() {
        // chain a-b-c-d
        let view = view_of("a", &[("a", "b", 1), ("b", "c", 1), ("c", "d", 1)]);
        let tree = compute_tree(&view, "a").unwrap();
        assert_eq!(tree.steiner_edge_count(&["d".to_string()].into()), 3);
        assert_eq!(
            tree.steiner_edge_count(&["c".to_string(), "d".to_string()].into()),
            3
        );
        assert_eq!(tree.steiner_edge_count(&["a".to_string()].into()), 0);
        assert_eq!(tree.steiner_edge_count(&BTreeSet::new()), 0);
    }

    #[test]
    fn ingress_lookup_follows_sources() {
        let mut view = TopologyView::new("a", "s");
        let mut b = lsa("b", 1, &[("a", 1)]);
        b.sources.insert("SIM1".to_string());
        view.apply_lsa(b, 0);
        assert_eq!(view.ingress_of("SIM1"), Some(&"b".to_string()));
        assert_eq!(view.ingress_of("SIM2"), None);
    }

    #[test]
    fn adverts_apply_split_horizon_and_covering() {
        let f_all = parse_filter_expr("source=SIM1").unwrap();
        let f_sub = parse_filter_expr("source=SIM1 type=TRADE").unwrap();
        let f_other = parse_filter_expr("source=SIM2").unwrap();

        // no interest anywhere: empty advertisements
        let learned: BTreeMap<u32, BTreeSet<_>> =
            [(1, BTreeSet::new()), (2, BTreeSet::new())].into();
        let adverts = split_horizon_adverts(&BTreeSet::new(), &learned);
        assert!(adverts[&1].is_empty() && adverts[&2].is_empty());

        // interest learned on link 1 goes out on link 2 only
        let learned: BTreeMap<u32, BTreeSet<_>> =
            [(1, [f_other.clone()].into()), (2, BTreeSet::new())].into();
        let adverts = split_horizon_adverts(&[f_sub.clone()].into(), &learned);
        assert_eq!(adverts[&1], [f_sub.clone()].into());
        assert_eq!(adverts[&2], [f_sub.clone(), f_other.clone()].into());

        // covering filter swallows the covered one
        let adverts = split_horizon_adverts(
            &[f_all.clone(), f_sub.clone()].into(),
            &[(1, BTreeSet::new())].into(),
        );
        assert_eq!(adverts[&1], [f_all].into());
    }
}
