//! Time-valid, entity-grounded retrieval.
//!
//! A query runs in three stages over the snapshot visible at `at_ts`:
//!
//! 1. **Candidates.** Top-`k_entity` entity nodes and top-`k_event` event
//!    nodes by cosine with the query embedding, both restricted by the
//!    temporal mask.
//! 2. **Filter.** Keep only candidate events that have an event-entity edge
//!    to at least one candidate entity.
//! 3. **Expand.** Add every event reachable from the filtered set within
//!    `hops` event-event edges (any relation, either direction), walking
//!    only through events that pass the mask.
//!
//! The result is assembled into a [`ContextBundle`] together with the user
//! profile and can be rendered to a character-budgeted text block.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, SecondsFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityKind, InteractionGraph, Relation};
use crate::index::{rank_order, IndexError, ScoredNode, SimilarityIndex};
use crate::providers::{Embedder, ProviderError};
use crate::store::{MemoryStore, StoreError};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_HOPS: usize = 1;
/// Score multiplier applied per expansion hop.
pub const HOP_DECAY: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is for user `{actual}`, store is for `{expected}`")]
    UserMismatch { expected: String, actual: String },
    #[error("query text is empty")]
    EmptyQuery,
    #[error("store is not fully indexed")]
    NotIndexed,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_hops() -> usize {
    DEFAULT_HOPS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub user_id: String,
    pub text: String,
    pub at_ts: i64,
    #[serde(default = "default_k")]
    pub k_entity: usize,
    #[serde(default = "default_k")]
    pub k_event: usize,
    #[serde(default = "default_hops")]
    pub hops: usize,
    /// Only events that started within this many seconds before `at_ts`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_s: Option<i64>,
    #[serde(default = "default_true")]
    pub include_profile: bool,
}

impl Query {
    pub fn new(user_id: impl Into<String>, text: impl Into<String>, at_ts: i64) -> Self {
        Self {
            user_id: user_id.into(),
            text: text.into(),
            at_ts,
            k_entity: DEFAULT_K,
            k_event: DEFAULT_K,
            hops: DEFAULT_HOPS,
            lookback_s: None,
            include_profile: true,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_entity = k;
        self.k_event = k;
        self
    }

    pub fn with_hops(mut self, hops: usize) -> Self {
        self.hops = hops;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Candidate,
    Filtered,
    Expanded,
    Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub event_id: String,
    pub caption: String,
    pub location: String,
    pub start_ts: i64,
    pub timestamp: String,
    pub entity_names: Vec<String>,
    pub score: f64,
    /// Hops from the nearest filtered event; 0 for filtered events.
    pub hop: usize,
    pub origin: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySummary {
    pub entity_id: String,
    pub kind: EntityKind,
    pub canonical_name: String,
    pub score: f64,
    pub origin: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    /// Ascending `(start_ts, event_id)`.
    pub events: Vec<EventSummary>,
    pub entities: Vec<EntitySummary>,
    pub profile_text: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub candidates_entity: Vec<ScoredNode>,
    pub candidates_event: Vec<ScoredNode>,
    pub filtered: BTreeSet<String>,
    pub expanded: BTreeSet<String>,
    pub context: ContextBundle,
}

impl RetrievalResult {
    /// Filtered events by score, then expansion-only events by decayed score.
    pub fn ranked_events(&self) -> Vec<String> {
        let mut filtered: Vec<ScoredNode> = Vec::new();
        let mut expanded: Vec<ScoredNode> = Vec::new();
        for e in &self.context.events {
            let node = ScoredNode { node_id: e.event_id.clone(), score: e.score };
            match e.origin {
                Provenance::Filtered => filtered.push(node),
                _ => expanded.push(node),
            }
        }
        filtered.sort_by(rank_order);
        expanded.sort_by(rank_order);
        filtered.into_iter().chain(expanded).map(|n| n.node_id).collect()
    }

    /// Compact JSON; the one serialization shared by every front end.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("retrieval results serialize")
    }
}

pub fn iso8601(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| ts.to_string())
}

/// Admit events that started strictly before `at_ts` and entities first seen
/// strictly before it.
pub fn temporal_mask(graph: &InteractionGraph, at_ts: i64) -> impl Fn(&str) -> bool + '_ {
    window_mask(graph, at_ts, None)
}

/// [`temporal_mask`] with an optional lookback bound on events.
pub fn window_mask(graph: &InteractionGraph, at_ts: i64, lookback_s: Option<i64>) -> impl Fn(&str) -> bool + '_ {
    let earliest = lookback_s.map(|l| at_ts.saturating_sub(l));
    move |id: &str| {
        if let Some(e) = graph.event(id) {
            e.start_ts < at_ts && earliest.is_none_or(|lo| e.start_ts >= lo)
        } else if let Some(n) = graph.entity(id) {
            n.first_seen_ts < at_ts
        } else {
            false
        }
    }
}

/// A store together with its event and entity similarity indexes.
#[derive(Debug, Clone)]
pub struct IndexedStore {
    store: MemoryStore,
    events: SimilarityIndex,
    entities: SimilarityIndex,
}

impl IndexedStore {
    pub fn new(store: MemoryStore) -> Result<Self, RetrievalError> {
        if !store.is_indexed() {
            return Err(RetrievalError::NotIndexed);
        }
        let events = store.event_index()?;
        let entities = store.entity_index()?;
        Ok(Self { store, events, entities })
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn into_store(self) -> MemoryStore {
        self.store
    }

    pub fn event_index(&self) -> &SimilarityIndex {
        &self.events
    }

    pub fn entity_index(&self) -> &SimilarityIndex {
        &self.entities
    }
}

pub fn retrieve(indexed: &IndexedStore, query: &Query, embedder: &dyn Embedder) -> Result<RetrievalResult, RetrievalError> {
    let store = indexed.store();
    let graph = store.graph();
    if query.user_id != store.user_id() {
        return Err(RetrievalError::UserMismatch { expected: store.user_id().to_string(), actual: query.user_id.clone() });
    }
    if query.text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if query.k_entity == 0 || query.k_event == 0 {
        return Err(IndexError::ZeroK.into());
    }
    let profile_text = query
        .include_profile
        .then(|| store.profile().map(|p| p.render()))
        .flatten()
        .filter(|t| !t.is_empty());
    let Some(dim) = store.dimension() else {
        return Ok(RetrievalResult { context: ContextBundle { profile_text, ..Default::default() }, ..Default::default() });
    };
    let q = embedder.embed_one(&query.text)?;
    if q.dimension() != dim {
        return Err(IndexError::DimensionMismatch { expected: dim, actual: q.dimension() }.into());
    }
    if q.is_zero() {
        return Ok(RetrievalResult { context: ContextBundle { profile_text, ..Default::default() }, ..Default::default() });
    }

    let mask = window_mask(graph, query.at_ts, query.lookback_s);
    let candidates_entity = indexed.entities.top_k(&q, query.k_entity, Some(&mask))?;
    let candidates_event = indexed.events.top_k(&q, query.k_event, Some(&mask))?;
    let entity_set: BTreeSet<&str> = candidates_entity.iter().map(|c| c.node_id.as_str()).collect();

    let mut scores: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in &candidates_event {
        let ev = graph.event(&c.node_id).expect("indexed event exists");
        if ev.entity_refs().any(|id| entity_set.contains(id.as_str())) {
            scores.insert(c.node_id.clone(), (c.score, 0));
        }
    }
    let filtered: BTreeSet<String> = scores.keys().cloned().collect();

    // Per-source BFS: an expanded event scores max over sources of
    // score(source) * HOP_DECAY^distance.
    let mut expansion: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for source in &filtered {
        let base = scores[source].0;
        let mut seen = BTreeSet::from([source.clone()]);
        let mut queue = VecDeque::from([(source.clone(), 0usize)]);
        while let Some((u, d)) = queue.pop_front() {
            if d == query.hops {
                continue;
            }
            for v in graph.neighbors(&u, &Relation::ALL).expect("event exists") {
                if !mask(&v) || !seen.insert(v.clone()) {
                    continue;
                }
                if !filtered.contains(&v) {
                    let s = base * HOP_DECAY.powi((d + 1) as i32);
                    let slot = expansion.entry(v.clone()).or_insert((s, d + 1));
                    slot.0 = slot.0.max(s);
                    slot.1 = slot.1.min(d + 1);
                }
                queue.push_back((v, d + 1));
            }
        }
    }
    scores.extend(expansion);
    let expanded: BTreeSet<String> = scores.keys().cloned().collect();

    let mut events: Vec<EventSummary> = scores
        .iter()
        .map(|(id, &(score, hop))| {
            let ev = graph.event(id).expect("event exists");
            EventSummary {
                event_id: id.clone(),
                caption: ev.caption.clone(),
                location: ev.location.clone(),
                start_ts: ev.start_ts,
                timestamp: iso8601(ev.start_ts),
                entity_names: ev.entity_refs().filter_map(|r| graph.entity(r)).map(|n| n.canonical_name.clone()).collect(),
                score,
                hop,
                origin: if hop == 0 { Provenance::Filtered } else { Provenance::Expanded },
            }
        })
        .collect();
    events.sort_by(|a, b| (a.start_ts, &a.event_id).cmp(&(b.start_ts, &b.event_id)));

    let entities = candidates_entity
        .iter()
        .filter(|c| graph.events_of_entity(&c.node_id).any(|e| filtered.contains(e)))
        .map(|c| {
            let n = graph.entity(&c.node_id).expect("indexed entity exists");
            EntitySummary {
                entity_id: c.node_id.clone(),
                kind: n.kind,
                canonical_name: n.canonical_name.clone(),
                score: c.score,
                origin: Provenance::Candidate,
            }
        })
        .collect();

    Ok(RetrievalResult {
        candidates_entity,
        candidates_event,
        filtered,
        expanded,
        context: ContextBundle { events, entities, profile_text },
    })
}

fn event_line(e: &EventSummary) -> String {
    let mut line = format!("[{}] {}", e.timestamp, e.caption);
    if !e.location.is_empty() {
        line.push_str(&format!(" @ {}", e.location));
    }
    if !e.entity_names.is_empty() {
        line.push_str(&format!(" (with: {})", e.entity_names.join(", ")));
    }
    line.push('\n');
    line
}

const EVENTS_HEADER: &str = "Relevant events:\n";

/// Render the profile followed by events in time order, within
/// `budget_chars` characters. Over budget, whole event lines are dropped:
/// expanded events first, then filtered ones, lowest score first (later
/// events first among equal scores). The profile goes last.
pub fn render_context(result: &RetrievalResult, budget_chars: usize) -> String {
    let bundle = &result.context;
    let lines: Vec<String> = bundle.events.iter().map(event_line).collect();
    let len = |s: &str| s.chars().count();
    let profile = bundle.profile_text.as_deref().map(|p| if p.ends_with('\n') { p.to_string() } else { format!("{p}\n") });
    let profile_len = profile.as_deref().map_or(0, len);
    let mut keep = vec![true; lines.len()];
    let mut kept = lines.len();
    let mut events_len: usize = lines.iter().map(|l| len(l)).sum();

    let separator = |profile_len: usize, kept: usize| usize::from(profile_len > 0 && kept > 0);
    let total = |profile_len: usize, events_len: usize, kept: usize| {
        profile_len + separator(profile_len, kept) + if kept > 0 { len(EVENTS_HEADER) + events_len } else { 0 }
    };

    let mut drop_order: Vec<usize> = (0..lines.len()).collect();
    drop_order.sort_by(|&a, &b| {
        let (ea, eb) = (&bundle.events[a], &bundle.events[b]);
        let tier = |e: &EventSummary| u8::from(e.origin == Provenance::Filtered);
        tier(ea)
            .cmp(&tier(eb))
            .then(ea.score.total_cmp(&eb.score))
            .then((eb.start_ts, &eb.event_id).cmp(&(ea.start_ts, &ea.event_id)))
    });
    for i in drop_order {
        if total(profile_len, events_len, kept) <= budget_chars {
            break;
        }
        keep[i] = false;
        kept -= 1;
        events_len -= len(&lines[i]);
    }
    let include_profile = total(profile_len, events_len, kept) <= budget_chars;

    let mut out = String::new();
    if include_profile {
        if let Some(p) = &profile {
            out.push_str(p);
            if kept > 0 {
                out.push('\n');
            }
        }
    }
    if kept > 0 {
        out.push_str(EVENTS_HEADER);
        for (line, _) in lines.iter().zip(&keep).filter(|(_, k)| **k) {
            out.push_str(line);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityNode, EventNode};

    fn graph() -> InteractionGraph {
        let mut g = InteractionGraph::new("u");
        g.add_entity(EntityNode::new("n1", "u", EntityKind::Object, "mug", 50)).unwrap();
        for (id, ts) in [("a", 99), ("b", 100)] {
            g.add_event(EventNode {
                event_id: id.into(),
                user_id: "u".into(),
                caption: "x".into(),
                object_refs: Default::default(),
                person_refs: Default::default(),
                speech: vec![],
                location: String::new(),
                start_ts: ts,
                end_ts: ts,
            })
            .unwrap();
        }
        g
    }

    #[test]
    fn temporal_mask_is_strict() {
        let g = graph();
        let mask = temporal_mask(&g, 100);
        assert!(mask("a"));
        assert!(!mask("b"));
        assert!(!temporal_mask(&g, 10)("n1"));
        assert!(temporal_mask(&g, 51)("n1"));
        assert!(!mask("unknown"));
    }

    #[test]
    fn lookback_bounds_events_only() {
        let g = graph();
        let mask = window_mask(&g, 101, Some(1));
        assert!(!mask("a"));
        assert!(mask("b"));
        assert!(mask("n1"));
    }

    #[test]
    fn iso_timestamps() {
        assert_eq!(iso8601(0), "1970-01-01T00:00:00Z");
        assert_eq!(iso8601(1_709_537_400), "2024-03-04T07:30:00Z");
    }

    #[test]
    fn render_empty_result() {
        let result = RetrievalResult::default();
        assert_eq!(render_context(&result, 1000), "");
        let mut with_profile = RetrievalResult::default();
        with_profile.context.profile_text = Some("User habits:\n- x\n".into());
        assert_eq!(render_context(&with_profile, 1000), "User habits:\n- x\n");
    }
}
