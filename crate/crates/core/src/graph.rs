//! Domain types and the per-user heterogeneous interaction graph.
//!
//! The graph holds two node families (episodic events and persistent
//! entities) and two edge families (typed event-event edges and
//! event-entity participation edges). All maps are ordered so iteration,
//! serialization and every derived computation are deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("event `{event}` references unknown entity `{entity}`")]
    DanglingEntityRef { event: String, entity: String },
    #[error("entity `{entity}` is a {actual}, referenced as a {expected}")]
    KindMismatch { entity: String, expected: EntityKind, actual: EntityKind },
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("node belongs to user `{actual}`, graph is for `{expected}`")]
    UserMismatch { expected: String, actual: String },
    #[error("invalid event `{id}`: {reason}")]
    InvalidEvent { id: String, reason: String },
    #[error("invalid entity `{id}`: {reason}")]
    InvalidEntity { id: String, reason: String },
    #[error("invalid edge {src} -> {dst}: {reason}")]
    InvalidEdge { src: String, dst: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Object,
    Person,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Object => "object",
            EntityKind::Person => "person",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Temporal,
    Causal,
    Coactivity,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Temporal, Relation::Causal, Relation::Coactivity];

    /// Temporal and causal edges point forward in time; coactivity is undirected.
    pub fn is_directed(self) -> bool {
        !matches!(self, Relation::Coactivity)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Temporal => "temporal",
            Relation::Causal => "causal",
            Relation::Coactivity => "coactivity",
        })
    }
}

/// One episodic interaction. Its timestamp for all ordering purposes is `start_ts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub event_id: String,
    pub user_id: String,
    pub caption: String,
    #[serde(default)]
    pub object_refs: BTreeSet<String>,
    #[serde(default)]
    pub person_refs: BTreeSet<String>,
    #[serde(default)]
    pub speech: Vec<String>,
    #[serde(default)]
    pub location: String,
    pub start_ts: i64,
    pub end_ts: i64,
}

impl EventNode {
    /// Total order key: `(start_ts, event_id)`.
    pub fn order_key(&self) -> (i64, &str) {
        (self.start_ts, self.event_id.as_str())
    }

    /// Object and person refs together.
    pub fn entity_refs(&self) -> impl Iterator<Item = &String> {
        self.object_refs.iter().chain(self.person_refs.iter())
    }

    fn check(&self) -> Result<(), GraphError> {
        let invalid = |reason: &str| GraphError::InvalidEvent { id: self.event_id.clone(), reason: reason.into() };
        if self.event_id.is_empty() {
            return Err(invalid("empty event id"));
        }
        if self.caption.trim().is_empty() {
            return Err(invalid("empty caption"));
        }
        if self.start_ts > self.end_ts {
            return Err(invalid("start_ts after end_ts"));
        }
        Ok(())
    }
}

pub fn cmp_events(a: &EventNode, b: &EventNode) -> Ordering {
    a.order_key().cmp(&b.order_key())
}

/// A persistent object or person that anchors events across time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: String,
    pub user_id: String,
    pub kind: EntityKind,
    pub canonical_name: String,
    pub aliases: BTreeSet<String>,
    pub first_seen_ts: i64,
    pub last_seen_ts: i64,
    pub mention_count: u64,
}

impl EntityNode {
    pub fn new(entity_id: impl Into<String>, user_id: impl Into<String>, kind: EntityKind, name: impl Into<String>, ts: i64) -> Self {
        let name = name.into();
        Self {
            entity_id: entity_id.into(),
            user_id: user_id.into(),
            kind,
            aliases: BTreeSet::from([name.clone()]),
            canonical_name: name,
            first_seen_ts: ts,
            last_seen_ts: ts,
            mention_count: 0,
        }
    }

    fn check(&self) -> Result<(), GraphError> {
        let invalid = |reason: &str| GraphError::InvalidEntity { id: self.entity_id.clone(), reason: reason.into() };
        if self.entity_id.is_empty() {
            return Err(invalid("empty entity id"));
        }
        if !self.aliases.contains(&self.canonical_name) {
            return Err(invalid("canonical name missing from aliases"));
        }
        if self.first_seen_ts > self.last_seen_ts {
            return Err(invalid("first_seen_ts after last_seen_ts"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEdge {
    pub src: String,
    pub dst: String,
    pub relation: Relation,
    pub confidence: f64,
}

impl EventEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, relation: Relation) -> Self {
        Self { src: src.into(), dst: dst.into(), relation, confidence: 1.0 }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    /// Coactivity edges are stored with `src < dst`.
    pub fn canonical(mut self) -> Self {
        if self.relation == Relation::Coactivity && self.dst < self.src {
            std::mem::swap(&mut self.src, &mut self.dst);
        }
        self
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey { src: self.src.clone(), dst: self.dst.clone(), relation: self.relation }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub src: String,
    pub dst: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventEntityEdge {
    pub event: String,
    pub entity: String,
    pub role: EntityKind,
}

/// The heterogeneous memory graph of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    user_id: String,
    events: BTreeMap<String, EventNode>,
    entities: BTreeMap<String, EntityNode>,
    event_edges: BTreeMap<EdgeKey, f64>,
    event_entity_edges: BTreeSet<EventEntityEdge>,
    // derived indexes
    adjacency: BTreeMap<String, BTreeSet<(String, Relation)>>,
    entity_events: BTreeMap<String, BTreeSet<String>>,
}

impl InteractionGraph {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            events: BTreeMap::new(),
            entities: BTreeMap::new(),
            event_edges: BTreeMap::new(),
            event_entity_edges: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            entity_events: BTreeMap::new(),
        }
    }

    /// Rebuild a graph from stored parts, checking every invariant without
    /// touching entity statistics.
    pub fn from_parts(
        user_id: impl Into<String>,
        events: Vec<EventNode>,
        entities: Vec<EntityNode>,
        event_edges: Vec<EventEdge>,
        event_entity_edges: Vec<EventEntityEdge>,
    ) -> Result<Self, GraphError> {
        let mut graph = Self::new(user_id);
        for entity in entities {
            graph.check_new_entity(&entity)?;
            graph.entities.insert(entity.entity_id.clone(), entity);
        }
        for event in events {
            graph.check_new_event(&event)?;
            graph.events.insert(event.event_id.clone(), event);
        }
        for edge in event_entity_edges {
            let entity = graph.entities.get(&edge.entity).ok_or_else(|| GraphError::UnknownEntity(edge.entity.clone()))?;
            let event = graph.events.get(&edge.event).ok_or_else(|| GraphError::UnknownEvent(edge.event.clone()))?;
            if entity.kind != edge.role {
                return Err(GraphError::KindMismatch { entity: edge.entity.clone(), expected: edge.role, actual: entity.kind });
            }
            let refs = match edge.role {
                EntityKind::Object => &event.object_refs,
                EntityKind::Person => &event.person_refs,
            };
            if !refs.contains(&edge.entity) {
                return Err(GraphError::InvalidEdge {
                    src: edge.event.clone(),
                    dst: edge.entity.clone(),
                    reason: "event-entity edge without a matching ref".into(),
                });
            }
            if !graph.event_entity_edges.insert(edge.clone()) {
                return Err(GraphError::InvalidEdge { src: edge.event, dst: edge.entity, reason: "duplicate event-entity edge".into() });
            }
            graph.entity_events.entry(edge.entity).or_default().insert(edge.event);
        }
        for event in graph.events.values() {
            for (entity, role) in ref_roles(event) {
                let edge = EventEntityEdge { event: event.event_id.clone(), entity: entity.clone(), role };
                if !graph.event_entity_edges.contains(&edge) {
                    return Err(GraphError::InvalidEdge {
                        src: edge.event,
                        dst: edge.entity,
                        reason: "ref without a materialized event-entity edge".into(),
                    });
                }
            }
        }
        for (id, entity) in &graph.entities {
            if graph.entity_events.contains_key(id) && entity.mention_count == 0 {
                return Err(GraphError::InvalidEntity { id: id.clone(), reason: "referenced entity with zero mentions".into() });
            }
        }
        for edge in event_edges {
            if edge.relation == Relation::Coactivity && edge.dst < edge.src {
                return Err(GraphError::InvalidEdge { src: edge.src, dst: edge.dst, reason: "coactivity edge not in canonical order".into() });
            }
            if !graph.add_event_edge(edge.clone())? {
                return Err(GraphError::InvalidEdge { src: edge.src, dst: edge.dst, reason: "duplicate event-event edge".into() });
            }
        }
        Ok(graph)
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn events(&self) -> &BTreeMap<String, EventNode> {
        &self.events
    }

    pub fn entities(&self) -> &BTreeMap<String, EntityNode> {
        &self.entities
    }

    pub fn event(&self, id: &str) -> Option<&EventNode> {
        self.events.get(id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.events.contains_key(id) || self.entities.contains_key(id)
    }

    pub fn event_edges(&self) -> impl Iterator<Item = EventEdge> + '_ {
        self.event_edges.iter().map(|(k, &confidence)| EventEdge {
            src: k.src.clone(),
            dst: k.dst.clone(),
            relation: k.relation,
            confidence,
        })
    }

    pub fn event_edge_count(&self) -> usize {
        self.event_edges.len()
    }

    pub fn has_event_edge(&self, key: &EdgeKey) -> bool {
        self.event_edges.contains_key(key)
    }

    pub fn event_entity_edges(&self) -> &BTreeSet<EventEntityEdge> {
        &self.event_entity_edges
    }

    /// Events referencing `entity_id`.
    pub fn events_of_entity(&self, entity_id: &str) -> impl Iterator<Item = &String> {
        self.entity_events.get(entity_id).into_iter().flatten()
    }

    /// All events sorted by `(start_ts, event_id)`.
    pub fn events_ordered(&self) -> Vec<&EventNode> {
        let mut events: Vec<&EventNode> = self.events.values().collect();
        events.sort_by(|a, b| cmp_events(a, b));
        events
    }

    fn check_user(&self, user: &str) -> Result<(), GraphError> {
        if user != self.user_id {
            return Err(GraphError::UserMismatch { expected: self.user_id.clone(), actual: user.to_string() });
        }
        Ok(())
    }

    fn check_new_entity(&self, entity: &EntityNode) -> Result<(), GraphError> {
        entity.check()?;
        self.check_user(&entity.user_id)?;
        if self.contains_node(&entity.entity_id) {
            return Err(GraphError::DuplicateId(entity.entity_id.clone()));
        }
        Ok(())
    }

    fn check_new_event(&self, event: &EventNode) -> Result<(), GraphError> {
        event.check()?;
        self.check_user(&event.user_id)?;
        if self.contains_node(&event.event_id) {
            return Err(GraphError::DuplicateId(event.event_id.clone()));
        }
        for (id, role) in ref_roles(event) {
            let entity = self
                .entities
                .get(id)
                .ok_or_else(|| GraphError::DanglingEntityRef { event: event.event_id.clone(), entity: id.clone() })?;
            if entity.kind != role {
                return Err(GraphError::KindMismatch { entity: id.clone(), expected: role, actual: entity.kind });
            }
        }
        Ok(())
    }

    pub fn add_entity(&mut self, entity: EntityNode) -> Result<(), GraphError> {
        self.check_new_entity(&entity)?;
        self.entities.insert(entity.entity_id.clone(), entity);
        Ok(())
    }

    pub(crate) fn entity_mut(&mut self, id: &str) -> Option<&mut EntityNode> {
        self.entities.get_mut(id)
    }

    /// Insert an event, bump the statistics of every entity it references and
    /// materialize its event-entity edges. Rejected inserts leave the graph
    /// untouched.
    pub fn add_event(&mut self, event: EventNode) -> Result<(), GraphError> {
        self.check_new_event(&event)?;
        for (id, role) in ref_roles(&event) {
            let entity = self.entities.get_mut(id).expect("checked above");
            entity.mention_count += 1;
            entity.first_seen_ts = entity.first_seen_ts.min(event.start_ts);
            entity.last_seen_ts = entity.last_seen_ts.max(event.start_ts);
            self.event_entity_edges.insert(EventEntityEdge { event: event.event_id.clone(), entity: id.clone(), role });
            self.entity_events.entry(id.clone()).or_default().insert(event.event_id.clone());
        }
        self.events.insert(event.event_id.clone(), event);
        Ok(())
    }

    /// Insert an event-event edge in canonical form. Returns `false` when the
    /// `(src, dst, relation)` triple is already present.
    pub fn add_event_edge(&mut self, edge: EventEdge) -> Result<bool, GraphError> {
        let edge = edge.canonical();
        let invalid = |reason: &str| GraphError::InvalidEdge { src: edge.src.clone(), dst: edge.dst.clone(), reason: reason.into() };
        if edge.src == edge.dst {
            return Err(invalid("self loop"));
        }
        if !(0.0..=1.0).contains(&edge.confidence) {
            return Err(invalid("confidence outside [0, 1]"));
        }
        let src = self.events.get(&edge.src).ok_or_else(|| GraphError::UnknownEvent(edge.src.clone()))?;
        let dst = self.events.get(&edge.dst).ok_or_else(|| GraphError::UnknownEvent(edge.dst.clone()))?;
        if edge.relation.is_directed() && src.start_ts > dst.start_ts {
            return Err(invalid("directed edge points backwards in time"));
        }
        let key = edge.key();
        if self.event_edges.contains_key(&key) {
            return Ok(false);
        }
        self.adjacency.entry(key.src.clone()).or_default().insert((key.dst.clone(), key.relation));
        self.adjacency.entry(key.dst.clone()).or_default().insert((key.src.clone(), key.relation));
        self.event_edges.insert(key, edge.confidence);
        Ok(true)
    }

    /// Events connected to `event_id` by an edge whose relation is in
    /// `relations`. Every relation is followed in both directions.
    pub fn neighbors(&self, event_id: &str, relations: &[Relation]) -> Result<BTreeSet<String>, GraphError> {
        if !self.events.contains_key(event_id) {
            return Err(GraphError::UnknownEvent(event_id.to_string()));
        }
        Ok(self
            .adjacency
            .get(event_id)
            .into_iter()
            .flatten()
            .filter(|(_, rel)| relations.contains(rel))
            .map(|(id, _)| id.clone())
            .collect())
    }

    /// Full invariant check; used after loads and by property tests.
    pub fn validate(&self) -> Result<(), GraphError> {
        Self::from_parts(
            self.user_id.clone(),
            self.events.values().cloned().collect(),
            self.entities.values().cloned().collect(),
            self.event_edges().collect(),
            self.event_entity_edges.iter().cloned().collect(),
        )
        .map(|_| ())
    }
}

fn ref_roles(event: &EventNode) -> impl Iterator<Item = (&String, EntityKind)> {
    event
        .object_refs
        .iter()
        .map(|id| (id, EntityKind::Object))
        .chain(event.person_refs.iter().map(|id| (id, EntityKind::Person)))
}
