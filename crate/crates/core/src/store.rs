//! `MemoryStore`: graph + embeddings + optional profile, and its versioned
//! JSON document format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityNode, EventEdge, EventEntityEdge, EventNode, GraphError, InteractionGraph};
use crate::index::{EmbeddingVector, SimilarityIndex};
use crate::profile::UserProfile;
use crate::providers::{Embedder, ProviderError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed store document: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {0} (supported: {SCHEMA_VERSION})")]
    UnsupportedVersion(u64),
    #[error("invariant violation: {0}")]
    Invariant(#[from] GraphError),
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("profile error: {0}")]
    Profile(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A per-user memory snapshot. Mutating methods are only used while building
/// a new snapshot; published snapshots are shared immutably.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    graph: InteractionGraph,
    profile: Option<UserProfile>,
    embeddings: BTreeMap<String, EmbeddingVector>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreDocument {
    schema_version: u64,
    user_id: String,
    events: Vec<EventNode>,
    entities: Vec<EntityNode>,
    event_edges: Vec<EventEdge>,
    event_entity_edges: Vec<EventEntityEdge>,
    embeddings: BTreeMap<String, EmbeddingVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<UserProfile>,
}

impl MemoryStore {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self::from_graph(InteractionGraph::new(user_id))
    }

    pub fn from_graph(graph: InteractionGraph) -> Self {
        Self { graph, profile: None, embeddings: BTreeMap::new() }
    }

    pub fn user_id(&self) -> &str {
        self.graph.user_id()
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut InteractionGraph {
        &mut self.graph
    }

    pub fn profile(&self) -> Option<&UserProfile> {
        self.profile.as_ref()
    }

    pub fn set_profile(&mut self, profile: Option<UserProfile>) {
        self.profile = profile;
    }

    pub fn embeddings(&self) -> &BTreeMap<String, EmbeddingVector> {
        &self.embeddings
    }

    pub fn embedding(&self, node_id: &str) -> Option<&EmbeddingVector> {
        self.embeddings.get(node_id)
    }

    /// Dimension of the stored embeddings, if any exist.
    pub fn dimension(&self) -> Option<usize> {
        self.embeddings.values().next().map(EmbeddingVector::dimension)
    }

    pub fn set_embedding(&mut self, node_id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        let node_id = node_id.into();
        if !self.graph.contains_node(&node_id) {
            return Err(StoreError::Embedding(format!("embedding for unknown node `{node_id}`")));
        }
        if let Some(dim) = self.dimension() {
            if dim != vector.dimension() {
                return Err(StoreError::Embedding(format!(
                    "embedding for `{node_id}` has dimension {}, store uses {dim}",
                    vector.dimension()
                )));
            }
        }
        self.embeddings.insert(node_id, vector);
        Ok(())
    }

    /// Embed every event caption and entity canonical name that has no
    /// embedding yet. Returns how many nodes were embedded.
    pub fn index_missing(&mut self, embedder: &dyn Embedder) -> Result<usize, StoreError> {
        let mut ids = Vec::new();
        let mut texts = Vec::new();
        for (id, ev) in self.graph.events() {
            if !self.embeddings.contains_key(id) {
                ids.push(id.clone());
                texts.push(ev.caption.clone());
            }
        }
        for (id, en) in self.graph.entities() {
            if !self.embeddings.contains_key(id) {
                ids.push(id.clone());
                texts.push(en.canonical_name.clone());
            }
        }
        if ids.is_empty() {
            return Ok(0);
        }
        let vectors = embedder.embed_batch(&texts)?;
        for (id, v) in ids.iter().zip(vectors) {
            self.set_embedding(id.clone(), v)?;
        }
        Ok(ids.len())
    }

    pub fn is_indexed(&self) -> bool {
        self.graph.events().keys().chain(self.graph.entities().keys()).all(|id| self.embeddings.contains_key(id))
    }

    pub fn event_index(&self) -> Result<SimilarityIndex, StoreError> {
        self.build_index(self.graph.events().keys())
    }

    pub fn entity_index(&self) -> Result<SimilarityIndex, StoreError> {
        self.build_index(self.graph.entities().keys())
    }

    fn build_index<'a>(&'a self, ids: impl Iterator<Item = &'a String>) -> Result<SimilarityIndex, StoreError> {
        let Some(dim) = self.dimension() else {
            return Ok(SimilarityIndex::empty(0));
        };
        let rows = ids.filter_map(|id| self.embeddings.get(id).map(|v| (id.as_str(), v)));
        SimilarityIndex::build(dim, rows).map_err(|e| StoreError::Embedding(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        self.graph.validate()?;
        let mut dim = None;
        for (id, v) in &self.embeddings {
            if !self.graph.contains_node(id) {
                return Err(StoreError::Embedding(format!("embedding for unknown node `{id}`")));
            }
            if *dim.get_or_insert(v.dimension()) != v.dimension() {
                return Err(StoreError::Embedding(format!("embedding for `{id}` has inconsistent dimension")));
            }
            if v.values().iter().any(|x| !x.is_finite()) {
                return Err(StoreError::Embedding(format!("embedding for `{id}` has non-finite values")));
            }
            if !v.is_zero() && (v.norm() - 1.0).abs() > 1e-4 {
                return Err(StoreError::Embedding(format!("embedding for `{id}` is not unit length")));
            }
        }
        if let Some(profile) = &self.profile {
            if profile.user_id != self.user_id() {
                return Err(StoreError::Profile(format!("profile belongs to `{}`", profile.user_id)));
            }
            for cluster in &profile.clusters {
                if let Some(missing) = cluster.member_event_ids.iter().find(|id| self.graph.event(id).is_none()) {
                    return Err(StoreError::Profile(format!("cluster {} references unknown event `{missing}`", cluster.cluster_id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, StoreError> {
        let doc = StoreDocument {
            schema_version: u64::from(SCHEMA_VERSION),
            user_id: self.user_id().to_string(),
            events: self.graph.events().values().cloned().collect(),
            entities: self.graph.entities().values().cloned().collect(),
            event_edges: self.graph.event_edges().collect(),
            event_entity_edges: self.graph.event_entity_edges().iter().cloned().collect(),
            embeddings: self.embeddings.clone(),
            profile: self.profile.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| StoreError::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| StoreError::Malformed(e.to_string()))?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(StoreError::UnsupportedVersion(v)),
            None => return Err(StoreError::Malformed("missing integer schema_version".into())),
        }
        let doc: StoreDocument = serde_json::from_value(value).map_err(|e| StoreError::Malformed(e.to_string()))?;
        let graph = InteractionGraph::from_parts(doc.user_id, doc.events, doc.entities, doc.event_edges, doc.event_entity_edges)?;
        let store = Self { graph, profile: doc.profile, embeddings: doc.embeddings };
        store.validate()?;
        Ok(store)
    }

    /// Write the document via a temporary file and rename, so readers never
    /// observe a half-written store.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        self.validate()?;
        let json = self.to_json()?;
        let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
        let tmp = path.with_extension("json.tmp");
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(json.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityKind, EntityNode};
    use crate::providers::OfflineEmbedder;

    #[test]
    fn empty_store_round_trips() {
        let store = MemoryStore::new("u1");
        let back = MemoryStore::from_json(&store.to_json().unwrap()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let text = r#"{"schema_version": 99, "user_id": "u1"}"#;
        assert!(matches!(MemoryStore::from_json(text), Err(StoreError::UnsupportedVersion(99))));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(MemoryStore::from_json("not json"), Err(StoreError::Malformed(_))));
        assert!(matches!(MemoryStore::from_json(r#"{"user_id":"u"}"#), Err(StoreError::Malformed(_))));
        let missing_arrays = r#"{"schema_version": 1, "user_id": "u"}"#;
        assert!(matches!(MemoryStore::from_json(missing_arrays), Err(StoreError::Malformed(_))));
    }

    #[test]
    fn invariant_violation_on_load() {
        let text = r#"{"schema_version":1,"user_id":"u","events":[
            {"event_id":"e1","user_id":"u","caption":"x","object_refs":["n9"],"person_refs":[],"speech":[],"location":"","start_ts":1,"end_ts":2}
        ],"entities":[],"event_edges":[],"event_entity_edges":[],"embeddings":{}}"#;
        assert!(matches!(MemoryStore::from_json(text), Err(StoreError::Invariant(_))));
    }

    #[test]
    fn index_missing_embeds_all_nodes() {
        let mut store = MemoryStore::new("u");
        store.graph_mut().add_entity(EntityNode::new("n1", "u", EntityKind::Object, "mug", 0)).unwrap();
        assert!(!store.is_indexed());
        assert_eq!(store.index_missing(&OfflineEmbedder::new(32)).unwrap(), 1);
        assert!(store.is_indexed());
        assert_eq!(store.dimension(), Some(32));
        assert_eq!(store.index_missing(&OfflineEmbedder::new(32)).unwrap(), 0);
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.json");
        let mut store = MemoryStore::new("u");
        store.graph_mut().add_entity(EntityNode::new("n1", "u", EntityKind::Person, "alice", 5)).unwrap();
        store.index_missing(&OfflineEmbedder::default()).unwrap();
        store.save(&path).unwrap();
        assert_eq!(MemoryStore::load(&path).unwrap(), store);
        assert!(matches!(MemoryStore::load(dir.path().join("missing.json")), Err(StoreError::Io { .. })));
    }
}
