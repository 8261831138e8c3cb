//! Operations shared by the command line and the HTTP service.

use std::path::Path;

use egomem_core::habitgen::{generate_pairs, GenerationOutcome, PartitionConfig};
use egomem_core::ingest::{ingest_records, IngestConfig, IngestReport};
use egomem_core::profile::{build_profile, ProfileBuild, ProfileParams};
use egomem_core::retrieval::{retrieve, IndexedStore, Query, RetrievalResult, DEFAULT_HOPS, DEFAULT_K};
use egomem_core::{EventRecord, MemoryStore, ProviderConfig, Providers};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// Wire form of a query, shared by `egomem query` and `POST /v1/query`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub user_id: String,
    pub text: String,
    pub at_ts: i64,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub hops: Option<usize>,
}

impl QueryRequest {
    pub fn to_query(&self) -> Result<Query, AppError> {
        let k = self.k.unwrap_or(DEFAULT_K);
        if k == 0 {
            return Err(AppError::BadInput("k must be at least 1".into()));
        }
        Ok(Query::new(&self.user_id, &self.text, self.at_ts).with_k(k).with_hops(self.hops.unwrap_or(DEFAULT_HOPS)))
    }
}

/// Providers from the environment; the embedder follows the store's
/// dimension when the store already holds embeddings.
pub fn providers_for(store: Option<&MemoryStore>) -> Result<Providers, AppError> {
    let mut config = ProviderConfig::from_env()?;
    if let Some(dim) = store.and_then(MemoryStore::dimension) {
        config = config.with_dimension(dim);
    }
    Ok(Providers::from_config(&config)?)
}

pub fn load_store(path: &Path) -> Result<MemoryStore, AppError> {
    Ok(MemoryStore::load(path)?)
}

/// The user every record belongs to; mixed batches are rejected.
pub fn batch_user(records: &[EventRecord]) -> Result<String, AppError> {
    let first = records.first().ok_or_else(|| AppError::BadInput("no records supplied".into()))?;
    if let Some(other) = records.iter().find(|r| r.user_id != first.user_id) {
        return Err(AppError::BadInput(format!(
            "records for more than one user (`{}` and `{}`); ingest one user at a time",
            first.user_id, other.user_id
        )));
    }
    Ok(first.user_id.clone())
}

pub fn ingest(store: &MemoryStore, records: Vec<EventRecord>, providers: &Providers) -> Result<(MemoryStore, IngestReport), AppError> {
    let annotator = providers.generator.as_deref();
    let (mut next, report) = ingest_records(store, records, providers.embedder.as_ref(), &IngestConfig::default(), annotator)?;
    next.index_missing(providers.embedder.as_ref())?;
    Ok((next, report))
}

pub fn query(indexed: &IndexedStore, request: &QueryRequest, providers: &Providers) -> Result<RetrievalResult, AppError> {
    if request.user_id != indexed.store().user_id() {
        return Err(AppError::NotFound(format!("unknown user `{}`", request.user_id)));
    }
    Ok(retrieve(indexed, &request.to_query()?, providers.embedder.as_ref())?)
}

pub fn rebuild_profile(store: &MemoryStore, params: ProfileParams, providers: &Providers) -> Result<(MemoryStore, ProfileBuild), AppError> {
    if !(0.0..=1.0).contains(&params.theta_cluster) {
        return Err(AppError::BadInput("theta must be within [0, 1]".into()));
    }
    let built = build_profile(store, params, providers.embedder.as_ref(), providers.generator.as_deref())?;
    let mut next = store.clone();
    next.set_profile(Some(built.profile.clone()));
    Ok((next, built))
}

pub fn habit_pairs(store: &MemoryStore, providers: &Providers) -> Result<GenerationOutcome, AppError> {
    let gen = providers.generator.as_deref();
    generate_pairs(store.graph(), &PartitionConfig::default(), gen, gen).map_err(|e| AppError::BadInput(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCounts {
    pub temporal: usize,
    pub causal: usize,
    pub coactivity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub user_id: String,
    pub events: usize,
    pub entities: usize,
    pub event_edges: usize,
    pub event_edges_by_relation: RelationCounts,
    pub event_entity_edges: usize,
    pub embeddings: usize,
    pub dimension: Option<usize>,
    pub profile_clusters: Option<usize>,
}

pub fn stats(store: &MemoryStore) -> StoreStats {
    use egomem_core::Relation;
    let g = store.graph();
    let count = |r: Relation| g.event_edges().filter(|e| e.relation == r).count();
    StoreStats {
        user_id: store.user_id().to_string(),
        events: g.events().len(),
        entities: g.entities().len(),
        event_edges: g.event_edge_count(),
        event_edges_by_relation: RelationCounts {
            temporal: count(Relation::Temporal),
            causal: count(Relation::Causal),
            coactivity: count(Relation::Coactivity),
        },
        event_entity_edges: g.event_entity_edges().len(),
        embeddings: store.embeddings().len(),
        dimension: store.dimension(),
        profile_clusters: store.profile().map(|p| p.clusters.len()),
    }
}

/// Records from a request or file body: a JSON array or JSON lines.
pub fn parse_records(body: &str) -> Result<Vec<EventRecord>, AppError> {
    if body.trim_start().starts_with('[') {
        return serde_json::from_str(body).map_err(|e| AppError::BadInput(format!("malformed record array: {e}")));
    }
    Ok(egomem_core::ingest::parse_jsonl(body)?)
}
