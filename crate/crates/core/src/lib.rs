//! Long-term interaction memory: an event/entity graph built from
//! structured life-log records, time-valid graph-constrained retrieval,
//! habit profiles, habit-learning pair generation and a synthetic
//! evaluation harness.

pub mod graph;
pub mod habitgen;
pub mod index;
pub mod ingest;
pub mod profile;
pub mod providers;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod text;

pub use graph::{EntityKind, EntityNode, EventEdge, EventEntityEdge, EventNode, GraphError, InteractionGraph, Relation};
pub use index::{cosine, embed_offline, EmbeddingVector, IndexError, ScoredNode, SimilarityIndex};
pub use ingest::{ingest_records, EventRecord, IngestConfig, IngestError, IngestReport};
pub use profile::{build_profile, ProfileParams, UserProfile};
pub use providers::{Embedder, OfflineEmbedder, ProviderConfig, ProviderError, ProviderMode, Providers, TextGenerator};
pub use retrieval::{retrieve, IndexedStore, Query, RetrievalError, RetrievalResult};
pub use store::{MemoryStore, StoreError};
