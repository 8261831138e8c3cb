//! Event-record ingestion: validation, entity consolidation and event-event
//! edge inference.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKey, EntityKind, EntityNode, EventEdge, EventNode, GraphError, InteractionGraph, Relation};
use crate::index::{cosine, EmbeddingVector};
use crate::profile::{self, ProfileParams};
use crate::providers::{prompts, Embedder, ProviderError, TextGenerator};
use crate::store::{MemoryStore, StoreError};
use crate::text::{normalize_surface, tokenize};

pub const DEFAULT_THETA_ENTITY: f64 = 0.85;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record `{event_id}` is invalid: {reason}")]
    InvalidRecord { event_id: String, reason: String },
    #[error("record `{event_id}` belongs to user `{actual}`, store is for `{expected}`")]
    UserMismatch { event_id: String, expected: String, actual: String },
    #[error("duplicate event id `{0}`")]
    DuplicateEventId(String),
    #[error("embedder dimension {embedder} does not match store dimension {store}")]
    DimensionMismatch { embedder: usize, store: usize },
    #[error("invalid edge rule config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One structured interaction record, as read from JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    pub event_id: String,
    pub start_ts: i64,
    pub end_ts: i64,
    pub caption: String,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub persons: Vec<String>,
    #[serde(default)]
    pub speech: Vec<String>,
    #[serde(default)]
    pub location: String,
}

impl EventRecord {
    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |reason: &str| IngestError::InvalidRecord { event_id: self.event_id.clone(), reason: reason.into() };
        if self.event_id.trim().is_empty() {
            return Err(invalid("empty event_id"));
        }
        if self.user_id.trim().is_empty() {
            return Err(invalid("empty user_id"));
        }
        if self.caption.trim().is_empty() {
            return Err(invalid("empty caption"));
        }
        if self.start_ts > self.end_ts {
            return Err(invalid("start_ts after end_ts"));
        }
        if self.objects.iter().chain(&self.persons).any(|s| s.trim().is_empty()) {
            return Err(invalid("empty entity surface string"));
        }
        Ok(())
    }
}

/// Parse JSONL, one record per non-blank line. Records are validated.
pub fn parse_jsonl(text: &str) -> Result<Vec<EventRecord>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord =
            serde_json::from_str(line).map_err(|e| IngestError::Parse { line: i + 1, message: e.to_string() })?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[EventRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn default_causal_patterns() -> Vec<(String, String)> {
    [
        ("open", "take"),
        ("take", "put"),
        ("pick", "put"),
        ("open", "close"),
        ("unlock", "open"),
        ("wash", "dry"),
        ("chop", "cook"),
        ("cut", "cook"),
        ("cook", "eat"),
        ("prepare", "eat"),
        ("heat", "eat"),
        ("microwave", "eat"),
        ("boil", "pour"),
        ("brew", "drink"),
        ("pour", "drink"),
        ("fill", "drink"),
        ("fill", "water"),
        ("buy", "cook"),
        ("buy", "unpack"),
        ("pack", "unpack"),
        ("load", "unload"),
        ("plug", "charge"),
        ("charge", "use"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

/// Deterministic edge rules used when no annotator is configured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeRuleConfig {
    pub coactivity_max_gap_s: i64,
    pub require_shared_entity: bool,
    pub require_same_location: bool,
    pub causal_pattern_table: Vec<(String, String)>,
    pub temporal_link_max_gap_s: i64,
    /// Largest start-to-start gap for a causal pair.
    pub causal_max_gap_s: i64,
}

impl Default for EdgeRuleConfig {
    fn default() -> Self {
        Self {
            coactivity_max_gap_s: 600,
            require_shared_entity: true,
            require_same_location: true,
            causal_pattern_table: default_causal_patterns(),
            temporal_link_max_gap_s: 300,
            causal_max_gap_s: 3600,
        }
    }
}

impl EdgeRuleConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.coactivity_max_gap_s <= 0 || self.temporal_link_max_gap_s <= 0 || self.causal_max_gap_s <= 0 {
            return Err(IngestError::Config("gaps must be positive".into()));
        }
        for (a, b) in &self.causal_pattern_table {
            if a.to_lowercase() != *a || b.to_lowercase() != *b {
                return Err(IngestError::Config(format!("pattern ({a}, {b}) must be lowercase")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub theta_entity: f64,
    pub edge_rules: EdgeRuleConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { theta_entity: DEFAULT_THETA_ENTITY, edge_rules: EdgeRuleConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub events_added: usize,
    pub entities_created: usize,
    /// Surfaces that matched an existing alias exactly.
    pub alias_matches: usize,
    /// Surfaces merged into an existing entity by embedding similarity.
    pub similarity_merges: usize,
    pub event_entity_edges_added: usize,
    pub temporal_edges_added: usize,
    pub causal_edges_added: usize,
    pub coactivity_edges_added: usize,
    pub profile_rebuilt: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolutionKind {
    Created,
    AliasMatch,
    SimilarityMerge { score: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub entity_id: String,
    pub kind: ResolutionKind,
}

fn next_entity_id(graph: &InteractionGraph, kind: EntityKind) -> String {
    let prefix = match kind {
        EntityKind::Object => "obj",
        EntityKind::Person => "per",
    };
    let mut n = graph.entities().values().filter(|e| e.kind == kind).count() + 1;
    loop {
        let id = format!("{prefix}-{n:05}");
        if !graph.contains_node(&id) {
            return id;
        }
        n += 1;
    }
}

/// Map a surface string to an entity of `kind`, creating one if nothing
/// matches. Exact alias matches win; otherwise the most similar same-kind
/// entity (ties by ascending id) is reused when its cosine is at least
/// `theta`.
pub fn resolve_entity(
    store: &mut MemoryStore,
    surface: &str,
    kind: EntityKind,
    ts: i64,
    embedder: &dyn Embedder,
    theta: f64,
) -> Result<Resolution, IngestError> {
    let normalized = normalize_surface(surface);
    let embedding = embedder.embed_one(&normalized)?;
    resolve_with_embedding(store, &normalized, kind, ts, embedding, theta)
}

fn resolve_with_embedding(
    store: &mut MemoryStore,
    normalized: &str,
    kind: EntityKind,
    ts: i64,
    embedding: EmbeddingVector,
    theta: f64,
) -> Result<Resolution, IngestError> {
    if normalized.is_empty() {
        return Err(IngestError::InvalidRecord { event_id: String::new(), reason: "empty entity surface string".into() });
    }
    let graph = store.graph();
    let alias_hit = graph
        .entities()
        .values()
        .find(|e| e.kind == kind && e.aliases.contains(normalized))
        .map(|e| e.entity_id.clone());
    let (entity_id, resolution) = match alias_hit {
        Some(id) => (id, ResolutionKind::AliasMatch),
        None => {
            let mut best: Option<(&str, f64)> = None;
            for entity in graph.entities().values().filter(|e| e.kind == kind) {
                let Some(v) = store.embedding(&entity.entity_id) else { continue };
                let score = cosine(&embedding, v).map_err(|e| StoreError::Embedding(e.to_string()))?;
                // strict comparison keeps the lowest id on ties (ascending iteration)
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((&entity.entity_id, score));
                }
            }
            match best {
                Some((id, score)) if score >= theta => (id.to_string(), ResolutionKind::SimilarityMerge { score }),
                _ => {
                    let id = next_entity_id(graph, kind);
                    let entity = EntityNode::new(id.clone(), store.user_id(), kind, normalized, ts);
                    store.graph_mut().add_entity(entity)?;
                    store.set_embedding(id.clone(), embedding)?;
                    return Ok(Resolution { entity_id: id, kind: ResolutionKind::Created });
                }
            }
        }
    };
    let entity = store.graph_mut().entity_mut(&entity_id).expect("resolved entity exists");
    entity.aliases.insert(normalized.to_string());
    entity.last_seen_ts = entity.last_seen_ts.max(ts);
    entity.first_seen_ts = entity.first_seen_ts.min(ts);
    Ok(Resolution { entity_id, kind: resolution })
}

/// Ingest records into a copy of `store`. On error the input store is
/// untouched and nothing is returned.
pub fn ingest_records(
    store: &MemoryStore,
    mut records: Vec<EventRecord>,
    embedder: &dyn Embedder,
    config: &IngestConfig,
    annotator: Option<&dyn TextGenerator>,
) -> Result<(MemoryStore, IngestReport), IngestError> {
    let mut report = IngestReport::default();
    if records.is_empty() {
        return Ok((store.clone(), report));
    }
    config.edge_rules.validate()?;
    let mut seen = BTreeSet::new();
    for r in &records {
        r.validate()?;
        if r.user_id != store.user_id() {
            return Err(IngestError::UserMismatch {
                event_id: r.event_id.clone(),
                expected: store.user_id().to_string(),
                actual: r.user_id.clone(),
            });
        }
        if store.graph().contains_node(&r.event_id) || !seen.insert(r.event_id.clone()) {
            return Err(IngestError::DuplicateEventId(r.event_id.clone()));
        }
    }
    if let Some(dim) = store.dimension() {
        if dim != embedder.dimension() {
            return Err(IngestError::DimensionMismatch { embedder: embedder.dimension(), store: dim });
        }
    }
    records.sort_by(|a, b| (a.start_ts, &a.event_id).cmp(&(b.start_ts, &b.event_id)));

    // One embedding batch for every caption and distinct surface; results are
    // applied strictly in record order below.
    let mut texts: Vec<String> = records.iter().map(|r| r.caption.clone()).collect();
    let mut surface_slot: HashMap<String, usize> = HashMap::new();
    for r in &records {
        for s in r.objects.iter().chain(&r.persons) {
            let n = normalize_surface(s);
            if !surface_slot.contains_key(&n) {
                surface_slot.insert(n.clone(), texts.len());
                texts.push(n);
            }
        }
    }
    let vectors = embedder.embed_batch(&texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Protocol(format!("expected {} embeddings, got {}", texts.len(), vectors.len())).into());
    }

    let mut next = store.clone();
    let mut new_ids = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        let mut refs: [BTreeSet<String>; 2] = Default::default();
        for (slot, kind, surfaces) in [(0, EntityKind::Object, &r.objects), (1, EntityKind::Person, &r.persons)] {
            for s in surfaces {
                let n = normalize_surface(s);
                let emb = vectors[surface_slot[&n]].clone();
                let res = resolve_with_embedding(&mut next, &n, kind, r.start_ts, emb, config.theta_entity)?;
                match res.kind {
                    ResolutionKind::Created => report.entities_created += 1,
                    ResolutionKind::AliasMatch => report.alias_matches += 1,
                    ResolutionKind::SimilarityMerge { .. } => report.similarity_merges += 1,
                }
                refs[slot].insert(res.entity_id);
            }
        }
        let [object_refs, person_refs] = refs;
        report.event_entity_edges_added += object_refs.len() + person_refs.len();
        next.graph_mut().add_event(EventNode {
            event_id: r.event_id.clone(),
            user_id: r.user_id.clone(),
            caption: r.caption.clone(),
            object_refs,
            person_refs,
            speech: r.speech.clone(),
            location: r.location.clone(),
            start_ts: r.start_ts,
            end_ts: r.end_ts,
        })?;
        next.set_embedding(r.event_id.clone(), vectors[i].clone())?;
        new_ids.insert(r.event_id.clone());
        report.events_added += 1;
    }

    let inferred = infer_edges_for(next.graph(), &config.edge_rules, annotator, Some(&new_ids));
    report.warnings.extend(inferred.warnings);
    for edge in inferred.edges {
        let relation = edge.relation;
        if next.graph_mut().add_event_edge(edge)? {
            match relation {
                Relation::Temporal => report.temporal_edges_added += 1,
                Relation::Causal => report.causal_edges_added += 1,
                Relation::Coactivity => report.coactivity_edges_added += 1,
            }
        }
    }

    if let Some(old) = store.profile() {
        let params = ProfileParams { theta_cluster: old.params.theta_cluster, f_min: old.params.f_min };
        let built = profile::build_profile(&next, params, embedder, annotator)?;
        report.warnings.extend(built.warnings);
        next.set_profile(Some(built.profile));
        report.profile_rebuilt = true;
    }
    Ok((next, report))
}

fn verb_lexicon() -> &'static BTreeSet<&'static str> {
    static LEXICON: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        include_str!("../verbs.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// First caption token that appears in the shipped verb lexicon.
pub fn first_verb(caption: &str) -> Option<String> {
    let lexicon = verb_lexicon();
    tokenize(caption).into_iter().find(|t| lexicon.contains(t.as_str()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InferOutcome {
    /// Sorted by `(src, dst, relation)`, canonical, without duplicates.
    pub edges: Vec<EventEdge>,
    pub warnings: Vec<String>,
    pub provider_used: bool,
}

/// Infer event-event edges over the whole graph.
pub fn infer_edges(graph: &InteractionGraph, config: &EdgeRuleConfig, annotator: Option<&dyn TextGenerator>) -> InferOutcome {
    infer_edges_for(graph, config, annotator, None)
}

/// Infer edges, restricted to pairs touching `focus` when given.
///
/// Temporal edges always come from the rules. Causal and coactivity edges
/// come from `annotator` when one is supplied and answers with a usable
/// document; otherwise from the rules, with a warning recorded.
pub fn infer_edges_for(
    graph: &InteractionGraph,
    config: &EdgeRuleConfig,
    annotator: Option<&dyn TextGenerator>,
    focus: Option<&BTreeSet<String>>,
) -> InferOutcome {
    let ordered = graph.events_ordered();
    let touches = |a: &EventNode, b: &EventNode| focus.is_none_or(|f| f.contains(&a.event_id) || f.contains(&b.event_id));
    let mut edges: BTreeMap<EdgeKey, EventEdge> = BTreeMap::new();
    let mut push = |e: EventEdge| {
        let e = e.canonical();
        edges.entry(e.key()).or_insert(e);
    };

    for pair in ordered.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if touches(a, b) && b.start_ts - a.start_ts <= config.temporal_link_max_gap_s {
            push(EventEdge::new(&a.event_id, &b.event_id, Relation::Temporal));
        }
    }

    let mut outcome = InferOutcome::default();
    let mut judged = None;
    if let Some(annotator) = annotator {
        match annotate_with_provider(graph, &ordered, config, annotator, focus) {
            Ok(found) => judged = Some(found),
            Err(e) => outcome.warnings.push(format!("edge annotator failed ({e}); fell back to rule-based edges")),
        }
    }
    match judged {
        Some(found) => {
            outcome.provider_used = true;
            found.into_iter().for_each(&mut push);
        }
        None => rule_edges(&ordered, config, &touches).into_iter().for_each(&mut push),
    }
    outcome.edges = edges.into_values().collect();
    outcome
}

fn shares_entity(a: &EventNode, b: &EventNode) -> bool {
    a.entity_refs().any(|id| b.object_refs.contains(id) || b.person_refs.contains(id))
}

fn rule_edges(ordered: &[&EventNode], config: &EdgeRuleConfig, touches: &dyn Fn(&EventNode, &EventNode) -> bool) -> Vec<EventEdge> {
    let patterns: BTreeSet<(&str, &str)> =
        config.causal_pattern_table.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let verbs: Vec<Option<String>> = ordered.iter().map(|e| first_verb(&e.caption)).collect();
    let horizon = config.coactivity_max_gap_s.max(config.causal_max_gap_s);
    let mut out = Vec::new();
    for (i, a) in ordered.iter().enumerate() {
        for (j, b) in ordered.iter().enumerate().skip(i + 1) {
            let gap = b.start_ts - a.start_ts;
            if gap > horizon {
                break;
            }
            if !touches(a, b) {
                continue;
            }
            let shared = shares_entity(a, b);
            let same_location = !a.location.is_empty() && a.location == b.location;
            if gap <= config.coactivity_max_gap_s
                && (!config.require_same_location || same_location)
                && (!config.require_shared_entity || shared)
            {
                out.push(EventEdge::new(&a.event_id, &b.event_id, Relation::Coactivity));
            }
            if gap > 0 && gap <= config.causal_max_gap_s && shared {
                if let (Some(va), Some(vb)) = (&verbs[i], &verbs[j]) {
                    if patterns.contains(&(va.as_str(), vb.as_str())) {
                        out.push(EventEdge::new(&a.event_id, &b.event_id, Relation::Causal));
                    }
                }
            }
        }
    }
    out
}

#[derive(Deserialize)]
struct AnnotatedEdges {
    edges: Vec<AnnotatedEdge>,
}

#[derive(Deserialize)]
struct AnnotatedEdge {
    src: String,
    dst: String,
    relation: String,
    #[serde(default = "default_confidence")]
    confidence: f64,
}

fn default_confidence() -> f64 {
    1.0
}

/// Pull the outermost JSON object out of a model answer.
pub(crate) fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn annotate_with_provider(
    graph: &InteractionGraph,
    ordered: &[&EventNode],
    config: &EdgeRuleConfig,
    annotator: &dyn TextGenerator,
    focus: Option<&BTreeSet<String>>,
) -> Result<Vec<EventEdge>, String> {
    let window = config.coactivity_max_gap_s.max(config.causal_max_gap_s);
    let shown: Vec<&EventNode> = match focus {
        None => ordered.to_vec(),
        Some(f) => {
            let focus_ts: Vec<i64> = ordered.iter().filter(|e| f.contains(&e.event_id)).map(|e| e.start_ts).collect();
            ordered
                .iter()
                .copied()
                .filter(|e| focus_ts.iter().any(|&t| (e.start_ts - t).abs() <= window))
                .collect()
        }
    };
    if shown.len() < 2 {
        return Ok(Vec::new());
    }
    let lines: Vec<String> = shown
        .iter()
        .map(|e| {
            let names: Vec<&str> =
                e.entity_refs().filter_map(|id| graph.entity(id)).map(|n| n.canonical_name.as_str()).collect();
            format!("{} | {} | {} | {} | {}", e.event_id, e.start_ts, e.location, e.caption, names.join(", "))
        })
        .collect();
    let prompt = prompts::render(prompts::EDGE_ANNOTATION, &[("events", &lines.join("\n"))]);
    let answer = annotator.generate_text(&prompt).map_err(|e| e.to_string())?;
    let json = extract_json_object(&answer).ok_or("no JSON object in annotator answer")?;
    let parsed: AnnotatedEdges = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for edge in parsed.edges {
        let relation = match edge.relation.to_ascii_lowercase().as_str() {
            "causal" => Relation::Causal,
            "coactivity" | "co-activity" => Relation::Coactivity,
            _ => continue,
        };
        let (Some(a), Some(b)) = (graph.event(&edge.src), graph.event(&edge.dst)) else { continue };
        if a.event_id == b.event_id || focus.is_some_and(|f| !f.contains(&a.event_id) && !f.contains(&b.event_id)) {
            continue;
        }
        if relation == Relation::Causal && a.start_ts >= b.start_ts {
            continue;
        }
        let confidence = if edge.confidence.is_finite() { edge.confidence.clamp(0.0, 1.0) } else { 1.0 };
        out.push(EventEdge::new(&a.event_id, &b.event_id, relation).with_confidence(confidence));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::OfflineEmbedder;

    fn record(id: &str, ts: i64, caption: &str, objects: &[&str], location: &str) -> EventRecord {
        EventRecord {
            user_id: "u".into(),
            event_id: id.into(),
            start_ts: ts,
            end_ts: ts + 30,
            caption: caption.into(),
            objects: objects.iter().map(|s| s.to_string()).collect(),
            persons: vec![],
            speech: vec![],
            location: location.into(),
        }
    }

    #[test]
    fn parse_jsonl_reports_line_numbers() {
        let ok = r#"{"user_id":"u","event_id":"e1","start_ts":1,"end_ts":2,"caption":"x"}"#;
        assert_eq!(parse_jsonl(&format!("{ok}\n\n")).unwrap().len(), 1);
        let err = parse_jsonl(&format!("{ok}\n{{broken")).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }));
        let bad = r#"{"user_id":"u","event_id":"e1","start_ts":5,"end_ts":2,"caption":"x"}"#;
        assert!(matches!(parse_jsonl(bad), Err(IngestError::InvalidRecord { .. })));
        let blank_surface = r#"{"user_id":"u","event_id":"e1","start_ts":1,"end_ts":2,"caption":"x","objects":["  "]}"#;
        assert!(matches!(parse_jsonl(blank_surface), Err(IngestError::InvalidRecord { .. })));
    }

    #[test]
    fn exact_surface_merges_into_one_entity() {
        let store = MemoryStore::new("u");
        let recs = vec![
            record("e1", 100, "drink from the coffee mug", &["coffee mug"], "kitchen"),
            record("e2", 5000, "wash the coffee mug", &["Coffee  Mug"], "kitchen"),
        ];
        let (store, report) = ingest_records(&store, recs, &OfflineEmbedder::default(), &IngestConfig::default(), None).unwrap();
        assert_eq!(store.graph().entities().len(), 1);
        let mug = store.graph().entities().values().next().unwrap();
        assert_eq!(mug.mention_count, 2);
        assert_eq!(mug.canonical_name, "coffee mug");
        assert_eq!((report.entities_created, report.alias_matches), (1, 1));
    }

    #[test]
    fn empty_ingest_is_a_no_op() {
        let store = MemoryStore::new("u");
        let (next, report) = ingest_records(&store, vec![], &OfflineEmbedder::default(), &IngestConfig::default(), None).unwrap();
        assert_eq!(next, store);
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn user_mismatch_and_duplicates_are_rejected() {
        let store = MemoryStore::new("u");
        let mut other = record("e1", 1, "x", &[], "");
        other.user_id = "v".into();
        let e = OfflineEmbedder::default();
        let cfg = IngestConfig::default();
        assert!(matches!(ingest_records(&store, vec![other], &e, &cfg, None), Err(IngestError::UserMismatch { .. })));
        let dup = vec![record("e1", 1, "x", &[], ""), record("e1", 2, "y", &[], "")];
        assert!(matches!(ingest_records(&store, dup, &e, &cfg, None), Err(IngestError::DuplicateEventId(_))));
        let (store, _) = ingest_records(&store, vec![record("e1", 1, "x", &[], "")], &e, &cfg, None).unwrap();
        let again = ingest_records(&store, vec![record("e1", 9, "z", &[], "")], &e, &cfg, None);
        assert!(matches!(again, Err(IngestError::DuplicateEventId(_))));
    }

    #[test]
    fn resolve_is_case_insensitive_and_creates_on_empty() {
        let e = OfflineEmbedder::default();
        let mut store = MemoryStore::new("u");
        let r = resolve_entity(&mut store, "keys", EntityKind::Object, 10, &e, 0.85).unwrap();
        assert_eq!(r.kind, ResolutionKind::Created);
        assert_eq!(store.graph().entity(&r.entity_id).unwrap().canonical_name, "keys");
        let again = resolve_entity(&mut store, "Keys", EntityKind::Object, 20, &e, 0.85).unwrap();
        assert_eq!(again, Resolution { entity_id: r.entity_id.clone(), kind: ResolutionKind::AliasMatch });
        assert_eq!(store.graph().entity(&r.entity_id).unwrap().last_seen_ts, 20);
        // never crosses kinds
        let person = resolve_entity(&mut store, "keys", EntityKind::Person, 30, &e, 0.0).unwrap();
        assert_ne!(person.entity_id, r.entity_id);
        assert_eq!(person.kind, ResolutionKind::Created);
    }

    #[test]
    fn first_verb_uses_lexicon() {
        assert_eq!(first_verb("I open the fridge").as_deref(), Some("open"));
        assert_eq!(first_verb("then take the milk").as_deref(), Some("take"));
        assert_eq!(first_verb("the quick fox"), None);
    }

    #[test]
    fn rule_config_validation() {
        let mut cfg = EdgeRuleConfig::default();
        cfg.validate().unwrap();
        cfg.causal_pattern_table.push(("Open".into(), "take".into()));
        assert!(cfg.validate().is_err());
        let cfg = EdgeRuleConfig { temporal_link_max_gap_s: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn extract_json_object_finds_braces() {
        assert_eq!(extract_json_object("sure: {\"a\": {\"b\": 1}} done"), Some("{\"a\": {\"b\": 1}}"));
        assert_eq!(extract_json_object("nothing"), None);
    }
}
