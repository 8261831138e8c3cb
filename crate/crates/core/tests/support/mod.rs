//! Random fixtures and brute-force oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::hash::Hasher;

use egomem_core::graph::{EntityKind, EntityNode, EventEdge, EventNode, Relation};
use egomem_core::retrieval::Query;
use egomem_core::{EmbeddingVector, MemoryStore, OfflineEmbedder};
use rand::seq::SliceRandom;
use rand::Rng;

pub const USER: &str = "u";

const WORDS: &[&str] = &[
    "open", "take", "cup", "red", "blue", "fridge", "milk", "keys", "door", "phone", "walk", "kitchen", "read", "book", "water",
    "plants",
];
const NAMES: &[&str] = &["mug", "keys", "phone", "milk carton", "book", "alice", "bob", "wallet", "laptop", "plant"];
const LOCATIONS: &[&str] = &["kitchen", "garden", "office", ""];

pub fn phrase(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub struct Shape {
    pub max_events: usize,
    pub max_entities: usize,
    pub max_edges_per_event: usize,
    pub max_ts: i64,
    pub dimension: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Self { max_events: 50, max_entities: 15, max_edges_per_event: 4, max_ts: 10_000, dimension: 64 }
    }
}

/// A valid, fully indexed store built through the public graph API.
pub fn random_store(rng: &mut impl Rng, shape: &Shape) -> MemoryStore {
    let mut store = MemoryStore::new(USER);
    let n_ent = rng.gen_range(0..=shape.max_entities);
    let mut kinds = Vec::new();
    for i in 0..n_ent {
        let kind = if rng.gen_bool(0.7) { EntityKind::Object } else { EntityKind::Person };
        let name = format!("{} {}", NAMES.choose(rng).unwrap(), i);
        let ts = rng.gen_range(0..shape.max_ts);
        store.graph_mut().add_entity(EntityNode::new(format!("n{i:02}"), USER, kind, name, ts)).unwrap();
        kinds.push(kind);
    }
    let n_ev = rng.gen_range(1..=shape.max_events);
    for i in 0..n_ev {
        let start = rng.gen_range(0..shape.max_ts);
        let mut ev = EventNode {
            event_id: format!("e{i:03}"),
            user_id: USER.into(),
            caption: phrase(rng, 1, 5),
            object_refs: BTreeSet::new(),
            person_refs: BTreeSet::new(),
            speech: vec![],
            location: LOCATIONS.choose(rng).unwrap().to_string(),
            start_ts: start,
            end_ts: start + rng.gen_range(0..60),
        };
        if n_ent > 0 {
            for _ in 0..rng.gen_range(0..=3) {
                let j = rng.gen_range(0..n_ent);
                let id = format!("n{j:02}");
                match kinds[j] {
                    EntityKind::Object => ev.object_refs.insert(id),
                    EntityKind::Person => ev.person_refs.insert(id),
                };
            }
        }
        store.graph_mut().add_event(ev).unwrap();
    }
    let ids: Vec<(String, i64)> = store.graph().events().values().map(|e| (e.event_id.clone(), e.start_ts)).collect();
    for (a, ta) in &ids {
        for _ in 0..rng.gen_range(0..=shape.max_edges_per_event) {
            let (b, tb) = ids.choose(rng).unwrap();
            if a == b {
                continue;
            }
            let relation = *Relation::ALL.choose(rng).unwrap();
            let (src, dst) = if relation.is_directed() && ta > tb { (b, a) } else { (a, b) };
            let conf = f64::from(rng.gen_range(1..=10u8)) / 10.0;
            store.graph_mut().add_event_edge(EventEdge::new(src.clone(), dst.clone(), relation).with_confidence(conf)).unwrap();
        }
    }
    store.index_missing(&OfflineEmbedder::new(shape.dimension)).unwrap();
    store
}

pub fn random_query(rng: &mut impl Rng, max_ts: i64) -> Query {
    let mut q = Query::new(USER, phrase(rng, 1, 4), rng.gen_range(-10..max_ts + 100));
    q.k_entity = rng.gen_range(1..=8);
    q.k_event = rng.gen_range(1..=15);
    q.hops = rng.gen_range(0..=3);
    q.include_profile = false;
    q
}

fn oracle_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let na = a.values().iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    let nb = b.values().iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for i in 0..a.values().len() {
        dot += f64::from(a.values()[i]) * f64::from(b.values()[i]);
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn top(scored: &mut Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    // Selection sort: best score first, smaller id on ties.
    let mut out = Vec::new();
    while out.len() < k && !scored.is_empty() {
        let mut best = 0;
        for i in 1..scored.len() {
            let (id, s) = &scored[i];
            let (bid, bs) = &scored[best];
            if s > bs || (s == bs && id < bid) {
                best = i;
            }
        }
        out.push(scored.remove(best));
    }
    out
}

#[derive(Debug, Default, PartialEq)]
pub struct OracleResult {
    pub entities: Vec<String>,
    pub events: Vec<String>,
    pub filtered: BTreeSet<String>,
    pub expanded: BTreeSet<String>,
    pub expanded_scores: BTreeMap<String, f64>,
}

/// Enumerates every node and edge directly; shares no code with the
/// implementation beyond the stored embeddings and the query embedder.
pub fn oracle_retrieve(store: &MemoryStore, query: &Query, embedder: &OfflineEmbedder) -> OracleResult {
    use egomem_core::Embedder;
    let Some(dim) = store.dimension() else { return OracleResult::default() };
    assert_eq!(dim, embedder.dimension());
    let q = embedder.embed_one(&query.text).unwrap();
    if q.is_zero() {
        return OracleResult::default();
    }
    let valid_event = |id: &str| {
        let e = &store.graph().events()[id];
        e.start_ts < query.at_ts && query.lookback_s.is_none_or(|lb| e.start_ts >= query.at_ts - lb)
    };
    let mut ent: Vec<(String, f64)> = store
        .graph()
        .entities()
        .values()
        .filter(|n| n.first_seen_ts < query.at_ts)
        .map(|n| (n.entity_id.clone(), oracle_cosine(&q, store.embedding(&n.entity_id).unwrap())))
        .collect();
    let mut evs: Vec<(String, f64)> = store
        .graph()
        .events()
        .keys()
        .filter(|id| valid_event(id))
        .map(|id| (id.clone(), oracle_cosine(&q, store.embedding(id).unwrap())))
        .collect();
    let entities = top(&mut ent, query.k_entity);
    let events = top(&mut evs, query.k_event);
    let chosen: BTreeSet<&str> = entities.iter().map(|(id, _)| id.as_str()).collect();
    let mut filtered = BTreeSet::new();
    let mut base = BTreeMap::new();
    for (id, s) in &events {
        let linked = store.graph().event_entity_edges().iter().any(|ee| &ee.event == id && chosen.contains(ee.entity.as_str()));
        if linked {
            filtered.insert(id.clone());
            base.insert(id.clone(), *s);
        }
    }
    let edges: Vec<EventEdge> = store.graph().event_edges().collect();
    let mut expanded_scores: BTreeMap<String, f64> = BTreeMap::new();
    for (src, s) in &base {
        let mut dist: BTreeMap<String, usize> = BTreeMap::from([(src.clone(), 0)]);
        let mut queue = VecDeque::from([src.clone()]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == query.hops {
                continue;
            }
            for e in &edges {
                let other = if e.src == u {
                    &e.dst
                } else if e.dst == u {
                    &e.src
                } else {
                    continue;
                };
                if valid_event(other) && !dist.contains_key(other) {
                    dist.insert(other.clone(), d + 1);
                    queue.push_back(other.clone());
                }
            }
        }
        for (v, d) in dist {
            if filtered.contains(&v) {
                continue;
            }
            let score = s * 0.5f64.powi(d as i32);
            let slot = expanded_scores.entry(v).or_insert(score);
            *slot = slot.max(score);
        }
    }
    let mut expanded = filtered.clone();
    expanded.extend(expanded_scores.keys().cloned());
    OracleResult {
        entities: entities.into_iter().map(|(id, _)| id).collect(),
        events: events.into_iter().map(|(id, _)| id).collect(),
        filtered,
        expanded,
        expanded_scores,
    }
}

/// Greedy leader clustering replayed from scratch over stored embeddings.
pub fn oracle_leader_clusters(store: &MemoryStore, theta: f64) -> Vec<Vec<String>> {
    let mut events: Vec<&EventNode> = store.graph().events().values().collect();
    events.sort_by(|a, b| (a.start_ts, &a.event_id).cmp(&(b.start_ts, &b.event_id)));
    let dim = store.dimension().unwrap();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut members: Vec<Vec<String>> = Vec::new();
    for e in events {
        let v: Vec<f64> = store.embedding(&e.event_id).unwrap().values().iter().map(|x| f64::from(*x)).collect();
        let mut home = None;
        for (c, sum) in sums.iter().enumerate() {
            let n = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            let centroid: Vec<f32> = sum.iter().map(|x| (x / n) as f32).collect();
            let cos = oracle_cosine(&EmbeddingVector::new(v.iter().map(|x| *x as f32).collect()), &EmbeddingVector::new(centroid));
            if cos >= theta {
                home = Some(c);
                break;
            }
        }
        let c = home.unwrap_or_else(|| {
            sums.push(vec![0.0; dim]);
            members.push(Vec::new());
            sums.len() - 1
        });
        for (s, x) in sums[c].iter_mut().zip(&v) {
            *s += x;
        }
        members[c].push(e.event_id.clone());
    }
    members
}

/// Reference hashing embedder built on the `fnv` crate.
pub fn reference_embed(text: &str, dim: usize) -> Vec<f64> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    let mut features: Vec<String> = words.clone();
    for i in 1..words.len() {
        features.push(format!("{} {}", words[i - 1], words[i]));
    }
    let mut v = vec![0.0f64; dim];
    for f in features {
        let mut h = fnv::FnvHasher::default();
        h.write(f.as_bytes());
        let h = h.finish();
        v[(h % dim as u64) as usize] += if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}


pub fn reference_cosine(a: &str, b: &str, dim: usize) -> f64 {
    let (x, y) = (reference_embed(a, dim), reference_embed(b, dim));
    x.iter().zip(&y).map(|(p, q)| p * q).sum()
}
