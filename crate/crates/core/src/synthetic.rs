//! Seeded synthetic life-log generator and the Hit@k evaluation harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::InteractionGraph;
use crate::index::ScoredNode;
use crate::ingest::{first_verb, EventRecord};
use crate::providers::Embedder;
use crate::retrieval::{retrieve, window_mask, IndexedStore, Query, RetrievalError};
use crate::text::tokenize;

/// Monday 2024-03-04 00:00:00 UTC.
pub const STREAM_START_TS: i64 = 1_709_510_400;
pub const SYNTH_USER: &str = "synth";
pub const DEFAULT_WINDOW_S: i64 = 300;
pub const DEFAULT_HIT_K: usize = 7;
pub const EVENT_DURATION_S: i64 = 30;

/// Retriever settings used by the evaluation harness.
pub const EVAL_K_ENTITY: usize = 2;
pub const EVAL_K_EVENT: usize = 50;
pub const EVAL_HOPS: usize = 1;

const DAY_S: i64 = 86_400;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("at least one habit spec is required")]
    NoHabits,
    #[error("days must be at least 1")]
    NoDays,
    #[error("invalid habit spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// 0 = Monday .. 6 = Sunday.
    pub days_of_week: BTreeSet<u8>,
    pub hour: u32,
    pub minute: u32,
    pub jitter_minutes: u32,
}

impl Schedule {
    pub fn daily(hour: u32, minute: u32, jitter_minutes: u32) -> Self {
        Self { days_of_week: (0..7).collect(), hour, minute, jitter_minutes }
    }

    fn offset_s(&self) -> i64 {
        i64::from(self.hour) * 3600 + i64::from(self.minute) * 60
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HabitSpec {
    pub name: String,
    pub caption_template: String,
    pub location: String,
    /// Object entities; the first one is named in queries.
    pub entity_names: Vec<String>,
    #[serde(default)]
    pub persons: Vec<String>,
    pub schedule: Schedule,
    /// Alternative captions drawn alongside the template.
    #[serde(default)]
    pub paraphrases: Vec<String>,
}

impl HabitSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |reason: &str| SyntheticError::InvalidSpec { name: self.name.clone(), reason: reason.into() };
        if self.schedule.days_of_week.is_empty() {
            return Err(bad("no scheduled day"));
        }
        if self.schedule.days_of_week.iter().any(|d| *d > 6) {
            return Err(bad("day of week outside 0..=6"));
        }
        if self.schedule.hour > 23 || self.schedule.minute > 59 {
            return Err(bad("time of day out of range"));
        }
        if self.entity_names.is_empty() {
            return Err(bad("no entities"));
        }
        if self.caption_template.trim().is_empty() {
            return Err(bad("empty caption"));
        }
        Ok(())
    }

    pub fn verb(&self) -> String {
        first_verb(&self.caption_template)
            .or_else(|| tokenize(&self.caption_template).into_iter().next())
            .unwrap_or_default()
    }

    pub fn query_text(&self) -> String {
        format!("where did I last {} the {}?", self.verb(), self.entity_names[0])
    }

    fn captions(&self) -> Vec<&str> {
        std::iter::once(self.caption_template.as_str()).chain(self.paraphrases.iter().map(String::as_str)).collect()
    }
}

fn habit(name: &str, captions: &[&str], location: &str, entities: &[&str], persons: &[&str], hour: u32, minute: u32) -> HabitSpec {
    HabitSpec {
        name: name.into(),
        caption_template: captions[0].into(),
        location: location.into(),
        entity_names: entities.iter().map(|s| s.to_string()).collect(),
        persons: persons.iter().map(|s| s.to_string()).collect(),
        schedule: Schedule::daily(hour, minute, 20),
        paraphrases: captions[1..].iter().map(|s| s.to_string()).collect(),
    }
}

/// Six daily habits. Several share the phone as a secondary entity.
pub fn default_habits() -> Vec<HabitSpec> {
    vec![
        habit(
            "coffee",
            &["brew coffee with the coffee maker", "brew a cup of coffee in the coffee maker", "brew morning coffee"],
            "kitchen",
            &["coffee maker", "mug"],
            &[],
            7,
            30,
        ),
        habit(
            "plants",
            &["water the plants with the watering can", "water the balcony plants", "water the herbs with the watering can"],
            "balcony",
            &["watering can", "phone"],
            &[],
            8,
            30,
        ),
        habit(
            "pills",
            &["take vitamins from the pill box", "take the morning pills", "take a vitamin from the pill box"],
            "bathroom",
            &["pill box", "water glass"],
            &[],
            9,
            15,
        ),
        habit(
            "keys",
            &["put the keys in the key bowl", "put house keys into the key bowl", "put the keys down by the door"],
            "hallway",
            &["keys", "key bowl"],
            &[],
            18,
            10,
        ),
        habit(
            "call",
            &["call mom on the phone", "call mom for the evening chat", "call mom and talk about the day"],
            "living room",
            &["phone"],
            &["mom"],
            19,
            45,
        ),
        habit(
            "charge",
            &["charge the phone on the nightstand", "charge the phone with the charger", "plug in the phone to charge"],
            "bedroom",
            &["charger", "phone"],
            &[],
            22,
            30,
        ),
    ]
}

const DISTRACTOR_FRAMES: &[&str] =
    &["watch a video on how to {}", "read about how to {}", "see a neighbor {}", "talk about how to {}", "plan to {}", "help a friend {}"];

const DISTRACTOR_OBJECTS: &[&str] = &[
    "laptop", "tablet", "television", "magazine", "radio", "newspaper", "notebook", "headphones", "remote", "cookbook", "poster",
    "backpack",
];

const DISTRACTOR_LOCATIONS: &[&str] = &["office", "cafe", "bus", "library", "gym", "park"];

/// Captions that reuse habit wording in unrelated situations.
pub fn distractor_pool(specs: &[HabitSpec]) -> Vec<String> {
    specs
        .iter()
        .flat_map(|s| s.captions().into_iter().map(str::to_string).collect::<Vec<_>>())
        .flat_map(|c| DISTRACTOR_FRAMES.iter().map(move |f| f.replace("{}", &c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_text: String,
    pub at_ts: i64,
    pub target_event_id: String,
    #[serde(default = "default_window")]
    pub window_s: i64,
    /// 1-based stream day of the target event.
    pub day: u32,
}

fn default_window() -> i64 {
    DEFAULT_WINDOW_S
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub records: Vec<EventRecord>,
    pub queries: Vec<EvalQuery>,
}

impl SyntheticStream {
    pub fn records_jsonl(&self) -> String {
        crate::ingest::to_jsonl(&self.records)
    }

    pub fn queries_json(&self) -> String {
        serde_json::to_string_pretty(&self.queries).expect("queries serialize")
    }
}

struct Draft {
    ts: i64,
    caption: String,
    objects: Vec<String>,
    persons: Vec<String>,
    location: String,
    habit: Option<usize>,
}

/// Generate `days` days of habit and distractor events starting at
/// [`STREAM_START_TS`], plus one query per habit occurrence issued on the
/// following day before that habit's earliest possible time.
pub fn generate_stream(specs: &[HabitSpec], days: u32, distractors_per_day: usize, seed: u64) -> Result<SyntheticStream, SyntheticError> {
    if specs.is_empty() {
        return Err(SyntheticError::NoHabits);
    }
    if days == 0 {
        return Err(SyntheticError::NoDays);
    }
    for s in specs {
        s.validate()?;
    }
    let habit_locations: BTreeSet<&str> = specs.iter().map(|s| s.location.as_str()).collect();
    let habit_tokens: BTreeSet<String> =
        specs.iter().flat_map(|s| s.entity_names.iter().chain(&s.persons)).flat_map(|n| tokenize(n)).collect();
    let objects: Vec<&str> =
        DISTRACTOR_OBJECTS.iter().copied().filter(|o| tokenize(o).iter().all(|t| !habit_tokens.contains(t))).collect();
    let locations: Vec<&str> = DISTRACTOR_LOCATIONS.iter().copied().filter(|l| !habit_locations.contains(l)).collect();
    let pool = distractor_pool(specs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut queries = Vec::new();
    let mut last_of_habit: Vec<Option<(u32, String, i64)>> = vec![None; specs.len()];
    for day in 1..=days {
        let day_start = STREAM_START_TS + i64::from(day - 1) * DAY_S;
        let weekday = ((day - 1) % 7) as u8;
        let mut drafts = Vec::new();
        for (h, spec) in specs.iter().enumerate() {
            if !spec.schedule.days_of_week.contains(&weekday) {
                continue;
            }
            let j = i64::from(spec.schedule.jitter_minutes);
            let jitter = if j == 0 { 0 } else { rng.gen_range(-j..=j) * 60 };
            drafts.push(Draft {
                ts: day_start + spec.schedule.offset_s() + jitter,
                caption: spec.captions().choose(&mut rng).expect("template present").to_string(),
                objects: spec.entity_names.clone(),
                persons: spec.persons.clone(),
                location: spec.location.clone(),
                habit: Some(h),
            });
        }
        for _ in 0..distractors_per_day {
            let n_obj = rng.gen_range(1..=2usize).min(objects.len());
            drafts.push(Draft {
                ts: day_start + rng.gen_range(7 * 3600..23 * 3600),
                caption: pool.choose(&mut rng).expect("pool non-empty").clone(),
                objects: objects.choose_multiple(&mut rng, n_obj).map(|s| s.to_string()).collect(),
                persons: Vec::new(),
                location: locations.choose(&mut rng).map(|s| s.to_string()).unwrap_or_default(),
                habit: None,
            });
        }
        drafts.sort_by_key(|d| d.ts);
        for (seq, d) in drafts.into_iter().enumerate() {
            let event_id = format!("{SYNTH_USER}-{day:02}-{:03}", seq + 1);
            if let Some(h) = d.habit {
                last_of_habit[h] = Some((day, event_id.clone(), d.ts));
            }
            records.push(EventRecord {
                user_id: SYNTH_USER.into(),
                event_id,
                start_ts: d.ts,
                end_ts: d.ts + EVENT_DURATION_S,
                caption: d.caption,
                objects: d.objects,
                persons: d.persons,
                speech: Vec::new(),
                location: d.location,
            });
        }
        for (h, spec) in specs.iter().enumerate() {
            let Some((target_day, target, _)) = &last_of_habit[h] else { continue };
            if *target_day != day {
                continue;
            }
            let at_ts = day_start + DAY_S + spec.schedule.offset_s() - i64::from(spec.schedule.jitter_minutes) * 60 - 1800;
            queries.push(EvalQuery {
                query_text: spec.query_text(),
                at_ts,
                target_event_id: target.clone(),
                window_s: DEFAULT_WINDOW_S,
                day,
            });
        }
    }
    Ok(SyntheticStream { records, queries })
}

/// Similarity-only retrieval: top `k_event` events by caption cosine under
/// the temporal mask, with no entity filtering and no expansion.
pub fn flat_baseline_retrieve(indexed: &IndexedStore, query: &Query, embedder: &dyn Embedder) -> Result<Vec<ScoredNode>, RetrievalError> {
    let store = indexed.store();
    if query.user_id != store.user_id() {
        return Err(RetrievalError::UserMismatch { expected: store.user_id().to_string(), actual: query.user_id.clone() });
    }
    if query.text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if store.dimension().is_none() {
        return Ok(Vec::new());
    }
    let q = embedder.embed_one(&query.text)?;
    let mask = window_mask(store.graph(), query.at_ts, query.lookback_s);
    Ok(indexed.event_index().top_k(&q, query.k_event, Some(&mask))?)
}

pub trait EventRetriever {
    fn name(&self) -> &str;
    fn ranked_events(&self, query: &EvalQuery) -> Result<Vec<String>, SyntheticError>;
}

pub struct GraphRetriever<'a> {
    pub indexed: &'a IndexedStore,
    pub embedder: &'a dyn Embedder,
    pub k_entity: usize,
    pub k_event: usize,
    pub hops: usize,
}

impl<'a> GraphRetriever<'a> {
    pub fn new(indexed: &'a IndexedStore, embedder: &'a dyn Embedder) -> Self {
        Self { indexed, embedder, k_entity: EVAL_K_ENTITY, k_event: EVAL_K_EVENT, hops: EVAL_HOPS }
    }
}

impl EventRetriever for GraphRetriever<'_> {
    fn name(&self) -> &str {
        "graph"
    }

    fn ranked_events(&self, q: &EvalQuery) -> Result<Vec<String>, SyntheticError> {
        let mut query = Query::new(self.indexed.store().user_id(), &q.query_text, q.at_ts).with_hops(self.hops);
        query.k_entity = self.k_entity;
        query.k_event = self.k_event;
        query.include_profile = false;
        Ok(retrieve(self.indexed, &query, self.embedder)?.ranked_events())
    }
}

pub struct FlatRetriever<'a> {
    pub indexed: &'a IndexedStore,
    pub embedder: &'a dyn Embedder,
    pub k: usize,
}

impl<'a> FlatRetriever<'a> {
    pub fn new(indexed: &'a IndexedStore, embedder: &'a dyn Embedder) -> Self {
        Self { indexed, embedder, k: EVAL_K_EVENT }
    }
}

impl EventRetriever for FlatRetriever<'_> {
    fn name(&self) -> &str {
        "flat"
    }

    fn ranked_events(&self, q: &EvalQuery) -> Result<Vec<String>, SyntheticError> {
        let mut query = Query::new(self.indexed.store().user_id(), &q.query_text, q.at_ts);
        query.k_event = self.k;
        Ok(flat_baseline_retrieve(self.indexed, &query, self.embedder)?.into_iter().map(|n| n.node_id).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayHit {
    pub day: u32,
    pub queries: usize,
    pub hits: usize,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub k: usize,
    /// Shared window of the evaluated queries, when they agree on one.
    pub window_s: Option<i64>,
    pub per_day: Vec<DayHit>,
    pub overall: f64,
    pub num_queries: usize,
    pub seed: Option<u64>,
}

impl EvalReport {
    /// First-day rate minus last-day rate.
    pub fn degradation(&self) -> f64 {
        match (self.per_day.first(), self.per_day.last()) {
            (Some(a), Some(b)) => a.hit_rate - b.hit_rate,
            _ => 0.0,
        }
    }
}

/// A query hits when any of the first `k` returned events is the target or
/// starts within `window_s` of it.
pub fn is_hit(graph: &InteractionGraph, ranked: &[String], query: &EvalQuery, k: usize) -> bool {
    let Some(target) = graph.event(&query.target_event_id) else { return false };
    ranked.iter().take(k).any(|id| {
        id == &query.target_event_id
            || graph.event(id).is_some_and(|e| (e.start_ts - target.start_ts).abs() <= query.window_s)
    })
}

pub fn evaluate_hit_at_k(
    retriever: &dyn EventRetriever,
    graph: &InteractionGraph,
    queries: &[EvalQuery],
    k: usize,
    seed: Option<u64>,
) -> Result<EvalReport, SyntheticError> {
    let mut days: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut total_hits = 0;
    for q in queries {
        let ranked = retriever.ranked_events(q)?;
        let hit = is_hit(graph, &ranked, q, k);
        let slot = days.entry(q.day).or_default();
        slot.0 += 1;
        slot.1 += usize::from(hit);
        total_hits += usize::from(hit);
    }
    let windows: BTreeSet<i64> = queries.iter().map(|q| q.window_s).collect();
    let rate = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    Ok(EvalReport {
        method: retriever.name().to_string(),
        k,
        window_s: (windows.len() == 1).then(|| *windows.first().expect("one window")),
        per_day: days.into_iter().map(|(day, (n, h))| DayHit { day, queries: n, hits: h, hit_rate: rate(h, n) }).collect(),
        overall: rate(total_hits, queries.len()),
        num_queries: queries.len(),
        seed,
    })
}

/// Aligned text table: one row per day, one column per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut days: BTreeSet<u32> = BTreeSet::new();
    for r in reports {
        days.extend(r.per_day.iter().map(|d| d.day));
    }
    let mut out = format!("{:<8}", "day");
    for r in reports {
        let _ = write!(out, "{:>12}", format!("{}@{}", r.method, r.k));
    }
    out.push('\n');
    for day in days {
        let _ = write!(out, "{:<8}", day);
        for r in reports {
            match r.per_day.iter().find(|d| d.day == day) {
                Some(d) => {
                    let _ = write!(out, "{:>12.3}", d.hit_rate);
                }
                None => {
                    let _ = write!(out, "{:>12}", "-");
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "overall");
    for r in reports {
        let _ = write!(out, "{:>12.3}", r.overall);
    }
    out.push('\n');
    out
}

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,k,day,queries,hits,hit_rate\n");
    for r in reports {
        for d in &r.per_day {
            let _ = writeln!(out, "{},{},{},{},{},{:.6}", r.method, r.k, d.day, d.queries, d.hits, d.hit_rate);
        }
    }
    out
}
