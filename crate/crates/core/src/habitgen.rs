//! Self-supervised habit-learning pairs.
//!
//! Events are grouped into one chain per calendar day. Each chain is split
//! at a boundary into an observed history and a future; the pair carries
//! the history subgraph inline and a short summary of the future.

use std::collections::{BTreeMap, BTreeSet};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityNode, EventEdge, EventNode, InteractionGraph};
use crate::providers::{prompts, TextGenerator};
use crate::retrieval::iso8601;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HabitGenError {
    #[error("chain of {len} events is shorter than the required {required}")]
    ChainTooShort { len: usize, required: usize },
    #[error("invalid partition config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub w_loc: f64,
    pub w_gap: f64,
    pub w_ent: f64,
    pub gap_scale_s: i64,
    pub h_min: usize,
    pub f_min_events: usize,
    /// Offset added to timestamps before cutting days (0 = UTC).
    pub tz_offset_s: i64,
    /// Boundaries emitted per chain, best first.
    pub pairs_per_chain: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { w_loc: 1.0, w_gap: 1.0, w_ent: 1.0, gap_scale_s: 1800, h_min: 3, f_min_events: 1, tz_offset_s: 0, pairs_per_chain: 1 }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), HabitGenError> {
        let weights = [self.w_loc, self.w_gap, self.w_ent];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !weights.iter().any(|w| *w > 0.0) {
            return Err(HabitGenError::Config("weights must be non-negative with at least one positive".into()));
        }
        if self.gap_scale_s <= 0 {
            return Err(HabitGenError::Config("gap_scale_s must be positive".into()));
        }
        if self.h_min == 0 || self.f_min_events == 0 {
            return Err(HabitGenError::Config("h_min and f_min_events must be at least 1".into()));
        }
        if self.pairs_per_chain == 0 {
            return Err(HabitGenError::Config("pairs_per_chain must be at least 1".into()));
        }
        Ok(())
    }

    pub fn min_chain_len(&self) -> usize {
        self.h_min + self.f_min_events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    /// Number of events in the history side.
    pub boundary: usize,
    pub score: f64,
}

fn jaccard(a: &BTreeSet<&String>, b: &BTreeSet<&String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    inter as f64 / union as f64
}

/// Score every admissible boundary `i` (history = first `i` events) by how
/// strongly the step from event `i` to event `i+1` looks like a scene change:
/// location switch, normalized time gap and entity turnover.
pub fn score_partitions(chain: &[&EventNode], config: &PartitionConfig) -> Result<Vec<BoundaryScore>, HabitGenError> {
    config.validate()?;
    if chain.len() < config.min_chain_len() {
        return Err(HabitGenError::ChainTooShort { len: chain.len(), required: config.min_chain_len() });
    }
    let last = chain.len() - config.f_min_events;
    Ok((config.h_min..=last)
        .map(|i| {
            let (before, after) = (chain[i - 1], chain[i]);
            let loc = if before.location != after.location { 1.0 } else { 0.0 };
            let gap = ((after.start_ts - before.start_ts).max(0) as f64 / config.gap_scale_s as f64).min(1.0);
            let ents_a: BTreeSet<&String> = before.entity_refs().collect();
            let ents_b: BTreeSet<&String> = after.entity_refs().collect();
            let ent = 1.0 - jaccard(&ents_a, &ents_b);
            BoundaryScore { boundary: i, score: config.w_loc * loc + config.w_gap * gap + config.w_ent * ent }
        })
        .collect())
}

/// Boundaries best-first; equal scores prefer the smaller index.
pub fn rank_boundaries(scores: &[BoundaryScore]) -> Vec<BoundaryScore> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.boundary.cmp(&b.boundary)));
    ranked
}

/// The history side of a pair: events, the entities they touch (with
/// statistics recomputed over the history only) and the edges among them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryContext {
    pub events: Vec<EventNode>,
    pub entities: Vec<EntityNode>,
    pub edges: Vec<EventEdge>,
}

impl HistoryContext {
    pub fn from_events(graph: &InteractionGraph, events: &[&EventNode]) -> Self {
        let ids: BTreeSet<&str> = events.iter().map(|e| e.event_id.as_str()).collect();
        let mut entities: BTreeMap<&str, EntityNode> = BTreeMap::new();
        for ev in events {
            for id in ev.entity_refs() {
                let Some(base) = graph.entity(id) else { continue };
                let slot = entities.entry(id.as_str()).or_insert_with(|| EntityNode {
                    first_seen_ts: ev.start_ts,
                    last_seen_ts: ev.start_ts,
                    mention_count: 0,
                    ..base.clone()
                });
                slot.first_seen_ts = slot.first_seen_ts.min(ev.start_ts);
                slot.last_seen_ts = slot.last_seen_ts.max(ev.start_ts);
                slot.mention_count += 1;
            }
        }
        Self {
            events: events.iter().map(|e| (*e).clone()).collect(),
            entities: entities.into_values().collect(),
            edges: graph
                .event_edges()
                .filter(|e| ids.contains(e.src.as_str()) && ids.contains(e.dst.as_str()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitPair {
    pub pair_id: String,
    pub user_id: String,
    pub history_event_ids: Vec<String>,
    pub partition_index: usize,
    pub future_event_ids: Vec<String>,
    pub history_context: HistoryContext,
    pub future_summary: String,
    pub verified: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutcome {
    pub pairs: Vec<HabitPair>,
    pub chains_total: usize,
    pub chains_skipped: usize,
    pub warnings: Vec<String>,
}

/// Structural invariants of a pair, checked against the graph it came from.
pub fn check_pair(pair: &HabitPair, graph: &InteractionGraph) -> Result<(), String> {
    if pair.history_event_ids.is_empty() || pair.future_event_ids.is_empty() {
        return Err("empty history or future".into());
    }
    if pair.partition_index != pair.history_event_ids.len() {
        return Err("partition_index differs from history length".into());
    }
    let history: BTreeSet<&String> = pair.history_event_ids.iter().collect();
    if pair.future_event_ids.iter().any(|id| history.contains(id)) {
        return Err("history and future overlap".into());
    }
    let ts = |id: &String| graph.event(id).map(|e| e.start_ts).ok_or_else(|| format!("unknown event `{id}`"));
    let mut hist_max = i64::MIN;
    for id in &pair.history_event_ids {
        hist_max = hist_max.max(ts(id)?);
    }
    let mut fut_min = i64::MAX;
    for id in &pair.future_event_ids {
        fut_min = fut_min.min(ts(id)?);
    }
    if hist_max >= fut_min {
        return Err("history does not strictly precede future".into());
    }
    if pair.history_context.events.iter().map(|e| &e.event_id).ne(pair.history_event_ids.iter()) {
        return Err("history context does not match history ids".into());
    }
    if pair.future_summary.trim().is_empty() {
        return Err("empty future summary".into());
    }
    Ok(())
}

/// Distinct captions in time order, joined by `"; "`.
pub fn offline_future_summary(future: &[&EventNode]) -> String {
    let mut seen = BTreeSet::new();
    future
        .iter()
        .filter(|e| seen.insert(e.caption.as_str()))
        .map(|e| e.caption.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

fn day_of(ts: i64, tz_offset_s: i64) -> i64 {
    (ts + tz_offset_s).div_euclid(86_400)
}

fn day_label(day: i64) -> String {
    DateTime::from_timestamp(day * 86_400, 0).map(|d| d.date_naive().to_string()).unwrap_or_else(|| day.to_string())
}

fn describe_events(graph: &InteractionGraph, events: &[&EventNode], numbered: bool) -> String {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let names: Vec<&str> = e.entity_refs().filter_map(|id| graph.entity(id)).map(|n| n.canonical_name.as_str()).collect();
            let prefix = if numbered { format!("{}. ", i + 1) } else { "- ".to_string() };
            format!("{prefix}{} | {} | {} | {}", iso8601(e.start_ts), e.location, e.caption, names.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn ask_partition(
    graph: &InteractionGraph,
    chain: &[&EventNode],
    scores: &[BoundaryScore],
    gen: &dyn TextGenerator,
) -> Result<usize, String> {
    let ids: BTreeSet<&str> = chain.iter().map(|e| e.event_id.as_str()).collect();
    let position: BTreeMap<&str, usize> = chain.iter().enumerate().map(|(i, e)| (e.event_id.as_str(), i + 1)).collect();
    let relations: Vec<String> = graph
        .event_edges()
        .filter(|e| ids.contains(e.src.as_str()) && ids.contains(e.dst.as_str()))
        .map(|e| format!("{} -{}-> {}", position[e.src.as_str()], e.relation, position[e.dst.as_str()]))
        .collect();
    let (lo, hi) = (scores[0].boundary, scores[scores.len() - 1].boundary);
    let prompt = prompts::render(
        prompts::PARTITION,
        &[
            ("events", &describe_events(graph, chain, true)),
            ("relations", &relations.join("\n")),
            ("min_index", &lo.to_string()),
            ("max_index", &hi.to_string()),
        ],
    );
    let answer = gen.generate_text(&prompt).map_err(|e| e.to_string())?;
    let digits: String = answer.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
    let t: usize = digits.parse().map_err(|_| format!("no integer in partitioner answer {answer:?}"))?;
    if !(lo..=hi).contains(&t) {
        return Err(format!("partitioner chose {t}, outside {lo}..={hi}"));
    }
    Ok(t)
}

fn ask_verdict(graph: &InteractionGraph, history: &[&EventNode], future: &[&EventNode], summary: &str, gen: &dyn TextGenerator) -> Result<bool, String> {
    let prompt = prompts::render(
        prompts::PAIR_VERIFY,
        &[
            ("history", &describe_events(graph, history, false)),
            ("future", &describe_events(graph, future, false)),
            ("summary", summary),
        ],
    );
    let answer = gen.generate_text(&prompt).map_err(|e| e.to_string())?.trim().to_ascii_lowercase();
    if answer.starts_with("yes") {
        Ok(true)
    } else if answer.starts_with("no") {
        Ok(false)
    } else {
        Err(format!("unrecognized verifier answer {answer:?}"))
    }
}

/// Build pairs from every daily chain long enough to split.
///
/// The boundary is the partitioner's choice when one is supplied and gives a
/// usable answer, else the best-scoring boundary. The partitioner also
/// writes the future summary when available. The verifier, when supplied,
/// must confirm coherence on top of the structural checks.
pub fn generate_pairs(
    graph: &InteractionGraph,
    config: &PartitionConfig,
    partitioner: Option<&dyn TextGenerator>,
    verifier: Option<&dyn TextGenerator>,
) -> Result<GenerationOutcome, HabitGenError> {
    config.validate()?;
    let mut chains: BTreeMap<i64, Vec<&EventNode>> = BTreeMap::new();
    for ev in graph.events_ordered() {
        chains.entry(day_of(ev.start_ts, config.tz_offset_s)).or_default().push(ev);
    }
    let mut out = GenerationOutcome { chains_total: chains.len(), ..Default::default() };
    for (day, chain) in chains {
        if chain.len() < config.min_chain_len() {
            out.chains_skipped += 1;
            continue;
        }
        let scores = score_partitions(&chain, config)?;
        let mut boundaries: Vec<usize> = Vec::new();
        if let Some(gen) = partitioner {
            match ask_partition(graph, &chain, &scores, gen) {
                Ok(t) => boundaries.push(t),
                Err(e) => out.warnings.push(format!("partitioner failed on {} ({e}); used scored boundary", day_label(day))),
            }
        }
        for b in rank_boundaries(&scores) {
            if boundaries.len() >= config.pairs_per_chain {
                break;
            }
            if !boundaries.contains(&b.boundary) {
                boundaries.push(b.boundary);
            }
        }
        for t in boundaries {
            let (history, future) = chain.split_at(t);
            let mut future_summary = offline_future_summary(future);
            if let Some(gen) = partitioner {
                let prompt = prompts::render(prompts::FUTURE_SUMMARY, &[("future", &describe_events(graph, future, false))]);
                match gen.generate_text(&prompt) {
                    Ok(s) if !s.trim().is_empty() => future_summary = s.trim().to_string(),
                    Ok(_) => out.warnings.push(format!("empty future summary for {}; used captions", day_label(day))),
                    Err(e) => out.warnings.push(format!("future summary failed for {} ({e}); used captions", day_label(day))),
                }
            }
            let mut pair = HabitPair {
                pair_id: format!("{}:{}:{}", graph.user_id(), day_label(day), t),
                user_id: graph.user_id().to_string(),
                history_event_ids: history.iter().map(|e| e.event_id.clone()).collect(),
                partition_index: t,
                future_event_ids: future.iter().map(|e| e.event_id.clone()).collect(),
                history_context: HistoryContext::from_events(graph, history),
                future_summary,
                verified: false,
            };
            let structural = check_pair(&pair, graph);
            if let Err(e) = &structural {
                out.warnings.push(format!("pair {} failed structural checks: {e}", pair.pair_id));
            }
            pair.verified = structural.is_ok();
            if pair.verified {
                if let Some(gen) = verifier {
                    match ask_verdict(graph, history, future, &pair.future_summary, gen) {
                        Ok(v) => pair.verified = v,
                        Err(e) => out.warnings.push(format!("verifier failed on {} ({e}); kept structural verdict", pair.pair_id)),
                    }
                }
            }
            out.pairs.push(pair);
        }
    }
    Ok(out)
}

pub fn pairs_to_jsonl(pairs: &[HabitPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    out
}

/// Frequency baseline: entities ranked by how many history events touch
/// them, then by most recent touch, then by id.
pub fn baseline_predict(history: &HistoryContext, m: usize) -> Vec<String> {
    let mut stats: BTreeMap<&str, (usize, (i64, &str))> = BTreeMap::new();
    for ev in &history.events {
        for id in ev.entity_refs() {
            let slot = stats.entry(id.as_str()).or_insert((0, (i64::MIN, "")));
            slot.0 += 1;
            slot.1 = slot.1.max((ev.start_ts, ev.event_id.as_str()));
        }
    }
    let mut ranked: Vec<(&str, usize, (i64, &str))> = stats.into_iter().map(|(id, (c, r))| (id, c, r)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(b.0)));
    ranked.into_iter().take(m).map(|(id, _, _)| id.to_string()).collect()
}

/// Fraction of `truth` found in `predicted`; 0 when `truth` is empty.
pub fn recall(predicted: &[String], truth: &BTreeSet<String>) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().filter(|p| truth.contains(*p)).count() as f64 / truth.len() as f64
}
