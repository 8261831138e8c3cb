//! User habit profile: leader clustering of event captions, frequency
//! filtering and one-line summaries per surviving cluster.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::EventNode;
use crate::index::{cosine, EmbeddingVector};
use crate::providers::{prompts, Embedder, ProviderError, TextGenerator};
use crate::store::MemoryStore;

pub const DEFAULT_THETA_CLUSTER: f64 = 0.6;
pub const DEFAULT_MIN_FREQUENCY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub theta_cluster: f64,
    pub f_min: usize,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self { theta_cluster: DEFAULT_THETA_CLUSTER, f_min: DEFAULT_MIN_FREQUENCY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitCluster {
    pub cluster_id: String,
    pub centroid: EmbeddingVector,
    pub member_event_ids: Vec<String>,
    pub representative_caption: String,
    pub frequency: usize,
    pub modal_location: String,
    pub modal_hour: u32,
    pub entity_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Frequency-descending; equal frequencies keep creation order.
    pub clusters: Vec<HabitCluster>,
    pub summary_lines: Vec<String>,
    pub built_from_ts: Option<i64>,
    pub built_to_ts: Option<i64>,
    pub params: ProfileParams,
}

impl UserProfile {
    /// Text block handed to retrieval context; empty when nothing survived.
    pub fn render(&self) -> String {
        if self.summary_lines.is_empty() {
            return String::new();
        }
        let mut out = String::from("User habits:\n");
        for line in &self.summary_lines {
            out.push_str("- ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBuild {
    pub profile: UserProfile,
    pub warnings: Vec<String>,
}

/// Hour of day (UTC) of a unix timestamp.
pub fn hour_of_day(ts: i64) -> u32 {
    (ts.rem_euclid(86_400) / 3_600) as u32
}

/// Most frequent value; ties go to the value observed first.
fn mode<'a>(values: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, v) in values.enumerate() {
        counts.entry(v).or_insert((0, i)).0 += 1;
    }
    counts.into_iter().max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1))).map(|(v, _)| v)
}

fn event_embeddings(
    store: &MemoryStore,
    events: &[&EventNode],
    embedder: &dyn Embedder,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    let missing: Vec<String> =
        events.iter().filter(|e| store.embedding(&e.event_id).is_none()).map(|e| e.caption.clone()).collect();
    let mut fresh = if missing.is_empty() { Vec::new() } else { embedder.embed_batch(&missing)? }.into_iter();
    events
        .iter()
        .map(|e| match store.embedding(&e.event_id) {
            Some(v) => Ok(v.clone()),
            None => fresh.next().ok_or_else(|| ProviderError::Protocol("embedder returned too few vectors".into())),
        })
        .collect()
}

struct Leader {
    sum: Vec<f64>,
    centroid: EmbeddingVector,
    members: Vec<usize>,
}

impl Leader {
    fn absorb(&mut self, idx: usize, v: &EmbeddingVector) {
        for (s, &x) in self.sum.iter_mut().zip(v.values()) {
            *s += f64::from(x);
        }
        let norm = self.sum.iter().map(|s| s * s).sum::<f64>().sqrt();
        self.centroid = if norm == 0.0 {
            EmbeddingVector::zeros(self.sum.len())
        } else {
            EmbeddingVector::new(self.sum.iter().map(|s| (s / norm) as f32).collect())
        };
        self.members.push(idx);
    }
}

/// Greedy leader clustering over events in `(start_ts, event_id)` order.
///
/// Each event joins the earliest-created cluster whose centroid has cosine at
/// least `theta` with it, otherwise it opens a new cluster. Centroids are the
/// renormalized running sum of member embeddings.
pub fn cluster_events(store: &MemoryStore, theta: f64, embedder: &dyn Embedder) -> Result<Vec<HabitCluster>, ProviderError> {
    let events = store.graph().events_ordered();
    let vectors = event_embeddings(store, &events, embedder)?;
    let mut leaders: Vec<Leader> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let home = leaders.iter().position(|l| cosine(v, &l.centroid).is_ok_and(|c| c >= theta));
        match home {
            Some(c) => leaders[c].absorb(i, v),
            None => {
                let mut leader = Leader { sum: vec![0.0; v.dimension()], centroid: v.clone(), members: Vec::new() };
                leader.absorb(i, v);
                leaders.push(leader);
            }
        }
    }
    Ok(leaders
        .into_iter()
        .enumerate()
        .map(|(n, l)| {
            let members: Vec<&EventNode> = l.members.iter().map(|&i| events[i]).collect();
            HabitCluster {
                cluster_id: format!("habit-{:03}", n + 1),
                centroid: l.centroid,
                member_event_ids: members.iter().map(|e| e.event_id.clone()).collect(),
                representative_caption: mode(members.iter().map(|e| e.caption.as_str())).unwrap_or_default().to_string(),
                frequency: members.len(),
                modal_location: mode(members.iter().map(|e| e.location.as_str())).unwrap_or_default().to_string(),
                modal_hour: {
                    let hours: Vec<String> = members.iter().map(|e| hour_of_day(e.start_ts).to_string()).collect();
                    mode(hours.iter().map(String::as_str)).and_then(|h| h.parse().ok()).unwrap_or(0)
                },
                entity_ids: members.iter().flat_map(|e| e.entity_refs().cloned()).collect(),
            }
        })
        .collect())
}

pub fn template_line(cluster: &HabitCluster) -> String {
    format!(
        "Frequently: {} ({}×, usually at {}, around {}:00)",
        cluster.representative_caption, cluster.frequency, cluster.modal_location, cluster.modal_hour
    )
}

/// Cluster, drop clusters seen fewer than `f_min` times, and summarize the
/// rest. Without a summarizer (or when it fails) the fixed template is used.
pub fn build_profile(
    store: &MemoryStore,
    params: ProfileParams,
    embedder: &dyn Embedder,
    summarizer: Option<&dyn TextGenerator>,
) -> Result<ProfileBuild, ProviderError> {
    let mut clusters = cluster_events(store, params.theta_cluster, embedder)?;
    clusters.sort_by_key(|c| std::cmp::Reverse(c.frequency));
    clusters.retain(|c| c.frequency >= params.f_min.max(1));

    let mut warnings = Vec::new();
    let mut summary_lines = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let line = match summarizer {
            None => template_line(cluster),
            Some(gen) => match summarize_with_provider(store, cluster, gen) {
                Ok(text) => text,
                Err(e) => {
                    warnings.push(format!("profile summarizer failed for {} ({e}); used template", cluster.cluster_id));
                    template_line(cluster)
                }
            },
        };
        summary_lines.push(line);
    }

    let ts: Vec<i64> = store.graph().events().values().map(|e| e.start_ts).collect();
    Ok(ProfileBuild {
        profile: UserProfile {
            user_id: store.user_id().to_string(),
            clusters,
            summary_lines,
            built_from_ts: ts.iter().copied().min(),
            built_to_ts: ts.iter().copied().max(),
            params,
        },
        warnings,
    })
}

fn summarize_with_provider(store: &MemoryStore, cluster: &HabitCluster, gen: &dyn TextGenerator) -> Result<String, ProviderError> {
    let captions: Vec<String> = cluster
        .member_event_ids
        .iter()
        .filter_map(|id| store.graph().event(id))
        .map(|e| format!("- {}", e.caption))
        .collect();
    let prompt = prompts::render(
        prompts::PROFILE_SUMMARY,
        &[
            ("frequency", &cluster.frequency.to_string()),
            ("location", &cluster.modal_location),
            ("hour", &cluster.modal_hour.to_string()),
            ("captions", &captions.join("\n")),
        ],
    );
    let text = gen.generate_text(&prompt)?;
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    if line.is_empty() {
        return Err(ProviderError::Protocol("empty summary".into()));
    }
    Ok(line.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EventNode;
    use crate::providers::OfflineEmbedder;

    fn store_with(captions: &[(&str, i64, &str)]) -> MemoryStore {
        let mut store = MemoryStore::new("u");
        for (i, (caption, ts, loc)) in captions.iter().enumerate() {
            store
                .graph_mut()
                .add_event(EventNode {
                    event_id: format!("e{i:02}"),
                    user_id: "u".into(),
                    caption: caption.to_string(),
                    object_refs: Default::default(),
                    person_refs: Default::default(),
                    speech: vec![],
                    location: loc.to_string(),
                    start_ts: *ts,
                    end_ts: *ts + 30,
                })
                .unwrap();
        }
        store.index_missing(&OfflineEmbedder::default()).unwrap();
        store
    }

    #[test]
    fn identical_captions_form_one_cluster() {
        let store = store_with(&[("make coffee", 0, "kitchen"), ("make coffee", 100, "kitchen"), ("make coffee", 200, "kitchen")]);
        let clusters = cluster_events(&store, 0.6, &OfflineEmbedder::default()).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].frequency, 3);
        assert!((clusters[0].centroid.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unrelated_captions_stay_apart() {
        let store = store_with(&[("make coffee", 0, "kitchen"), ("water plants", 100, "garden")]);
        let clusters = cluster_events(&store, 0.6, &OfflineEmbedder::default()).unwrap();
        assert_eq!(clusters.iter().map(|c| c.frequency).collect::<Vec<_>>(), [1, 1]);
    }

    #[test]
    fn sparse_clusters_are_filtered() {
        let store = store_with(&[("make coffee", 0, "kitchen"), ("water plants", 100, "garden")]);
        let built = build_profile(&store, ProfileParams::default(), &OfflineEmbedder::default(), None).unwrap();
        assert!(built.profile.clusters.is_empty());
        assert!(built.profile.summary_lines.is_empty());
        assert_eq!(built.profile.render(), "");
    }

    #[test]
    fn mode_prefers_earliest_on_ties() {
        assert_eq!(mode(["b", "a", "a", "b"].into_iter()), Some("b"));
        assert_eq!(mode(["b", "a", "a"].into_iter()), Some("a"));
        assert_eq!(mode(std::iter::empty()), None);
    }

    #[test]
    fn hour_of_day_handles_negative_timestamps() {
        assert_eq!(hour_of_day(0), 0);
        assert_eq!(hour_of_day(8 * 3600 + 59), 8);
        assert_eq!(hour_of_day(-1), 23);
    }
}
