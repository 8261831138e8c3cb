//! Feature-hashed text embeddings and exact top-k cosine search.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

pub const DEFAULT_DIMENSION: usize = 256;
pub const MIN_DIMENSION: usize = 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

/// A dense embedding with its Euclidean norm cached.
///
/// Serializes as a bare list of floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        Self { values, norm }
    }

    pub fn zeros(dimension: usize) -> Self {
        Self { values: vec![0.0; dimension], norm: 0.0 }
    }

    /// Scale to unit length. The zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        if self.norm == 0.0 {
            return self.clone();
        }
        let values = self.values.iter().map(|&v| (f64::from(v) / self.norm) as f32).collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic hashed bag of unigrams and adjacent bigrams.
///
/// Each feature hashes (64-bit FNV-1a over its UTF-8 bytes) to bucket
/// `h mod dimension` with sign `+1` when the top bit of `h` is clear and `-1`
/// otherwise. Bigrams are the two words joined by a single space. The result
/// is L2-normalized; text without any word yields the zero vector.
///
/// Panics if `dimension < MIN_DIMENSION`.
pub fn embed_offline(text: &str, dimension: usize) -> EmbeddingVector {
    assert!(dimension >= MIN_DIMENSION, "embedding dimension must be >= {MIN_DIMENSION}");
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return EmbeddingVector::zeros(dimension);
    }
    // Integer accumulation keeps the result independent of summation order.
    let mut counts = vec![0i64; dimension];
    let mut add = |feature: &str| {
        let h = fnv1a64(feature.as_bytes());
        let sign = if h >> 63 == 0 { 1 } else { -1 };
        counts[(h % dimension as u64) as usize] += sign;
    };
    for token in &tokens {
        add(token);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every feature cancelled out
        return EmbeddingVector::zeros(dimension);
    }
    EmbeddingVector::new(counts.iter().map(|&c| (c as f64 / norm) as f32).collect())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dimension() != b.dimension() {
        return Err(IndexError::DimensionMismatch { expected: a.dimension(), actual: b.dimension() });
    }
    if a.is_zero() || b.is_zero() {
        return Ok(0.0);
    }
    Ok((dot(&a.values, &b.values) / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub node_id: String,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &ScoredNode, b: &ScoredNode) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id))
}

/// Row-major embedding matrix over node ids in ascending lexicographic order.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    node_ids: Vec<String>,
    matrix: Vec<f32>,
    norms: Vec<f64>,
    dimension: usize,
}

impl SimilarityIndex {
    pub fn build<'a, I>(dimension: usize, entries: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a EmbeddingVector)>,
    {
        let mut rows: Vec<(&str, &EmbeddingVector)> = entries.into_iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows.dedup_by(|a, b| a.0 == b.0);
        let mut node_ids = Vec::with_capacity(rows.len());
        let mut matrix = Vec::with_capacity(rows.len() * dimension);
        let mut norms = Vec::with_capacity(rows.len());
        for (id, v) in rows {
            if v.dimension() != dimension {
                return Err(IndexError::DimensionMismatch { expected: dimension, actual: v.dimension() });
            }
            node_ids.push(id.to_string());
            matrix.extend_from_slice(v.values());
            norms.push(v.norm());
        }
        Ok(Self { node_ids, matrix, norms, dimension })
    }

    pub fn empty(dimension: usize) -> Self {
        Self { node_ids: Vec::new(), matrix: Vec::new(), norms: Vec::new(), dimension }
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Exact search: the `k` best nodes admitted by `mask`, by descending
    /// cosine with ties broken by ascending node id.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        mask: Option<&dyn Fn(&str) -> bool>,
    ) -> Result<Vec<ScoredNode>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch { expected: self.dimension, actual: query.dimension() });
        }
        let mut scored: Vec<ScoredNode> = self
            .node_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| mask.is_none_or(|m| m(id)))
            .map(|(i, id)| {
                let score = if query.is_zero() || self.norms[i] == 0.0 {
                    0.0
                } else {
                    (dot(query.values(), self.row(i)) / (query.norm() * self.norms[i])).clamp(-1.0, 1.0)
                };
                ScoredNode { node_id: id.clone(), score }
            })
            .collect();
        scored.sort_by(rank_order);
        scored.truncate(k);
        Ok(scored)
    }
}
