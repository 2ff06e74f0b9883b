//! Top-K cosine similarity search over embedding collections.
//!
//! Vectors are stored unit-normalized, so cosine is a dot product. An index
//! is either exact (flat scan) or carries an HNSW graph for approximate
//! search. Results are ordered by score descending, ties by item id.

mod hnsw;
mod persist;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddedItem, Embedding, ItemKind};

pub use hnsw::HnswParams;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid HNSW parameters: {0}")]
    Params(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format {
        path: std::path::PathBuf,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: String,
    pub kind: ItemKind,
    pub score: f32,
}

/// Total order used for every ranked list of scored items.
pub fn score_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    #[default]
    Hnsw,
}

impl std::str::FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "hnsw" => Ok(Self::Hnsw),
            other => Err(format!("unknown index mode `{other}` (expected exact|hnsw)")),
        }
    }
}

/// Cosine similarity `a·b / (|a||b|)`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f32, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    Ok((dot / (na * nb)) as f32)
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // eight independent accumulators let the compiler vectorize the loop
    let mut acc = [0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: f32 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// An immutable, queryable index. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    kinds: Vec<ItemKind>,
    vectors: Vec<f32>,
    graph: Option<hnsw::Graph>,
}

impl VectorIndex {
    /// Builds an index over `items`. Vectors must already be unit length.
    pub fn build(
        items: Vec<EmbeddedItem>,
        mode: IndexMode,
        params: HnswParams,
    ) -> Result<Self, IndexError> {
        params.validate()?;
        let dim = items.first().map_or(0, |i| i.vector.dim());
        let mut ids = Vec::with_capacity(items.len());
        let mut kinds = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len() * dim);
        for item in items {
            if item.vector.dim() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    actual: item.vector.dim(),
                });
            }
            ids.push(item.item_id);
            kinds.push(item.kind);
            vectors.extend_from_slice(item.vector.as_slice());
        }
        let mut index = VectorIndex {
            dim,
            ids,
            kinds,
            vectors,
            graph: None,
        };
        if mode == IndexMode::Hnsw {
            index.graph = Some(hnsw::Graph::build(&index, params));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        if self.graph.is_some() {
            IndexMode::Hnsw
        } else {
            IndexMode::Exact
        }
    }

    pub fn item_id(&self, ix: usize) -> &str {
        &self.ids[ix]
    }

    pub(crate) fn vector(&self, ix: usize) -> &[f32] {
        &self.vectors[ix * self.dim..(ix + 1) * self.dim]
    }

    /// Top-`k` items by cosine to `query`.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredItem>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let hits = match &self.graph {
            Some(graph) => graph.search(self, query.as_slice(), k),
            None => self.scan(query.as_slice(), k),
        };
        Ok(hits
            .into_iter()
            .map(|(ix, score)| ScoredItem {
                item_id: self.ids[ix as usize].clone(),
                kind: self.kinds[ix as usize],
                score,
            })
            .collect())
    }

    /// Exact search regardless of mode; the reference for HNSW recall.
    pub fn search_exact(&self, query: &Embedding, k: usize) -> Result<Vec<ScoredItem>, IndexError> {
        if self.graph.is_none() {
            return self.search(query, k);
        }
        let flat = VectorIndex {
            graph: None,
            ..self.clone()
        };
        flat.search(query, k)
    }

    fn scan(&self, query: &[f32], k: usize) -> Vec<(u32, f32)> {
        let scored: Vec<(u32, f32)> = (0..self.len())
            .map(|ix| (ix as u32, dot(query, self.vector(ix))))
            .collect();
        self.top_k(scored, k)
    }

    /// Orders candidate hits and keeps the best `k`.
    pub(crate) fn top_k(&self, mut hits: Vec<(u32, f32)>, k: usize) -> Vec<(u32, f32)> {
        let cmp = |a: &(u32, f32), b: &(u32, f32)| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0 as usize].cmp(&self.ids[b.0 as usize]))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_by(cmp);
        hits
    }
}
