//! Dense text embeddings: canonical text composition, providers, and
//! on-disk collections.

mod collection;
mod provider;

use serde::{Deserialize, Serialize};

use crate::generation::MatchQuestion;
use crate::store::{Entity, KgStore, Relation, Triple};

pub use collection::{embed_corpus, load_embeddings, CorpusItem, CorpusReport, CollectionWriter};
pub use provider::{EmbeddingProvider, HashEmbedder, HttpEmbedder, HttpEmbedderConfig};

/// Embedding dimension used when none is configured.
pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("provider returned {actual}-dimensional vectors, configured dim is {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("provider returned {actual} vectors for {expected} texts")]
    CountMismatch { expected: usize, actual: usize },
    #[error("embedding provider transport error (retryable): {0}")]
    Transport(String),
    #[error("embedding provider rejected the request: {0}")]
    Provider(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not an embedding collection: {message}")]
    BadHeader {
        path: std::path::PathBuf,
        message: String,
    },
    #[error("{path}: record {index} is corrupt ({reason}); last valid record: {}", last_valid.map_or("none".to_string(), |i| i.to_string()))]
    CorruptRecord {
        path: std::path::PathBuf,
        index: usize,
        last_valid: Option<usize>,
        reason: String,
    },
    #[error("embedding stopped after {completed} new records: {source}")]
    Partial {
        completed: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
}

/// What an embedded item stands for. The discriminant is the on-disk tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum ItemKind {
    Entity = 0,
    Relation = 1,
    Triple = 2,
    Question = 3,
}

impl ItemKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Entity),
            1 => Some(Self::Relation),
            2 => Some(Self::Triple),
            3 => Some(Self::Question),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Embedding(values))
    }

    /// Builds a unit-length vector from raw provider output.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        Embedding::new(values)?.normalize()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn normalize(&self) -> Result<Self, EmbeddingError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Embedding(
            self.0.iter().map(|&v| (f64::from(v) / norm) as f32).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub item_id: String,
    pub kind: ItemKind,
    pub vector: Embedding,
}

/// Anything that has a canonical embedding text.
#[derive(Debug, Clone, Copy)]
pub enum TextSource<'a> {
    Entity(&'a Entity),
    Relation(&'a Relation),
    Triple(&'a Triple),
    Question(&'a MatchQuestion),
}

fn label_or_id<'a>(label: &'a str, id: &'a str) -> &'a str {
    if label.is_empty() {
        id
    } else {
        label
    }
}

fn join_nonempty(parts: &[&str], sep: &str) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(sep)
}

/// Canonical text for an item.
///
/// * entity / relation: `label. description` (description omitted if empty)
/// * triple: `head_label head_desc. relation_label. tail_label tail_desc.`
/// * question: the matcher question text
pub fn compose_text(item: TextSource<'_>, store: &KgStore) -> String {
    match item {
        TextSource::Entity(e) => join_nonempty(&[label_or_id(&e.label, &e.id), &e.description], ". "),
        TextSource::Relation(r) => join_nonempty(&[label_or_id(&r.label, &r.id), &r.description], ". "),
        TextSource::Triple(t) => {
            let endpoint = |id: &str| match store.entity(id) {
                Some(e) => join_nonempty(&[label_or_id(&e.label, id), &e.description], " "),
                None => id.to_string(),
            };
            let relation = store
                .relation(&t.relation)
                .map_or(t.relation.as_str(), |r| label_or_id(&r.label, &t.relation));
            format!("{}. {}. {}.", endpoint(&t.head), relation, endpoint(&t.tail))
        }
        TextSource::Question(q) => q.text(),
    }
}

/// Embeds one text and checks the provider honoured the configured dim.
pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<Embedding, EmbeddingError> {
    let mut out = provider.embed_batch(&[text.to_string()])?;
    if out.len() != 1 {
        return Err(EmbeddingError::CountMismatch {
            expected: 1,
            actual: out.len(),
        });
    }
    let raw = out.pop().unwrap_or_default();
    check_dim(provider.dim(), raw.len())?;
    Embedding::normalized(raw)
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<(), EmbeddingError> {
    if expected == actual {
        Ok(())
    } else {
        Err(EmbeddingError::DimMismatch { expected, actual })
    }
}
