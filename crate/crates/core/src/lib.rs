//! Knowledge-graph retrieval for LLM schema matching.
//!
//! The crate loads a triple store, embeds and indexes its entities,
//! relations and triples, retrieves paths relevant to an attribute pair,
//! ranks them, and asks a chat model whether the attributes match.

pub mod embedding;
pub mod evaluation;
pub mod generation;
mod http;
pub mod index;
pub mod ranking;
pub mod retrieval;
pub mod store;

pub use embedding::{Embedding, EmbeddedItem, EmbeddingProvider, HashEmbedder, ItemKind};
pub use evaluation::{compute_metrics, Metrics, Pipeline, RunRecord};
pub use generation::{ChatClient, MatchDecision, MatchQuestion, PromptPayload, Verdict};
pub use index::{IndexMode, ScoredItem, VectorIndex};
pub use ranking::{RankedPath, RankingScheme, TopN};
pub use retrieval::{EntityPair, Hop, Path, RetrievalConfig, RetrievalOutcome, Strategy};
pub use store::{Direction, Entity, KgStore, Relation, StoreStats, Triple};
