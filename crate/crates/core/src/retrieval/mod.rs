//! Subgraph retrieval: vector search over entities, relations and triples,
//! LLM-proposed entities and paths, and bounded path enumeration.

mod bfs;
mod llm;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbeddingError, EmbeddingProvider, Embedding};
use crate::generation::{ChatClient, LlmError, MatchQuestion, SamplingParams, TemplateError, TemplateSet};
use crate::index::{IndexError, ScoredItem, VectorIndex};
use crate::store::{Direction, KgStore};

pub use bfs::{bfs_neighborhood, bfs_paths, PathSet};
pub use llm::{
    parse_entity_candidates, parse_subgraph_candidates, retrieve_entities_llm, retrieve_subgraphs_llm,
    EntityCandidates, SubgraphCandidates,
};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// The four retrieval pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Top-k triples by cosine to the question.
    TripleVec,
    /// Top-k entities by cosine, then path enumeration between them.
    EntityVecBfs,
    /// LLM-proposed entities, verified, then path enumeration.
    EntityLlmBfs,
    /// LLM-proposed paths, verified hop by hop.
    SubgraphLlm,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::TripleVec,
        Strategy::EntityVecBfs,
        Strategy::EntityLlmBfs,
        Strategy::SubgraphLlm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TripleVec => "triple_vec",
            Strategy::EntityVecBfs => "entity_vec_bfs",
            Strategy::EntityLlmBfs => "entity_llm_bfs",
            Strategy::SubgraphLlm => "subgraph_llm",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                format!("unknown strategy `{s}` (expected triple_vec|entity_vec_bfs|entity_llm_bfs|subgraph_llm)")
            })
    }
}

/// One traversed edge. `head`, `relation` and `tail` are the stored triple;
/// `direction` is `Outgoing` when the walk went head to tail.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hop {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub direction: Direction,
}

impl Hop {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
        direction: Direction,
    ) -> Self {
        Hop {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            direction,
        }
    }

    pub fn from_node(&self) -> &str {
        match self.direction {
            Direction::Outgoing => &self.head,
            Direction::Incoming => &self.tail,
        }
    }

    pub fn to_node(&self) -> &str {
        match self.direction {
            Direction::Outgoing => &self.tail,
            Direction::Incoming => &self.head,
        }
    }

    /// The same edge walked the other way.
    pub fn reversed(&self) -> Hop {
        Hop {
            direction: self.direction.reverse(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub hops: Vec<Hop>,
    pub source: Strategy,
}

impl Path {
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn start(&self) -> Option<&str> {
        self.hops.first().map(Hop::from_node)
    }

    pub fn end(&self) -> Option<&str> {
        self.hops.last().map(Hop::to_node)
    }

    /// Visited entities in walk order.
    pub fn nodes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.start().into_iter().collect();
        out.extend(self.hops.iter().map(Hop::to_node));
        out
    }

    /// Hops chain end to start and no entity is visited twice.
    pub fn is_simple_chain(&self) -> bool {
        let chained = self.hops.windows(2).all(|w| w[0].to_node() == w[1].from_node());
        let nodes = self.nodes();
        let mut seen = std::collections::HashSet::new();
        chained && nodes.iter().all(|n| seen.insert(*n))
    }

    pub fn reversed(&self) -> Path {
        Path {
            hops: self.hops.iter().rev().map(Hop::reversed).collect(),
            source: self.source,
        }
    }

    /// Relation ids in hop order.
    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.hops.iter().map(|h| h.relation.as_str())
    }
}

/// Item id of an embedded triple.
pub fn triple_item_id(head: &str, relation: &str, tail: &str) -> String {
    format!("{head}|{relation}|{tail}")
}

/// Splits a triple item id back into `(head, relation, tail)`.
pub fn split_triple_id(item_id: &str) -> Option<(&str, &str, &str)> {
    let mut parts = item_id.splitn(3, '|');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(r), Some(t)) if !h.is_empty() && !r.is_empty() && !t.is_empty() => Some((h, r, t)),
        _ => None,
    }
}

/// A one-hop path for a retrieved triple.
pub fn triple_path(item_id: &str) -> Option<Path> {
    let (h, r, t) = split_triple_id(item_id)?;
    Some(Path {
        hops: vec![Hop::new(h, r, t, Direction::Outgoing)],
        source: Strategy::TripleVec,
    })
}

/// Two distinct entities between which paths are enumerated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityPair {
    pub es: String,
    pub ed: String,
}

impl EntityPair {
    pub fn new(es: impl Into<String>, ed: impl Into<String>) -> Option<Self> {
        let (es, ed) = (es.into(), ed.into());
        (es != ed).then_some(EntityPair { es, ed })
    }
}

/// All unordered pairs of distinct entities, in input order. Repeated ids
/// are ignored.
pub fn entity_pairs(entities: &[String]) -> Vec<EntityPair> {
    let mut unique: Vec<&String> = Vec::with_capacity(entities.len());
    for e in entities {
        if !unique.contains(&e) {
            unique.push(e);
        }
    }
    let mut out = Vec::with_capacity(unique.len() * unique.len().saturating_sub(1) / 2);
    for (i, a) in unique.iter().enumerate() {
        for b in &unique[i + 1..] {
            out.extend(EntityPair::new(a.as_str(), b.as_str()));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// Maximum hops per path.
    pub d_max: usize,
    pub k_entities: usize,
    pub k_relations: usize,
    pub k_triples: usize,
    /// Maximum paths per entity pair (or per neighborhood root).
    pub path_cap: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            d_max: 3,
            k_entities: 5,
            k_relations: 5,
            k_triples: 10,
            path_cap: 100,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let fields = [
            ("d_max", self.d_max),
            ("k_entities", self.k_entities),
            ("k_relations", self.k_relations),
            ("k_triples", self.k_triples),
            ("path_cap", self.path_cap),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(RetrievalError::Config(format!("retrieval.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub question_id: String,
    pub strategy: Strategy,
    /// Retrieved entity ids (E).
    pub entities: Vec<String>,
    /// Retrieved relation ids (R).
    pub relations: Vec<String>,
    pub paths: Vec<Path>,
    pub triples: Vec<ScoredItem>,
    /// Some pair or root hit the path cap.
    pub truncated: bool,
    /// LLM candidates (entities or hops) that failed verification.
    pub dropped: usize,
    pub warnings: Vec<String>,
    /// Seconds spent embedding the question.
    pub embed_time: f64,
    /// Seconds spent on everything else.
    pub retrieval_time: f64,
}

/// Read-only dependencies of the strategies.
#[derive(Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub store: &'a KgStore,
    pub config: RetrievalConfig,
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    pub entity_index: Option<&'a VectorIndex>,
    pub relation_index: Option<&'a VectorIndex>,
    pub triple_index: Option<&'a VectorIndex>,
    pub llm: Option<&'a dyn ChatClient>,
    pub templates: Option<&'a TemplateSet>,
    pub sampling: SamplingParams,
}

impl<'a> RetrievalContext<'a> {
    pub fn new(store: &'a KgStore, config: RetrievalConfig) -> Self {
        RetrievalContext {
            store,
            config,
            embedder: None,
            entity_index: None,
            relation_index: None,
            triple_index: None,
            llm: None,
            templates: None,
            sampling: SamplingParams::default(),
        }
    }

    /// Checks that everything `strategy` needs is present.
    pub fn require(&self, strategy: Strategy) -> Result<(), RetrievalError> {
        self.config.validate()?;
        let missing = |what: &str| {
            Err(RetrievalError::Config(format!("strategy {strategy} needs {what}")))
        };
        let needs_embedder = matches!(strategy, Strategy::TripleVec | Strategy::EntityVecBfs);
        if needs_embedder && self.embedder.is_none() {
            return missing("an embedding provider");
        }
        match strategy {
            Strategy::TripleVec if self.triple_index.is_none() => missing("a triple index"),
            Strategy::EntityVecBfs if self.entity_index.is_none() => missing("an entity index"),
            Strategy::EntityVecBfs if self.relation_index.is_none() => missing("a relation index"),
            Strategy::EntityLlmBfs | Strategy::SubgraphLlm if self.llm.is_none() => missing("a chat client"),
            Strategy::EntityLlmBfs | Strategy::SubgraphLlm if self.templates.is_none() => missing("prompt templates"),
            _ => Ok(()),
        }
    }

    fn embedder(&self) -> Result<&'a dyn EmbeddingProvider, RetrievalError> {
        self.embedder
            .ok_or_else(|| RetrievalError::Config("no embedding provider configured".into()))
    }
}

fn ids(hits: Vec<ScoredItem>) -> Vec<String> {
    hits.into_iter().map(|h| h.item_id).collect()
}

/// Top-`k` entity ids by cosine to `query`.
pub fn retrieve_entities_vector(query: &Embedding, index: &VectorIndex, k: usize) -> Result<Vec<String>, IndexError> {
    Ok(ids(index.search(query, k)?))
}

/// Top-`k` relation ids by cosine to `query`.
pub fn retrieve_relations_vector(query: &Embedding, index: &VectorIndex, k: usize) -> Result<Vec<String>, IndexError> {
    Ok(ids(index.search(query, k)?))
}

/// Top-`k` triples by cosine to `query`, scores attached.
pub fn retrieve_triples_vector(query: &Embedding, index: &VectorIndex, k: usize) -> Result<Vec<ScoredItem>, IndexError> {
    index.search(query, k)
}

/// Paths for a retrieved entity list: the neighborhood of a single entity,
/// or the paths between every pair.
pub fn expand_entities(store: &KgStore, entities: &[String], config: &RetrievalConfig) -> PathSet {
    let cap = Some(config.path_cap);
    let pairs = entity_pairs(entities);
    if pairs.is_empty() {
        return match entities.first() {
            Some(e) => bfs_neighborhood(store, e, config.d_max, cap),
            None => PathSet::default(),
        };
    }
    let mut out = PathSet::default();
    for pair in &pairs {
        let found = bfs_paths(store, pair, config.d_max, cap);
        out.truncated |= found.truncated;
        out.paths.extend(found.paths);
    }
    out
}

/// Runs one retrieval pipeline for `question`.
pub fn run_strategy(
    question: &MatchQuestion,
    strategy: Strategy,
    ctx: &RetrievalContext<'_>,
) -> Result<RetrievalOutcome, RetrievalError> {
    ctx.require(strategy)?;
    let started = Instant::now();
    let config = ctx.config;
    let mut outcome = RetrievalOutcome {
        question_id: question.question_id.clone(),
        strategy,
        entities: Vec::new(),
        relations: Vec::new(),
        paths: Vec::new(),
        triples: Vec::new(),
        truncated: false,
        dropped: 0,
        warnings: Vec::new(),
        embed_time: 0.0,
        retrieval_time: 0.0,
    };
    let mut query: Option<Embedding> = None;
    let mut embed_question = |outcome: &mut RetrievalOutcome| -> Result<Embedding, RetrievalError> {
        if let Some(q) = &query {
            return Ok(q.clone());
        }
        let t = Instant::now();
        let q = embed(&question.text(), ctx.embedder()?)?;
        outcome.embed_time += t.elapsed().as_secs_f64();
        query = Some(q.clone());
        Ok(q)
    };

    match strategy {
        Strategy::TripleVec => {
            let q = embed_question(&mut outcome)?;
            let index = ctx.triple_index.expect("checked by require");
            outcome.triples = retrieve_triples_vector(&q, index, config.k_triples)?;
        }
        Strategy::EntityVecBfs | Strategy::EntityLlmBfs => {
            if strategy == Strategy::EntityVecBfs {
                let q = embed_question(&mut outcome)?;
                let index = ctx.entity_index.expect("checked by require");
                outcome.entities = retrieve_entities_vector(&q, index, config.k_entities)?;
            } else {
                let found = retrieve_entities_llm(
                    question,
                    ctx.llm.expect("checked by require"),
                    ctx.templates.expect("checked by require"),
                    ctx.sampling,
                    ctx.store,
                    config.k_entities,
                )?;
                outcome.entities = found.entities;
                outcome.dropped = found.dropped;
                outcome.warnings.extend(found.warning);
            }
            let found = expand_entities(ctx.store, &outcome.entities, &config);
            outcome.paths = found.paths;
            for p in &mut outcome.paths {
                p.source = strategy;
            }
            outcome.truncated = found.truncated;
        }
        Strategy::SubgraphLlm => {
            let found = retrieve_subgraphs_llm(
                question,
                ctx.llm.expect("checked by require"),
                ctx.templates.expect("checked by require"),
                ctx.sampling,
                ctx.store,
                config.d_max,
            )?;
            outcome.paths = found.paths;
            outcome.dropped = found.dropped;
            outcome.warnings.extend(found.warning);
        }
    }

    // relations only matter for ranking, which needs at least two paths
    if outcome.paths.len() > 1 {
        if let (Some(index), Some(_)) = (ctx.relation_index, ctx.embedder) {
            let q = embed_question(&mut outcome)?;
            outcome.relations = retrieve_relations_vector(&q, index, config.k_relations)?;
        }
    }
    outcome.retrieval_time = (started.elapsed().as_secs_f64() - outcome.embed_time).max(0.0);
    Ok(outcome)
}
