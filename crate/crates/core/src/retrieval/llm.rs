//! Parsing and verification of LLM-proposed entities and paths.
//!
//! Entities are written `label (ID)` or as a bare label, one per line.
//! Paths are one per line, hops joined by `→` or `->`, each hop being
//! `label (ID), label (ID), label (ID)`.

use std::sync::LazyLock;

use regex::Regex;

use super::{Hop, Path, RetrievalError, Strategy};
use crate::generation::{build_prompt, ChatClient, MatchQuestion, PromptKind, SamplingParams, TemplateSet};
use crate::store::{Direction, KgStore, RecordKind};

static LABELED_ID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([^(),→]*?)\s*\(\s*([A-Za-z][A-Za-z0-9_:.-]*)\s*\)").expect("valid regex"));

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]+|\d+[.)])\s*").expect("valid regex"));

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityCandidates {
    /// Verified entity ids, in first-mention order.
    pub entities: Vec<String>,
    /// Candidates that did not resolve to a stored entity.
    pub dropped: usize,
    /// Set when the output was non-empty yet nothing could be verified.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubgraphCandidates {
    pub paths: Vec<Path>,
    /// Hops that did not match a stored triple.
    pub dropped: usize,
    pub warning: Option<String>,
}

fn clean_line(line: &str) -> &str {
    let line = line.trim();
    let start = LIST_MARKER.find(line).map_or(0, |m| m.end());
    line[start..].trim().trim_end_matches(['.', ',', ';'])
}

/// Verifies entity candidates in `raw` against the store, keeping at most
/// `limit` distinct ids.
pub fn parse_entity_candidates(raw: &str, store: &KgStore, limit: usize) -> EntityCandidates {
    let mut out = EntityCandidates::default();
    let push = |out: &mut EntityCandidates, id: String| {
        if !out.entities.contains(&id) && out.entities.len() < limit {
            out.entities.push(id);
        }
    };
    for line in raw.lines() {
        let line = clean_line(line);
        if line.is_empty() || line.ends_with(':') {
            continue;
        }
        let mut matched = false;
        for cap in LABELED_ID.captures_iter(line) {
            matched = true;
            let (label, id) = (cap[1].trim(), &cap[2]);
            if store.lookup(id, RecordKind::Entity).is_some() {
                push(&mut out, id.to_string());
            } else if let Some(resolved) = store.resolve_label(label).into_iter().next() {
                push(&mut out, resolved);
            } else {
                out.dropped += 1;
            }
        }
        if !matched {
            let mut any = false;
            for name in line.split([',', ';']).map(str::trim).filter(|n| !n.is_empty()) {
                any = true;
                match store.resolve_label(name).into_iter().next() {
                    Some(id) => push(&mut out, id),
                    None => out.dropped += 1,
                }
            }
            if !any {
                out.dropped += 1;
            }
        }
    }
    if out.entities.is_empty() && !raw.trim().is_empty() {
        out.warning = Some(format!("no verifiable entity in LLM output ({} candidates dropped)", out.dropped));
    }
    out
}

/// Matches a proposed hop against the store in either orientation.
fn verify_hop(store: &KgStore, from: &str, relation: &str, to: &str) -> Option<Hop> {
    if store.contains_triple(from, relation, to) {
        Some(Hop::new(from, relation, to, Direction::Outgoing))
    } else if store.contains_triple(to, relation, from) {
        Some(Hop::new(to, relation, from, Direction::Incoming))
    } else {
        None
    }
}

/// Parses arrow-separated paths, drops hops that are not stored triples and
/// splits what remains into simple chains of at most `d_max` hops.
pub fn parse_subgraph_candidates(raw: &str, store: &KgStore, d_max: usize) -> SubgraphCandidates {
    let mut out = SubgraphCandidates::default();
    let mut seen_hop_text = false;
    for line in raw.lines() {
        let line = clean_line(line);
        let mut run: Vec<Hop> = Vec::new();
        for segment in line.split('→').flat_map(|s| s.split("->")) {
            let ids: Vec<&str> = LABELED_ID
                .captures_iter(segment)
                .map(|c| c.get(2).map_or("", |m| m.as_str()))
                .collect();
            if ids.len() != 3 {
                if !ids.is_empty() {
                    out.dropped += 1;
                    seen_hop_text = true;
                }
                flush(&mut out.paths, &mut run);
                continue;
            }
            seen_hop_text = true;
            let verified = verify_hop(store, ids[0], ids[1], ids[2]).filter(|h| h.head != h.tail);
            let Some(hop) = verified else {
                out.dropped += 1;
                flush(&mut out.paths, &mut run);
                continue;
            };
            let chains = run.last().is_none_or(|last| last.to_node() == hop.from_node());
            let revisits = run.iter().any(|h| h.from_node() == hop.to_node());
            if !chains || revisits || run.len() == d_max {
                flush(&mut out.paths, &mut run);
            }
            run.push(hop);
        }
        flush(&mut out.paths, &mut run);
    }
    if out.paths.is_empty() && seen_hop_text {
        out.warning = Some(format!("no verifiable path in LLM output ({} hops dropped)", out.dropped));
    }
    out
}

fn flush(paths: &mut Vec<Path>, run: &mut Vec<Hop>) {
    if !run.is_empty() {
        paths.push(Path {
            hops: std::mem::take(run),
            source: Strategy::SubgraphLlm,
        });
    }
}

/// Asks the LLM for relevant entities and keeps the verified ones.
pub fn retrieve_entities_llm(
    question: &MatchQuestion,
    client: &dyn ChatClient,
    templates: &TemplateSet,
    sampling: SamplingParams,
    store: &KgStore,
    limit: usize,
) -> Result<EntityCandidates, RetrievalError> {
    let payload = build_prompt(templates, PromptKind::EntityRetriever, question, None, sampling)?;
    let raw = client.complete(&payload)?;
    Ok(parse_entity_candidates(&raw, store, limit))
}

/// Asks the LLM for relevant paths and keeps the verified hops.
pub fn retrieve_subgraphs_llm(
    question: &MatchQuestion,
    client: &dyn ChatClient,
    templates: &TemplateSet,
    sampling: SamplingParams,
    store: &KgStore,
    d_max: usize,
) -> Result<SubgraphCandidates, RetrievalError> {
    let payload = build_prompt(templates, PromptKind::SubgraphRetriever, question, None, sampling)?;
    let raw = client.complete(&payload)?;
    Ok(parse_subgraph_candidates(&raw, store, d_max))
}
