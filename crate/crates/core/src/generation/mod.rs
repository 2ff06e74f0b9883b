//! Match questions, prompts, chat clients and answer parsing.

mod client;
mod prompt;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::retrieval::{Hop, Path};
use crate::store::KgStore;

pub use client::{ChatClient, ChatConfig, HttpChatClient, LlmError, ReplayClient, ReplayMode, request_key};
pub use prompt::{build_prompt, PromptKind, PromptPayload, PromptTemplate, SamplingParams, TemplateError, TemplateSet};

/// Binary matching outcome, used both for ground-truth labels and for
/// model decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
}

impl Verdict {
    /// Maps a dataset label; only 0 and 1 are valid.
    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            1 => Some(Verdict::Positive),
            0 => Some(Verdict::Negative),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Verdict::Positive => 1,
            Verdict::Negative => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuestionError {
    #[error("missing attribute name: {0}")]
    MissingAttribute(&'static str),
}

/// One row of a matching benchmark before validation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetRow {
    pub question_id: String,
    pub source_attr: String,
    pub target_attr: String,
    pub desc_source: String,
    pub desc_target: String,
    pub label: Option<Verdict>,
}

/// A source/target attribute pair posed to the matcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchQuestion {
    pub question_id: String,
    /// `table-attribute` name in the source schema.
    pub source_attr: String,
    /// `table-attribute` name in the target schema.
    pub target_attr: String,
    pub desc_source: String,
    pub desc_target: String,
    /// Ground truth, absent for ad hoc questions.
    pub label: Option<Verdict>,
}

impl MatchQuestion {
    pub fn new(
        question_id: impl Into<String>,
        source_attr: impl Into<String>,
        target_attr: impl Into<String>,
        desc_source: impl Into<String>,
        desc_target: impl Into<String>,
    ) -> Self {
        MatchQuestion {
            question_id: question_id.into(),
            source_attr: source_attr.into(),
            target_attr: target_attr.into(),
            desc_source: desc_source.into(),
            desc_target: desc_target.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Verdict) -> Self {
        self.label = Some(label);
        self
    }

    /// The question posed to the model. Description lines are left out
    /// when the description is empty.
    pub fn text(&self) -> String {
        let mut out = format!("Attribute 1: {}\n", self.source_attr);
        if !self.desc_source.trim().is_empty() {
            out.push_str(&format!("Description of attribute 1: {}\n", self.desc_source.trim()));
        }
        out.push_str(&format!("Attribute 2: {}\n", self.target_attr));
        if !self.desc_target.trim().is_empty() {
            out.push_str(&format!("Description of attribute 2: {}\n", self.desc_target.trim()));
        }
        out.push_str("Do attribute 1 and attribute 2 describe the same concept?");
        out
    }
}

/// Validates a dataset row into a question.
pub fn build_question(row: &DatasetRow) -> Result<MatchQuestion, QuestionError> {
    let source = row.source_attr.trim();
    let target = row.target_attr.trim();
    if source.is_empty() {
        return Err(QuestionError::MissingAttribute("source attribute"));
    }
    if target.is_empty() {
        return Err(QuestionError::MissingAttribute("target attribute"));
    }
    Ok(MatchQuestion {
        question_id: row.question_id.clone(),
        source_attr: source.to_string(),
        target_attr: target.to_string(),
        desc_source: row.desc_source.trim().to_string(),
        desc_target: row.desc_target.trim().to_string(),
        label: row.label,
    })
}

fn entity_text(store: &KgStore, id: &str) -> String {
    let label = store.entity(id).map_or("", |e| e.label.as_str());
    format!("{} ({id})", if label.is_empty() { id } else { label })
}

fn relation_text(store: &KgStore, id: &str) -> String {
    let label = store.relation(id).map_or("", |r| r.label.as_str());
    format!("{} ({id})", if label.is_empty() { id } else { label })
}

/// `head (id), relation (id), tail (id)` in the stored orientation.
pub fn verbalize_hop(hop: &Hop, store: &KgStore) -> String {
    format!(
        "{}, {}, {}",
        entity_text(store, &hop.head),
        relation_text(store, &hop.relation),
        entity_text(store, &hop.tail)
    )
}

/// One line per path, hops joined by ` → `.
pub fn verbalize_paths<'a>(paths: impl IntoIterator<Item = &'a Path>, store: &KgStore) -> String {
    paths
        .into_iter()
        .map(|p| {
            p.hops
                .iter()
                .map(|h| verbalize_hop(h, store))
                .collect::<Vec<_>>()
                .join(" → ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    /// The first line opened with an answer token.
    Clean,
    /// An `answer: x` phrase was found elsewhere in the text.
    Fallback,
    /// Nothing recognisable; the verdict defaults to negative.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub verdict: Verdict,
    pub raw_text: String,
    pub parse_status: ParseStatus,
}

static ANSWER_PHRASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\banswer\s*(?:is)?\s*[:=]?\s*\**\s*(1|0|yes|no)\b").expect("valid regex")
});

fn answer_token(token: &str) -> Option<Verdict> {
    match token.to_ascii_lowercase().as_str() {
        "1" | "yes" => Some(Verdict::Positive),
        "0" | "no" => Some(Verdict::Negative),
        _ => None,
    }
}

/// Maps raw model output to a decision.
pub fn parse_answer(raw: &str) -> MatchDecision {
    let decision = |verdict, parse_status| MatchDecision {
        verdict,
        raw_text: raw.to_string(),
        parse_status,
    };
    let first = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let lead = first.trim_start_matches(|c: char| !c.is_alphanumeric());
    let word: String = lead.chars().take_while(|c| c.is_alphanumeric()).collect();
    if let Some(v) = answer_token(&word) {
        return decision(v, ParseStatus::Clean);
    }
    if let Some(v) = ANSWER_PHRASE.captures(raw).and_then(|c| answer_token(&c[1])) {
        return decision(v, ParseStatus::Fallback);
    }
    decision(Verdict::Negative, ParseStatus::Unparseable)
}
