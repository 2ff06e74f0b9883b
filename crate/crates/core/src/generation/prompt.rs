//! Prompt templates and payloads.
//!
//! A template is a TOML document with `system` and `user` strings. The user
//! text must contain `{question}`; the RAG matcher must also contain
//! `{paths}`, which no other kind may use. Built-in templates are compiled
//! in and can be overridden per kind by files in a template directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MatchQuestion;

const QUESTION: &str = "{question}";
const PATHS: &str = "{paths}";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{name}` is not valid TOML: {message}")]
    Parse { name: String, message: String },
    #[error("template `{name}` is missing the {placeholder} placeholder")]
    MissingPlaceholder { name: String, placeholder: &'static str },
    #[error("template `{name}` must not use the {placeholder} placeholder")]
    UnexpectedPlaceholder { name: String, placeholder: &'static str },
    #[error("the rag_matcher prompt needs a knowledge graph context")]
    MissingContext,
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Matcher,
    RagMatcher,
    EntityRetriever,
    SubgraphRetriever,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Matcher,
        PromptKind::RagMatcher,
        PromptKind::EntityRetriever,
        PromptKind::SubgraphRetriever,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Matcher => "matcher",
            PromptKind::RagMatcher => "rag_matcher",
            PromptKind::EntityRetriever => "entity_retriever",
            PromptKind::SubgraphRetriever => "subgraph_retriever",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.toml", self.name())
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Matcher => include_str!("../../templates/matcher.toml"),
            PromptKind::RagMatcher => include_str!("../../templates/rag_matcher.toml"),
            PromptKind::EntityRetriever => include_str!("../../templates/entity_retriever.toml"),
            PromptKind::SubgraphRetriever => include_str!("../../templates/subgraph_retriever.toml"),
        }
    }
}

/// Chat sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.6,
            top_p: 0.9,
            top_k: 1,
            max_new_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub system_text: String,
    pub user_text: String,
    pub params: SamplingParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    system: String,
    user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: PromptKind,
    system: String,
    user: String,
}

impl PromptTemplate {
    pub fn parse(kind: PromptKind, source: &str) -> Result<Self, TemplateError> {
        let name = kind.name().to_string();
        let file: TemplateFile = toml::from_str(source).map_err(|e| TemplateError::Parse {
            name: name.clone(),
            message: e.to_string(),
        })?;
        let text = format!("{}{}", file.system, file.user);
        if !file.user.contains(QUESTION) {
            return Err(TemplateError::MissingPlaceholder {
                name,
                placeholder: QUESTION,
            });
        }
        match (kind == PromptKind::RagMatcher, text.contains(PATHS)) {
            (true, false) => Err(TemplateError::MissingPlaceholder {
                name,
                placeholder: PATHS,
            }),
            (false, true) => Err(TemplateError::UnexpectedPlaceholder {
                name,
                placeholder: PATHS,
            }),
            _ => Ok(PromptTemplate {
                kind,
                system: file.system.trim().to_string(),
                user: file.user.trim().to_string(),
            }),
        }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    /// Substitutes placeholders in a single pass, so placeholder-like text
    /// inside the question or context is left alone.
    fn fill(text: &str, question: &str, paths: Option<&str>) -> String {
        let mut out = String::with_capacity(text.len() + question.len());
        let mut rest = text;
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix(QUESTION) {
                out.push_str(question);
                rest = after;
            } else if let (Some(after), Some(paths)) = (tail.strip_prefix(PATHS), paths) {
                out.push_str(paths);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }
}

/// One template per prompt kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            templates: PromptKind::ALL
                .iter()
                .map(|&k| PromptTemplate::parse(k, k.builtin()).expect("built-in templates are valid"))
                .collect(),
        }
    }

    /// Built-in templates overridden by `<dir>/<kind>.toml` where present.
    pub fn load(dir: Option<&Path>) -> Result<Self, TemplateError> {
        let mut set = TemplateSet::builtin();
        let Some(dir) = dir else {
            return Ok(set);
        };
        for (slot, kind) in set.templates.iter_mut().zip(PromptKind::ALL) {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let source = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.clone(),
                source,
            })?;
            *slot = PromptTemplate::parse(kind, &source)?;
        }
        Ok(set)
    }

    pub fn get(&self, kind: PromptKind) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.kind == kind)
            .expect("every kind has a template")
    }
}

/// Renders the prompt of `kind` for `question`.
pub fn build_prompt(
    templates: &TemplateSet,
    kind: PromptKind,
    question: &MatchQuestion,
    context: Option<&str>,
    params: SamplingParams,
) -> Result<PromptPayload, TemplateError> {
    if kind == PromptKind::RagMatcher && context.is_none() {
        return Err(TemplateError::MissingContext);
    }
    let template = templates.get(kind);
    let question = question.text();
    Ok(PromptPayload {
        system_text: PromptTemplate::fill(&template.system, &question, context),
        user_text: PromptTemplate::fill(&template.user, &question, context),
        params,
    })
}
