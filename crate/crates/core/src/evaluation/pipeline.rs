//! End-to-end question answering: retrieve, rank, prompt, parse.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::{EvalError, RunRecord, Timings};
use crate::generation::{
    build_prompt, parse_answer, verbalize_paths, ChatClient, MatchDecision, MatchQuestion, ParseStatus,
    PromptKind, SamplingParams, TemplateSet, Verdict,
};
use crate::ranking::{rank_paths, rank_triples, take_top, RankingScheme, TopN};
use crate::retrieval::{run_strategy, triple_path, RetrievalContext, Strategy};

/// Everything needed to answer a question. Shared read-only across worker
/// threads.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub strategy: Strategy,
    pub scheme: RankingScheme,
    pub top: TopN,
    pub retrieval: RetrievalContext<'a>,
    pub templates: &'a TemplateSet,
    pub llm: &'a dyn ChatClient,
    pub sampling: SamplingParams,
    /// Questions answered concurrently.
    pub parallelism: usize,
}

impl Pipeline<'_> {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.retrieval
            .require(self.strategy)
            .map_err(|e| EvalError::Config(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(EvalError::Config("parallelism must be at least 1".into()));
        }
        let triples = self.strategy == Strategy::TripleVec;
        let similarity = self.scheme == RankingScheme::Similarity;
        if triples != similarity {
            return Err(EvalError::Config(format!(
                "ranking scheme {} does not apply to strategy {}; triple_vec ranks by similarity, path strategies by frequency or normalized",
                self.scheme, self.strategy
            )));
        }
        Ok(())
    }

    /// Answers one question. Failures are recorded, never returned.
    pub fn answer(&self, question: &MatchQuestion) -> RunRecord {
        let mut record = self.blank_record(question);

        let outcome = match run_strategy(question, self.strategy, &self.retrieval) {
            Ok(o) => o,
            Err(e) => {
                record.error = Some(format!("retrieval failed: {e}"));
                return record;
            }
        };
        let ranking = Instant::now();
        let paths = if self.strategy == Strategy::TripleVec {
            take_top(rank_triples(outcome.triples), self.top)
                .iter()
                .filter_map(|t| triple_path(&t.item_id))
                .collect()
        } else if outcome.paths.len() > 1 {
            take_top(rank_paths(outcome.paths, &outcome.relations, self.scheme), self.top)
                .into_iter()
                .map(|r| r.path)
                .collect()
        } else {
            outcome.paths
        };
        record.context = verbalize_paths(&paths, self.retrieval.store);
        record.context_size = paths.len();
        record.entities = outcome.entities;
        record.relations = outcome.relations;
        record.truncated = outcome.truncated;
        record.dropped = outcome.dropped;
        record.warnings = outcome.warnings;
        record.timings.embed_s = outcome.embed_time;
        record.timings.retrieval_s = outcome.retrieval_time + ranking.elapsed().as_secs_f64();

        let generation = Instant::now();
        let (kind, context) = if record.context.is_empty() {
            (PromptKind::Matcher, None)
        } else {
            (PromptKind::RagMatcher, Some(record.context.as_str()))
        };
        let result = build_prompt(self.templates, kind, question, context, self.sampling)
            .map_err(|e| e.to_string())
            .and_then(|payload| self.llm.complete(&payload).map_err(|e| e.to_string()));
        record.timings.generation_s = generation.elapsed().as_secs_f64();
        match result {
            Ok(raw) => record.decision = parse_answer(&raw),
            Err(e) => record.error = Some(format!("generation failed: {e}")),
        }
        record
    }
}

/// Answers every question in order. Records are appended to `stream` as
/// they complete; configuration problems abort before the first question.
pub fn run_eval(
    questions: &[MatchQuestion],
    pipeline: &Pipeline<'_>,
    stream: Option<&Path>,
) -> Result<Vec<RunRecord>, EvalError> {
    pipeline.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    let mut sink = match stream {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io(parent))?;
            }
            Some((path, BufWriter::new(File::create(path).map_err(io(path))?)))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(questions.len());
    for chunk in questions.chunks(pipeline.parallelism) {
        let answered: Vec<RunRecord> = if chunk.len() == 1 {
            vec![pipeline.answer(&chunk[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|q| scope.spawn(move || pipeline.answer(q)))
                    .collect();
                handles
                    .into_iter()
                    .zip(chunk)
                    .map(|(h, q)| {
                        h.join().unwrap_or_else(|_| {
                            let mut r = pipeline.blank_record(q);
                            r.error = Some("worker panicked".into());
                            r
                        })
                    })
                    .collect()
            })
        };
        for record in answered {
            if let Some((path, w)) = sink.as_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(|e| io(path)(e.into()))?;
                w.write_all(b"\n").map_err(io(path))?;
                w.flush().map_err(io(path))?;
            }
            log::info!(
                "{}: {:?} ({} context paths{})",
                record.question_id,
                record.decision.verdict,
                record.context_size,
                record.error.as_deref().map_or(String::new(), |e| format!(", {e}"))
            );
            records.push(record);
        }
    }
    Ok(records)
}

impl Pipeline<'_> {
    /// A negative, unparsed record with nothing retrieved.
    fn blank_record(&self, question: &MatchQuestion) -> RunRecord {
        RunRecord {
            question_id: question.question_id.clone(),
            label: question.label.map(Verdict::label),
            decision: MatchDecision {
                verdict: Verdict::Negative,
                raw_text: String::new(),
                parse_status: ParseStatus::Unparseable,
            },
            strategy: self.strategy,
            context: String::new(),
            context_size: 0,
            entities: Vec::new(),
            relations: Vec::new(),
            truncated: false,
            dropped: 0,
            warnings: Vec::new(),
            error: None,
            timings: Timings::default(),
        }
    }
}
