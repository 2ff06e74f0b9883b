//! Benchmark runs: datasets, per-question records, metrics and reports.

mod dataset;
mod pipeline;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generation::{MatchDecision, Verdict};
use crate::retrieval::Strategy;

pub use dataset::load_dataset;
pub use pipeline::{run_eval, Pipeline};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Dataset { path: PathBuf, line: u64, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Wall-clock seconds per phase of one question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub embed_s: f64,
    pub retrieval_s: f64,
    pub generation_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    /// Ground truth as 0/1; absent for ad hoc questions.
    pub label: Option<u8>,
    pub decision: MatchDecision,
    pub strategy: Strategy,
    /// Verbalized knowledge graph context given to the matcher.
    pub context: String,
    /// Paths (or triples) in the context.
    pub context_size: usize,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub truncated: bool,
    pub dropped: usize,
    pub warnings: Vec<String>,
    /// Set when the question failed; the decision is then a flagged negative.
    pub error: Option<String>,
    pub timings: Timings,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Confusion counts with precision, recall and F1 as percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Cuts a percentage to two decimals, the way published tables print them.
pub fn two_decimals(x: f64) -> f64 {
    ((x * 100.0) + 1e-9).floor() / 100.0
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let (t, f, n) = (tp as f64, fp as f64, fn_ as f64);
        let precision = 100.0 * ratio(t, t + f);
        let recall = 100.0 * ratio(t, t + n);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same metrics with percentages cut to two decimals.
    pub fn reported(&self) -> Self {
        Metrics {
            precision: two_decimals(self.precision),
            recall: two_decimals(self.recall),
            f1: two_decimals(self.f1),
            ..*self
        }
    }
}

/// Confusion counts over labelled records.
pub fn compute_metrics(records: &[RunRecord]) -> Metrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for r in records {
        let Some(label) = r.label.and_then(Verdict::from_label) else {
            continue;
        };
        match (r.decision.verdict, label) {
            (Verdict::Positive, Verdict::Positive) => tp += 1,
            (Verdict::Positive, Verdict::Negative) => fp += 1,
            (Verdict::Negative, Verdict::Positive) => fn_ += 1,
            (Verdict::Negative, Verdict::Negative) => tn += 1,
        }
    }
    Metrics::from_counts(tp, fp, fn_, tn)
}

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json values serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub records: usize,
    pub failed: usize,
    pub flagged_unparseable: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub records: usize,
    pub mean_embed_s: f64,
    pub mean_retrieval_s: f64,
    pub mean_generation_s: f64,
}

impl TimingSummary {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let n = records.len();
        let mean = |f: fn(&Timings) -> f64| ratio(records.iter().map(|r| f(&r.timings)).sum(), n as f64);
        TimingSummary {
            records: n,
            mean_embed_s: mean(|t| t.embed_s),
            mean_retrieval_s: mean(|t| t.retrieval_s),
            mean_generation_s: mean(|t| t.generation_s),
        }
    }
}

/// Files written by [`report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    /// One JSON line per question, timings left out.
    pub results: PathBuf,
    /// Metrics, counts and the effective configuration.
    pub summary: PathBuf,
    /// Mean seconds per phase.
    pub timings: PathBuf,
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Writes the report for a finished run. `results.jsonl` and
/// `summary.json` depend only on the inputs, so replayed runs reproduce
/// them byte for byte; wall-clock data goes to `timings.json`.
pub fn report(
    records: &[RunRecord],
    metrics: &Metrics,
    config: &serde_json::Value,
    out_dir: &Path,
) -> Result<ReportFiles, EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let files = ReportFiles {
        results: out_dir.join(RESULTS_FILE),
        summary: out_dir.join(SUMMARY_FILE),
        timings: out_dir.join(TIMINGS_FILE),
    };

    let mut w = BufWriter::new(File::create(&files.results).map_err(io(&files.results))?);
    for record in records {
        let mut value = serde_json::to_value(record).expect("records serialize");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timings");
        }
        serde_json::to_writer(&mut w, &value).map_err(|e| io(&files.results)(e.into()))?;
        w.write_all(b"\n").map_err(io(&files.results))?;
    }
    w.flush().map_err(io(&files.results))?;

    let summary = Summary {
        config_hash: config_hash(config),
        config: config.clone(),
        records: records.len(),
        failed: records.iter().filter(|r| r.failed()).count(),
        flagged_unparseable: records
            .iter()
            .filter(|r| r.decision.parse_status == crate::generation::ParseStatus::Unparseable)
            .count(),
        metrics: metrics.reported(),
    };
    write_json(&files.summary, &summary)?;
    write_json(&files.timings, &TimingSummary::from_records(records))?;
    Ok(files)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::ParseStatus;
    use crate::retrieval::Strategy;
    use proptest::prelude::*;

    fn record(id: &str, verdict: Verdict, label: u8, generation_s: f64) -> RunRecord {
        RunRecord {
            question_id: id.into(),
            label: Some(label),
            decision: MatchDecision {
                verdict,
                raw_text: verdict.label().to_string(),
                parse_status: ParseStatus::Clean,
            },
            strategy: Strategy::TripleVec,
            context: String::new(),
            context_size: 0,
            entities: vec![],
            relations: vec![],
            truncated: false,
            dropped: 0,
            warnings: vec![],
            error: None,
            timings: Timings {
                embed_s: 0.0,
                retrieval_s: 0.0,
                generation_s,
            },
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 0.01
    }

    #[test]
    fn published_rows() {
        let m = Metrics::from_counts(11, 10, 14, 0);
        assert!(close(m.precision, 52.38) && close(m.recall, 44.00) && close(m.f1, 47.82));
        let r = m.reported();
        assert_eq!((r.precision, r.recall, r.f1), (52.38, 44.0, 47.82));
        let m = Metrics::from_counts(1, 15, 2, 0);
        assert!(close(m.precision, 6.25) && close(m.recall, 33.33) && close(m.f1, 10.52));
        let r = m.reported();
        assert_eq!((r.precision, r.recall, r.f1), (6.25, 33.33, 10.52));
    }

    #[test]
    fn zero_denominators() {
        let m = Metrics::from_counts(0, 0, 0, 7);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = Metrics::from_counts(0, 3, 4, 0);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unlabeled_records_are_skipped() {
        let mut r = record("q", Verdict::Positive, 1, 0.0);
        r.label = None;
        assert_eq!(compute_metrics(&[r]).total(), 0);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = serde_json::json!({"strategy": "triple_vec", "top": "2"});
        let files = report(&[], &Metrics::default(), &config, &out).unwrap();
        assert_eq!(std::fs::read_to_string(&files.results).unwrap(), "");
        let summary: Summary = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
        assert_eq!(summary.records, 0);
        assert_eq!(summary.metrics, Metrics::default());
        assert_eq!(summary.config_hash, config_hash(&config));

        let records = vec![
            record("q1", Verdict::Positive, 1, 1.0),
            record("q2", Verdict::Negative, 1, 2.0),
            record("q3", Verdict::Positive, 0, 6.0),
        ];
        let files = report(&records, &compute_metrics(&records), &config, &out).unwrap();
        let lines = std::fs::read_to_string(&files.results).unwrap();
        assert_eq!(lines.lines().count(), 3);
        assert!(!lines.contains("timings"));
        let timings: TimingSummary = serde_json::from_str(&std::fs::read_to_string(&files.timings).unwrap()).unwrap();
        assert_eq!(timings.mean_generation_s, 3.0);
    }

    #[test]
    fn config_hash_is_key_order_independent() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":{"c":2,"d":3}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":{"d":3,"c":2},"a":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
    }

    fn arb_records() -> impl proptest::strategy::Strategy<Value = Vec<(bool, bool)>> {
        prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)
    }

    proptest! {
        #[test]
        fn metrics_match_naive_recount(pairs in arb_records()) {
            let records: Vec<RunRecord> = pairs
                .iter()
                .enumerate()
                .map(|(i, &(pred, truth))| {
                    let verdict = if pred { Verdict::Positive } else { Verdict::Negative };
                    record(&format!("q{i}"), verdict, u8::from(truth), 0.0)
                })
                .collect();
            let m = compute_metrics(&records);
            let tp = pairs.iter().filter(|&&(p, t)| p && t).count();
            let fp = pairs.iter().filter(|&&(p, t)| p && !t).count();
            let fn_ = pairs.iter().filter(|&&(p, t)| !p && t).count();
            prop_assert_eq!((m.tp, m.fp, m.fn_), (tp, fp, fn_));
            prop_assert_eq!(m.total(), records.len());
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((m.precision - 100.0 * p).abs() < 1e-9);
            prop_assert!((m.recall - 100.0 * r).abs() < 1e-9);
            prop_assert!((m.f1 - 100.0 * f).abs() < 1e-9);

            let mut shuffled = records.clone();
            shuffled.reverse();
            prop_assert_eq!(compute_metrics(&shuffled), m);
        }
    }
}
