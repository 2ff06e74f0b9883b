//! Benchmark CSV loading.
//!
//! Columns: source attribute, target attribute, source description, target
//! description, label (0 or 1). Comma separated, quoting allowed, UTF-8. A
//! first row whose label column is not an integer is taken as a header.

use std::path::{Path, PathBuf};

use super::EvalError;
use crate::generation::{build_question, DatasetRow, MatchQuestion, Verdict};

fn row_error(path: &Path, line: u64, message: impl Into<String>) -> EvalError {
    EvalError::Dataset {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<MatchQuestion>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut questions = Vec::new();
    for (ix, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(ix as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() < 5 {
            return Err(row_error(path, line, format!("expected 5 columns, found {}", record.len())));
        }
        let label_text = record[4].trim();
        if ix == 0 && label_text.parse::<i64>().is_err() {
            continue;
        }
        let label = label_text
            .parse::<u8>()
            .ok()
            .and_then(Verdict::from_label)
            .ok_or_else(|| row_error(path, line, format!("label must be 0 or 1, found `{label_text}`")))?;
        let row = DatasetRow {
            question_id: format!("q{}", questions.len() + 1),
            source_attr: record[0].to_string(),
            target_attr: record[1].to_string(),
            desc_source: record[2].to_string(),
            desc_target: record[3].to_string(),
            label: Some(label),
        };
        let question = build_question(&row).map_err(|e| row_error(path, line, e.to_string()))?;
        questions.push(question);
    }
    Ok(questions)
}

fn csv_error(path: &Path, e: csv::Error) -> EvalError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => EvalError::Io {
            path: PathBuf::from(path),
            source,
        },
        other => row_error(path, line, format!("{other:?}")),
    }
}
