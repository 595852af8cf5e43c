//! Instruction/question/answer records and their train/val/test split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRAIN_SHARE: f64 = 0.70;
pub const VAL_SHARE: f64 = 0.15;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{0}: no records")]
    Empty(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub instruction: String,
    pub question: String,
    pub answer: String,
}

/// Parses one JSON record per non-blank line. `origin` names the source in
/// error messages.
pub fn parse_dataset(origin: &str, text: &str) -> Result<Vec<Record>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::Malformed { path: origin.into(), line: i + 1, reason };
        let r: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if r.question.trim().is_empty() || r.answer.trim().is_empty() {
            return Err(malformed("question and answer must be non-empty".into()));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty(origin.into()));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Record>, DatasetError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: shown.clone(), source })?;
    parse_dataset(&shown, &text)
}

/// The 40-record sample shipped with the crate.
pub fn bundled_sample() -> Vec<Record> {
    parse_dataset("sample.jsonl", include_str!("../fixtures/sample.jsonl")).expect("bundled sample is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Indices into the record list, per part.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Part sizes: train and validation are rounded (half away from zero), the
/// test part takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = ((n as f64) * TRAIN_SHARE).round() as usize;
    let val = (((n as f64) * VAL_SHARE).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Shuffles indices `0..n` with ChaCha8 seeded by `seed` and cuts them into
/// train/val/test.
pub fn split(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, va, _) = split_sizes(n);
    let test = idx.split_off(tr + va);
    let val = idx.split_off(tr);
    Split { train: idx, val, test }
}
