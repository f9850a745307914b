//! Pipeline harness: configuration, corpus and scene I/O, synthetic data
//! generation, vector quantization, and evaluation metrics.

pub mod config;
pub mod eval;
pub mod quantize;
pub mod records;
pub mod synth;

use std::path::Path;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("feature rows have unequal widths")]
    DimensionMismatch,
    #[error("grammar spec error: {0}")]
    Spec(String),
}

/// Load a whitespace-tokenized corpus, one sentence per line; blank lines
/// are skipped.
pub fn load_corpus(path: &Path, lowercase: bool) -> Result<Vec<Vec<String>>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut sentences = Vec::new();
    for line in text.lines() {
        let toks: Vec<String> = line
            .split_whitespace()
            .map(|t| {
                if lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect();
        if !toks.is_empty() {
            sentences.push(toks);
        }
    }
    if sentences.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    Ok(sentences)
}
