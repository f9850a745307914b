//! Shared corpus types passed between pipeline stages.

use serde::{Deserialize, Serialize};

/// One sentence with its induced numeric POS tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<usize>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A corpus of tagged sentences over a closed tag inventory `0..n_tags`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedCorpus {
    pub sentences: Vec<TaggedSentence>,
    pub n_tags: usize,
}

impl TaggedCorpus {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    /// `token/tagid` rendering, one sentence per line.
    pub fn to_slashed_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let mut first = true;
            for (tok, tag) in s.tokens.iter().zip(&s.tags) {
                if !first {
                    out.push(' ');
                }
                out.push_str(tok);
                out.push('/');
                out.push_str(&tag.to_string());
                first = false;
            }
            out.push('\n');
        }
        out
    }
}
