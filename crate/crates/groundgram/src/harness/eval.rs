//! Evaluation metrics: unlabeled bracketing, tag clustering quality, and
//! the combined report.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::chart::Derivation;

/// Metric bundle written at the end of a pipeline run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub bracket_precision: f64,
    pub bracket_recall: f64,
    pub bracket_f1: f64,
    pub matched_brackets: usize,
    pub predicted_brackets: usize,
    pub gold_brackets: usize,
    pub many_to_one: f64,
    pub v_measure: f64,
    pub token_count: usize,
    pub grounding_modality_accuracy: Option<f64>,
}

pub const EVAL_FORMAT_VERSION: u32 = 1;

/// Micro-averaged unlabeled bracketing scores over `extract_spans` sets.
pub fn eval_brackets(
    pred: &[Derivation],
    gold: &[Derivation],
) -> Result<(f64, f64, f64, usize, usize, usize), HarnessError> {
    if pred.len() != gold.len() {
        return Err(HarnessError::LengthMismatch(format!(
            "{} predicted trees vs {} gold trees",
            pred.len(),
            gold.len()
        )));
    }
    let mut matched = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        let ps: BTreeSet<(usize, usize)> = p.extract_spans();
        let gs: BTreeSet<(usize, usize)> = g.extract_spans();
        matched += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    let precision = if n_pred == 0 {
        1.0
    } else {
        matched as f64 / n_pred as f64
    };
    let recall = if n_gold == 0 {
        1.0
    } else {
        matched as f64 / n_gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1, matched, n_pred, n_gold))
}

/// Many-to-one accuracy and V-measure between predicted and gold tag
/// sequences (flattened, aligned token lists).
pub fn eval_tags(pred: &[usize], gold: &[usize]) -> Result<(f64, f64), HarnessError> {
    if pred.len() != gold.len() {
        return Err(HarnessError::LengthMismatch(format!(
            "{} predicted tags vs {} gold tags",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(HarnessError::LengthMismatch("empty tag lists".into()));
    }
    let n = pred.len() as f64;
    let kp = pred.iter().max().unwrap() + 1;
    let kg = gold.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kg]; kp];
    for (&p, &g) in pred.iter().zip(gold) {
        table[p][g] += 1;
    }

    // Many-to-one: map each predicted cluster to its majority gold tag.
    let mut correct = 0usize;
    for row in &table {
        correct += row.iter().max().copied().unwrap_or(0);
    }
    let many_to_one = correct as f64 / n;

    // V-measure with natural-log entropies.
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let pred_margin: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let gold_margin: Vec<usize> = (0..kg).map(|g| table.iter().map(|r| r[g]).sum()).collect();
    let h_gold = entropy(&gold_margin);
    let h_pred = entropy(&pred_margin);
    // Conditional entropies H(gold|pred) and H(pred|gold).
    let mut h_gold_given_pred = 0.0;
    for row in &table {
        for &c in row {
            if c > 0 {
                let p = c as f64 / n;
                let row_total: usize = row.iter().sum();
                h_gold_given_pred -= p * (c as f64 / row_total as f64).ln();
            }
        }
    }
    let mut h_pred_given_gold = 0.0;
    for g in 0..kg {
        let col_total = gold_margin[g];
        for row in &table {
            let c = row[g];
            if c > 0 {
                let p = c as f64 / n;
                h_pred_given_gold -= p * (c as f64 / col_total as f64).ln();
            }
        }
    }
    let homogeneity = if h_gold == 0.0 {
        1.0
    } else {
        1.0 - h_gold_given_pred / h_gold
    };
    let completeness = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_gold / h_pred
    };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok((many_to_one, v))
}
