//! ROUGE-L over lowercase alphanumeric tokens.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn rouge_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Longest common subsequence length; O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(reference: &str, hypothesis: &str) -> RougeScore {
    rouge_l_tokens(&rouge_tokens(reference), &rouge_tokens(hypothesis))
}

pub fn rouge_l_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> RougeScore {
    if reference.is_empty() || hypothesis.is_empty() {
        return RougeScore::ZERO;
    }
    let l = lcs_len(reference, hypothesis) as f64;
    let precision = l / hypothesis.len() as f64;
    let recall = l / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}
