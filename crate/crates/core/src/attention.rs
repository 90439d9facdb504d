//! Last-token attention aggregation: head averaging, sentence means and
//! signal-type means.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{Span, TokenAssignment, UserContext};

/// Tolerance on each head row summing to one.
pub const HEAD_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("snapshot has no heads")]
    NoHeads,
    #[error("head {head} has length {len}, expected {expected}")]
    RaggedHeads {
        head: usize,
        len: usize,
        expected: usize,
    },
    #[error("head {head} sums to {sum}, expected 1")]
    NotNormalized { head: usize, sum: f64 },
    #[error("head {head} token {token} has invalid weight {value}")]
    InvalidWeight { head: usize, token: usize, value: f64 },
    #[error("{offsets} offsets for {tokens} tokens")]
    OffsetCount { offsets: usize, tokens: usize },
    #[error("task_token_count {task} exceeds token count {tokens}")]
    TaskTokens { task: usize, tokens: usize },
    #[error("assignment covers {assigned} tokens, scores cover {tokens}")]
    AssignmentLength { assigned: usize, tokens: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// Per-head attention of the final prompt token over all input tokens at one
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub layer: usize,
    pub heads: Vec<Vec<f64>>,
    pub token_offsets: Vec<Span>,
    /// Trailing tokens that belong to the task description, not the history.
    pub task_token_count: usize,
}

impl AttentionSnapshot {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.token_offsets.len()
    }

    /// Number of leading tokens that may belong to history sentences.
    pub fn context_token_count(&self) -> usize {
        self.num_tokens().saturating_sub(self.task_token_count)
    }

    /// Checks shape, non-negativity and per-head normalization.
    pub fn validate(&self) -> Result<(), AttentionError> {
        check_heads(&self.heads)?;
        let n = self.heads[0].len();
        if self.token_offsets.len() != n {
            return Err(AttentionError::OffsetCount {
                offsets: self.token_offsets.len(),
                tokens: n,
            });
        }
        if self.task_token_count > n {
            return Err(AttentionError::TaskTokens {
                task: self.task_token_count,
                tokens: n,
            });
        }
        for (j, head) in self.heads.iter().enumerate() {
            for (m, &w) in head.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(AttentionError::InvalidWeight {
                        head: j,
                        token: m,
                        value: w,
                    });
                }
            }
            let sum: f64 = head.iter().sum();
            if (sum - 1.0).abs() > HEAD_SUM_TOLERANCE {
                return Err(AttentionError::NotNormalized { head: j, sum });
            }
        }
        Ok(())
    }

    /// Assigns context tokens to sentences; task tokens are left unassigned.
    pub fn assign(&self, ctx: &UserContext) -> Result<TokenAssignment, crate::context::ContextError> {
        let n_ctx = self.context_token_count();
        let mut a = crate::context::assign_tokens(&self.token_offsets[..n_ctx], ctx)?;
        a.push_unassigned(self.task_token_count);
        Ok(a)
    }
}

fn check_heads(heads: &[Vec<f64>]) -> Result<(), AttentionError> {
    let first = heads.first().ok_or(AttentionError::NoHeads)?;
    for (j, h) in heads.iter().enumerate() {
        if h.len() != first.len() {
            return Err(AttentionError::RaggedHeads {
                head: j,
                len: h.len(),
                expected: first.len(),
            });
        }
    }
    Ok(())
}

/// Head-averaged token scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub values: Vec<f64>,
}

impl TokenScores {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Elementwise mean of the head vectors.
pub fn average_heads(snapshot: &AttentionSnapshot) -> Result<TokenScores, AttentionError> {
    check_heads(&snapshot.heads)?;
    let n = snapshot.heads[0].len();
    let j = snapshot.heads.len() as f64;
    let mut values = vec![0.0; n];
    for head in &snapshot.heads {
        for (acc, &w) in values.iter_mut().zip(head) {
            *acc += w;
        }
    }
    for v in &mut values {
        *v /= j;
    }
    Ok(TokenScores { values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    /// Mean token score per scored sentence.
    pub scores: BTreeMap<usize, f64>,
    /// Number of tokens assigned to each scored sentence.
    pub token_counts: BTreeMap<usize, usize>,
    /// Combined score of tokens outside every sentence.
    pub unassigned_mass: f64,
}

impl SentenceScores {
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn max_score(&self) -> Option<f64> {
        self.scores.values().copied().reduce(f64::max)
    }

    /// Sentences of `ctx` that received no token.
    pub fn unscored<'a>(&'a self, ctx: &'a UserContext) -> impl Iterator<Item = usize> + 'a {
        (0..ctx.len()).filter(|i| !self.scores.contains_key(i))
    }
}

/// Mean token score per sentence. Raw softmax weights are averaged without
/// renormalizing over the assigned tokens.
pub fn sentence_scores(
    tokens: &TokenScores,
    assignment: &TokenAssignment,
) -> Result<SentenceScores, AttentionError> {
    if assignment.len() != tokens.values.len() {
        return Err(AttentionError::AssignmentLength {
            assigned: assignment.len(),
            tokens: tokens.values.len(),
        });
    }
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unassigned = 0.0;
    for (&w, s) in tokens.values.iter().zip(&assignment.sentence_of) {
        match s {
            Some(i) => {
                *sums.entry(*i).or_default() += w;
                *counts.entry(*i).or_default() += 1;
            }
            None => unassigned += w,
        }
    }
    let scores = sums
        .into_iter()
        .map(|(i, sum)| (i, sum / counts[&i] as f64))
        .collect();
    Ok(SentenceScores {
        scores,
        token_counts: counts,
        unassigned_mass: unassigned,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalScores {
    pub scores: BTreeMap<String, f64>,
    pub sentence_counts: BTreeMap<String, usize>,
}

/// Mean sentence score per signal label, over scored sentences only.
pub fn signal_scores(sent: &SentenceScores, ctx: &UserContext) -> SignalScores {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (&i, &score) in &sent.scores {
        let label = &ctx.sentences[i].signal_type;
        *sums.entry(label.clone()).or_default() += score;
        *counts.entry(label.clone()).or_default() += 1;
    }
    let scores = sums
        .into_iter()
        .map(|(l, s)| {
            let n = counts[&l] as f64;
            (l, s / n)
        })
        .collect();
    SignalScores {
        scores,
        sentence_counts: counts,
    }
}

#[derive(Debug, Serialize)]
struct SentenceRow {
    layer: usize,
    sentence_index: usize,
    score: f64,
}

/// Writes `layer,sentence_index,score` rows.
pub fn write_sentence_csv<W: Write>(
    w: W,
    layer: usize,
    scores: &SentenceScores,
) -> Result<(), AttentionError> {
    let mut wtr = csv::Writer::from_writer(w);
    for (&i, &score) in &scores.scores {
        wtr.serialize(SentenceRow {
            layer,
            sentence_index: i,
            score,
        })
        .map_err(|e| AttentionError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| AttentionError::Csv(e.to_string()))
}

#[derive(Debug, Serialize)]
struct SignalRow<'a> {
    layer: usize,
    signal_label: &'a str,
    score: f64,
}

/// Writes `layer,signal_label,score` rows.
pub fn write_signal_csv<W: Write>(
    w: W,
    layer: usize,
    scores: &SignalScores,
) -> Result<(), AttentionError> {
    let mut wtr = csv::Writer::from_writer(w);
    for (label, &score) in &scores.scores {
        wtr.serialize(SignalRow {
            layer,
            signal_label: label,
            score,
        })
        .map_err(|e| AttentionError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| AttentionError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn snap(heads: Vec<Vec<f64>>) -> AttentionSnapshot {
        let n = heads.first().map_or(0, Vec::len);
        AttentionSnapshot {
            layer: 0,
            heads,
            token_offsets: (0..n).map(|i| Span::new(i, i + 1)).collect(),
            task_token_count: 0,
        }
    }

    #[test]
    fn single_head_identity() {
        let t = average_heads(&snap(vec![vec![0.3, 0.7]])).unwrap();
        assert_eq!(t.values, vec![0.3, 0.7]);
    }

    #[test]
    fn two_head_mean() {
        let t = average_heads(&snap(vec![vec![0.2, 0.8], vec![0.6, 0.4]])).unwrap();
        assert_abs_diff_eq!(t.values[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(t.values[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn identical_heads_unchanged() {
        let h = vec![0.1, 0.25, 0.65];
        let t = average_heads(&snap(vec![h.clone(); 5])).unwrap();
        for (a, b) in t.values.iter().zip(&h) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn ragged_heads_rejected() {
        let err = average_heads(&snap(vec![vec![0.5, 0.5], vec![1.0]])).unwrap_err();
        assert_eq!(
            err,
            AttentionError::RaggedHeads {
                head: 1,
                len: 1,
                expected: 2
            }
        );
        assert_eq!(average_heads(&snap(vec![])).unwrap_err(), AttentionError::NoHeads);
    }

    #[test]
    fn validate_checks_normalization() {
        assert!(snap(vec![vec![0.5, 0.5]]).validate().is_ok());
        assert!(matches!(
            snap(vec![vec![0.5, 0.6]]).validate(),
            Err(AttentionError::NotNormalized { head: 0, .. })
        ));
        assert!(matches!(
            snap(vec![vec![1.5, -0.5]]).validate(),
            Err(AttentionError::InvalidWeight { head: 0, token: 1, .. })
        ));
    }

    #[test]
    fn single_sentence_mean() {
        let t = TokenScores {
            values: vec![0.1, 0.3, 0.2],
        };
        let a = TokenAssignment {
            sentence_of: vec![Some(0); 3],
        };
        let s = sentence_scores(&t, &a).unwrap();
        assert_abs_diff_eq!(s.scores[&0], 0.2, epsilon = 1e-15);
        assert_eq!(s.token_counts[&0], 3);
    }

    #[test]
    fn single_token_sentence_and_unscored() {
        let t = TokenScores {
            values: vec![0.1, 0.3, 0.6],
        };
        let a = TokenAssignment {
            sentence_of: vec![Some(0), Some(2), None],
        };
        let s = sentence_scores(&t, &a).unwrap();
        assert_eq!(s.scores[&2], 0.3);
        assert!(!s.scores.contains_key(&1));
        assert_abs_diff_eq!(s.unassigned_mass, 0.6);
    }

    #[test]
    fn weighted_sum_consistency() {
        let t = TokenScores {
            values: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.25],
        };
        let a = TokenAssignment {
            sentence_of: vec![Some(0), Some(0), Some(1), None, Some(1), Some(1)],
        };
        let s = sentence_scores(&t, &a).unwrap();
        let weighted: f64 = s
            .scores
            .iter()
            .map(|(i, w)| w * s.token_counts[i] as f64)
            .sum();
        assert_abs_diff_eq!(weighted, 0.05 + 0.1 + 0.15 + 0.25 + 0.25, epsilon = 1e-9);
    }

    #[test]
    fn signal_means() {
        let ctx = UserContext::from_sentences(
            "u",
            [("A.", "title"), ("B.", "title"), ("C.", "rating")],
            "t",
        )
        .unwrap();
        let sent = SentenceScores {
            scores: BTreeMap::from([(0, 0.3), (1, 0.5), (2, 0.2)]),
            token_counts: BTreeMap::from([(0, 1), (1, 1), (2, 1)]),
            unassigned_mass: 0.0,
        };
        let sig = signal_scores(&sent, &ctx);
        assert_abs_diff_eq!(sig.scores["title"], 0.4, epsilon = 1e-15);
        assert_eq!(sig.scores["rating"], 0.2);
        assert_eq!(sig.sentence_counts["title"], 2);
    }

    #[test]
    fn csv_columns() {
        let sent = SentenceScores {
            scores: BTreeMap::from([(0, 0.5)]),
            token_counts: BTreeMap::from([(0, 2)]),
            unassigned_mass: 0.0,
        };
        let mut buf = Vec::new();
        write_sentence_csv(&mut buf, 6, &sent).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "layer,sentence_index,score\n6,0,0.5\n");
    }
}
