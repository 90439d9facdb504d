//! Independent oracles and generators shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use attnsum_core::attention::AttentionSnapshot;
use attnsum_core::context::{Span, TokenAssignment, UserContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Softmax-normalized random heads.
pub fn random_heads(rng: &mut ChaCha8Rng, heads: usize, tokens: usize) -> Vec<Vec<f64>> {
    (0..heads)
        .map(|_| {
            let logits: Vec<f64> = (0..tokens).map(|_| rng.random_range(-4.0..4.0)).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            logits.iter().map(|l| l.exp() / z).collect()
        })
        .collect()
}

pub fn random_snapshot(rng: &mut ChaCha8Rng, max_tokens: usize, max_heads: usize) -> AttentionSnapshot {
    let n = rng.random_range(1..=max_tokens);
    let j = rng.random_range(1..=max_heads);
    AttentionSnapshot {
        layer: 0,
        heads: random_heads(rng, j, n),
        token_offsets: (0..n).map(|i| Span::new(2 * i, 2 * i + 1)).collect(),
        task_token_count: 0,
    }
}

/// Column means computed token-first, the transpose of the library loop.
pub fn head_mean_oracle(heads: &[Vec<f64>]) -> Vec<f64> {
    (0..heads[0].len())
        .map(|m| heads.iter().map(|h| h[m]).sum::<f64>() / heads.len() as f64)
        .collect()
}

/// Random assignment over `sentences` sentences with some unassigned tokens.
pub fn random_assignment(rng: &mut ChaCha8Rng, tokens: usize, sentences: usize) -> TokenAssignment {
    TokenAssignment {
        sentence_of: (0..tokens)
            .map(|_| {
                if rng.random_bool(0.15) {
                    None
                } else {
                    Some(rng.random_range(0..sentences))
                }
            })
            .collect(),
    }
}

/// Threshold rule straight from the definition.
pub fn threshold_oracle(scores: &[(usize, f64)], alpha: f64) -> BTreeSet<usize> {
    let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scores.iter().filter(|s| s.1 >= alpha * max).map(|s| s.0).collect()
}

/// Exhaustive LCS: the longest subset of `a` that is a subsequence of `b`.
pub fn brute_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&T> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_oracle(reference: &[String], hypothesis: &[String]) -> f64 {
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let l = brute_lcs(reference, hypothesis) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / hypothesis.len() as f64, l / reference.len() as f64);
    2.0 * p * r / (p + r)
}

pub fn random_words(rng: &mut ChaCha8Rng, max_len: usize, vocab: &[&str]) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect()
}

pub fn simple_context(n: usize, labels: &[&str]) -> UserContext {
    UserContext::from_sentences(
        "u",
        (0..n).map(|i| (format!("Sentence {i} says something."), labels[i % labels.len()].to_string())),
        "Task.",
    )
    .unwrap()
}
