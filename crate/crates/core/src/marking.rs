//! Threshold selection of important sentences and explicit marking of the
//! history.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::SentenceScores;
use crate::context::{char_len, CharIndex, UserContext};

pub const START_MARKER: &str = "<START_IMPORTANT>";
pub const END_MARKER: &str = "<END_IMPORTANT>";

/// Characters added per marked sentence.
pub const MARKER_OVERHEAD: usize = START_MARKER.len() + END_MARKER.len();

#[derive(Debug, Error, PartialEq)]
pub enum MarkingError {
    #[error("alpha {0} outside (0, 1]")]
    AlphaOutOfRange(f64),
    #[error("no scored sentences")]
    NoScoredSentences,
    #[error("selection size {k} outside [1, {n}]")]
    CountOutOfRange { k: usize, n: usize },
    #[error("sentence index {index} out of range for {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unbalanced markers at byte {0}")]
    Unbalanced(usize),
}

/// How a selection was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum SelectionCriterion {
    Threshold { alpha: f64, max_score: f64 },
    Random { k: usize, seed: u64 },
    All,
    Identified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSelection {
    pub selected: BTreeSet<usize>,
    pub criterion: SelectionCriterion,
}

impl MarkSelection {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn all(ctx: &UserContext) -> Self {
        Self {
            selected: (0..ctx.len()).collect(),
            criterion: SelectionCriterion::All,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().copied().collect()
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), MarkingError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(MarkingError::AlphaOutOfRange(alpha))
    }
}

/// Keeps every scored sentence whose score is at least `alpha` times the
/// maximum sentence score.
pub fn select_important(sent: &SentenceScores, alpha: f64) -> Result<MarkSelection, MarkingError> {
    check_alpha(alpha)?;
    let max_score = sent.max_score().ok_or(MarkingError::NoScoredSentences)?;
    let cutoff = alpha * max_score;
    let selected = sent
        .scores
        .iter()
        .filter(|(_, &w)| w >= cutoff)
        .map(|(&i, _)| i)
        .collect();
    Ok(MarkSelection {
        selected,
        criterion: SelectionCriterion::Threshold { alpha, max_score },
    })
}

/// Uniform sample of `k` sentences without replacement, reproducible per seed.
pub fn random_selection(ctx: &UserContext, k: usize, seed: u64) -> Result<MarkSelection, MarkingError> {
    let n = ctx.len();
    if k == 0 || k > n {
        return Err(MarkingError::CountOutOfRange { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = sample(&mut rng, n, k).into_iter().collect();
    Ok(MarkSelection {
        selected,
        criterion: SelectionCriterion::Random { k, seed },
    })
}

/// The history with markers around selected sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedContext {
    pub text: String,
    /// Character positions of each start marker and each end marker.
    pub marker_spans: Vec<(usize, usize)>,
    pub user_id: String,
}

impl MarkedContext {
    pub fn strip(&self) -> Result<String, MarkingError> {
        strip_markers(&self.text)
    }
}

/// Wraps each selected sentence in its own marker pair. Text outside selected
/// sentences is copied unchanged.
pub fn mark_context(sel: &MarkSelection, ctx: &UserContext) -> Result<MarkedContext, MarkingError> {
    if let Some(&bad) = sel.selected.iter().find(|&&i| i >= ctx.len()) {
        return Err(MarkingError::IndexOutOfRange {
            index: bad,
            len: ctx.len(),
        });
    }
    let index = CharIndex::new(&ctx.document);
    let mut text = String::with_capacity(ctx.document.len() + MARKER_OVERHEAD * sel.len());
    let mut marker_spans = Vec::with_capacity(sel.len());
    let mut copied_to = 0usize; // byte offset into the document
    let mut out_chars = 0usize;
    for &i in &sel.selected {
        let span = ctx.sentences[i].char_span;
        let (b_start, b_end) = (index.byte_offset(span.start), index.byte_offset(span.end));
        let gap = &ctx.document[copied_to..b_start];
        text.push_str(gap);
        out_chars += char_len(gap);

        let open = out_chars;
        text.push_str(START_MARKER);
        text.push_str(&ctx.document[b_start..b_end]);
        out_chars += START_MARKER.len() + span.len();
        let close = out_chars;
        text.push_str(END_MARKER);
        out_chars += END_MARKER.len();

        marker_spans.push((open, close));
        copied_to = b_end;
    }
    text.push_str(&ctx.document[copied_to..]);
    Ok(MarkedContext {
        text,
        marker_spans,
        user_id: ctx.user_id.clone(),
    })
}

/// Removes all marker literals, failing on nested, dangling or unopened
/// markers.
pub fn strip_markers(text: &str) -> Result<String, MarkingError> {
    let mut out = String::with_capacity(text.len());
    let mut open = false;
    let mut rest = text;
    let mut consumed = 0usize;
    loop {
        let next_start = rest.find(START_MARKER);
        let next_end = rest.find(END_MARKER);
        let (pos, is_start) = match (next_start, next_end) {
            (None, None) => break,
            (Some(s), None) => (s, true),
            (None, Some(e)) => (e, false),
            (Some(s), Some(e)) => {
                if s < e {
                    (s, true)
                } else {
                    (e, false)
                }
            }
        };
        if is_start == open {
            return Err(MarkingError::Unbalanced(consumed + pos));
        }
        open = is_start;
        out.push_str(&rest[..pos]);
        let skip = pos + if is_start { START_MARKER.len() } else { END_MARKER.len() };
        consumed += skip;
        rest = &rest[skip..];
    }
    if open {
        return Err(MarkingError::Unbalanced(text.len()));
    }
    out.push_str(rest);
    Ok(out)
}

/// Extracts the text of each marked region, in order.
pub fn marked_segments(text: &str) -> Result<Vec<&str>, MarkingError> {
    strip_markers(text)?;
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(s) = rest.find(START_MARKER) {
        let after = &rest[s + START_MARKER.len()..];
        let e = after.find(END_MARKER).expect("balanced markers");
        out.push(&after[..e]);
        rest = &after[e + END_MARKER.len()..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn scores(v: &[f64]) -> SentenceScores {
        SentenceScores {
            scores: v.iter().copied().enumerate().collect(),
            token_counts: (0..v.len()).map(|i| (i, 1)).collect::<BTreeMap<_, _>>(),
            unassigned_mass: 0.0,
        }
    }

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn default_alpha_cutoff() {
        let sel = select_important(&scores(&[0.5, 0.09, 0.4]), 0.2).unwrap();
        assert_eq!(sel.selected, set(&[0, 2]));
    }

    #[test]
    fn half_alpha_cutoff() {
        let sel = select_important(&scores(&[0.5, 0.1, 0.4]), 0.5).unwrap();
        assert_eq!(sel.selected, set(&[0, 2]));
    }

    #[test]
    fn alpha_one_keeps_ties() {
        let sel = select_important(&scores(&[0.3, 0.5, 0.2, 0.5]), 1.0).unwrap();
        assert_eq!(sel.selected, set(&[1, 3]));
    }

    #[test]
    fn alpha_range_and_empty() {
        for a in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                select_important(&scores(&[0.5]), a),
                Err(MarkingError::AlphaOutOfRange(_))
            ));
        }
        assert_eq!(
            select_important(&scores(&[]), 0.2).unwrap_err(),
            MarkingError::NoScoredSentences
        );
    }

    #[test]
    fn singleton_context_fully_wrapped() {
        let ctx = UserContext::from_sentences("u", [("Only one.", "x")], "t").unwrap();
        let sel = select_important(&scores(&[0.7]), 0.2).unwrap();
        let m = mark_context(&sel, &ctx).unwrap();
        assert_eq!(m.text, "<START_IMPORTANT>Only one.<END_IMPORTANT>");
        assert_eq!(m.marker_spans, vec![(0, 26)]);
    }

    #[test]
    fn adjacent_sentences_wrapped_individually() {
        let ctx = UserContext::from_sentences("u", [("A.", "x"), ("B.", "x"), ("C.", "x")], "t")
            .unwrap();
        let sel = MarkSelection {
            selected: set(&[0, 1]),
            criterion: SelectionCriterion::All,
        };
        let m = mark_context(&sel, &ctx).unwrap();
        assert_eq!(
            m.text,
            "<START_IMPORTANT>A.<END_IMPORTANT> <START_IMPORTANT>B.<END_IMPORTANT> C."
        );
        assert_eq!(m.text.len(), ctx.document.len() + 2 * MARKER_OVERHEAD);
    }

    #[test]
    fn index_out_of_range() {
        let ctx = UserContext::from_sentences("u", [("A.", "x")], "t").unwrap();
        let sel = MarkSelection {
            selected: set(&[3]),
            criterion: SelectionCriterion::All,
        };
        assert!(matches!(
            mark_context(&sel, &ctx),
            Err(MarkingError::IndexOutOfRange { index: 3, len: 1 })
        ));
    }

    #[test]
    fn strip_basics() {
        assert_eq!(strip_markers("plain text").unwrap(), "plain text");
        assert_eq!(
            strip_markers("<START_IMPORTANT>abc<END_IMPORTANT>").unwrap(),
            "abc"
        );
        assert!(strip_markers("<START_IMPORTANT>abc").is_err());
        assert!(strip_markers("abc<END_IMPORTANT>").is_err());
        assert!(strip_markers("<START_IMPORTANT><START_IMPORTANT>a<END_IMPORTANT>").is_err());
    }

    #[test]
    fn segments() {
        let segs =
            marked_segments("x <START_IMPORTANT>a b<END_IMPORTANT> y <START_IMPORTANT>c<END_IMPORTANT>")
                .unwrap();
        assert_eq!(segs, vec!["a b", "c"]);
    }

    #[test]
    fn random_selection_bounds_and_determinism() {
        let ctx = UserContext::from_sentences(
            "u",
            (0..6).map(|i| (format!("S{i}."), "x".to_string())),
            "t",
        )
        .unwrap();
        assert_eq!(random_selection(&ctx, 6, 1).unwrap().selected, set(&[0, 1, 2, 3, 4, 5]));
        assert_eq!(
            random_selection(&ctx, 3, 42).unwrap(),
            random_selection(&ctx, 3, 42).unwrap()
        );
        assert!(random_selection(&ctx, 0, 1).is_err());
        assert!(random_selection(&ctx, 7, 1).is_err());
    }

    #[test]
    fn random_selection_is_uniform() {
        let ctx = UserContext::from_sentences(
            "u",
            (0..4).map(|i| (format!("S{i}."), "x".to_string())),
            "t",
        )
        .unwrap();
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let sel = random_selection(&ctx, 1, seed).unwrap();
            counts[*sel.selected.iter().next().unwrap()] += 1;
        }
        for c in counts {
            assert!((2350..=2650).contains(&c), "count {c} outside 2500±150");
        }
    }
}
