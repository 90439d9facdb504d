//! User histories as typed, span-annotated sentences.
//!
//! A [`UserContext`] owns the rendered history document and the ordered
//! sentence list that tiles it. Spans are half-open character (Unicode scalar)
//! offsets into the document. Rendered datasets produce one sentence per
//! templated field; free text falls back to splitting on terminal punctuation.

mod ingest;
mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marking::{END_MARKER, START_MARKER};

pub use ingest::{
    ingest_generation_dataset, ingest_selection_dataset, parse_generation_record,
    parse_selection_record, BasicInfo, Dataset, DatasetKind, GenerationRecord, Genres, Interaction, Paper,
    RatingTime, Scalar,
    SelectionRecord, SignalTaxonomy, UserRecordId,
};
pub use render::{parse_rendered, render_generation, render_selection};

/// Separator placed between consecutive sentences of a rendered history.
pub const SENTENCE_SEPARATOR: &str = " ";

/// Separator between the history document and the task description when the
/// two are concatenated into a single prompt for the marking model.
pub const PROMPT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("no history sentences")]
    NoSentences,
    #[error("empty filtered context")]
    EmptyFilteredContext,
    #[error("keep set is empty")]
    EmptyKeepSet,
    #[error("sentence {index} is empty")]
    EmptySentence { index: usize },
    #[error("document contains a reserved marker literal")]
    MarkerLiteral,
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("unknown signal label `{0}`")]
    UnknownSignalLabel(String),
    #[error("unknown field `{0}` in signal taxonomy")]
    UnknownField(String),
    #[error("signal taxonomy is missing field `{0}`")]
    MissingField(String),
    #[error("token {token}: offset [{start}, {end}) exceeds document length {len}")]
    OffsetOutOfRange {
        token: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("token {token}: malformed or decreasing offset [{start}, {end})")]
    MalformedOffset {
        token: usize,
        start: usize,
        end: usize,
    },
    #[error("sentence spans do not tile the document: {0}")]
    BadSpans(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// Half-open `[start, end)` character range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Maps character offsets onto byte offsets of one string.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(s: &str) -> Self {
        let mut bytes: Vec<usize> = s.char_indices().map(|(b, _)| b).collect();
        bytes.push(s.len());
        Self { bytes }
    }

    /// Number of characters in the indexed string.
    pub fn char_len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn byte_offset(&self, char_offset: usize) -> usize {
        self.bytes[char_offset.min(self.char_len())]
    }

    pub fn slice<'a>(&self, s: &'a str, span: Span) -> &'a str {
        &s[self.byte_offset(span.start)..self.byte_offset(span.end)]
    }
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub char_span: Span,
    pub signal_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    pub user_id: String,
    pub document: String,
    pub sentences: Vec<Sentence>,
    pub task: String,
}

impl UserContext {
    /// Builds a context by joining `(text, signal_type)` pairs with
    /// [`SENTENCE_SEPARATOR`].
    pub fn from_sentences<I, S, L>(
        user_id: impl Into<String>,
        sentences: I,
        task: impl Into<String>,
    ) -> Result<Self, ContextError>
    where
        I: IntoIterator<Item = (S, L)>,
        S: Into<String>,
        L: Into<String>,
    {
        let mut document = String::new();
        let mut out = Vec::new();
        let mut cursor = 0usize;
        for (index, (text, label)) in sentences.into_iter().enumerate() {
            let text = text.into();
            if text.is_empty() {
                return Err(ContextError::EmptySentence { index });
            }
            if index > 0 {
                document.push_str(SENTENCE_SEPARATOR);
                cursor += char_len(SENTENCE_SEPARATOR);
            }
            let len = char_len(&text);
            document.push_str(&text);
            out.push(Sentence {
                index,
                text,
                char_span: Span::new(cursor, cursor + len),
                signal_type: label.into(),
            });
            cursor += len;
        }
        let ctx = Self {
            user_id: user_id.into(),
            document,
            sentences: out,
            task: task.into(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Splits free text on terminal punctuation followed by whitespace and
    /// labels every sentence with `signal_type`. The document is kept verbatim.
    pub fn from_free_text(
        user_id: impl Into<String>,
        text: impl Into<String>,
        signal_type: &str,
        task: impl Into<String>,
    ) -> Result<Self, ContextError> {
        let document = text.into();
        let index = CharIndex::new(&document);
        let sentences = split_sentence_spans(&document)
            .into_iter()
            .enumerate()
            .map(|(i, span)| Sentence {
                index: i,
                text: index.slice(&document, span).to_string(),
                char_span: span,
                signal_type: signal_type.to_string(),
            })
            .collect();
        let ctx = Self {
            user_id: user_id.into(),
            document,
            sentences,
            task: task.into(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Checks every structural invariant: non-empty, no marker literals,
    /// strictly increasing non-overlapping spans whose text matches the
    /// document, and whitespace-only gaps.
    pub fn validate(&self) -> Result<(), ContextError> {
        if self.sentences.is_empty() {
            return Err(ContextError::NoSentences);
        }
        if contains_marker_literal(&self.document) {
            return Err(ContextError::MarkerLiteral);
        }
        let index = CharIndex::new(&self.document);
        let mut prev_end = 0usize;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.index != i {
                return Err(ContextError::BadSpans(format!(
                    "sentence at position {i} has index {}",
                    s.index
                )));
            }
            if s.char_span.is_empty() {
                return Err(ContextError::EmptySentence { index: i });
            }
            if s.char_span.start < prev_end || s.char_span.end > index.char_len() {
                return Err(ContextError::BadSpans(format!(
                    "sentence {i} span {} out of order or out of range",
                    s.char_span
                )));
            }
            let gap = index.slice(&self.document, Span::new(prev_end, s.char_span.start));
            if !gap.chars().all(char::is_whitespace) {
                return Err(ContextError::BadSpans(format!(
                    "non-separator text before sentence {i}"
                )));
            }
            if index.slice(&self.document, s.char_span) != s.text {
                return Err(ContextError::BadSpans(format!(
                    "sentence {i} text does not match its span"
                )));
            }
            prev_end = s.char_span.end;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn document_char_len(&self) -> usize {
        char_len(&self.document)
    }

    /// Signal labels present in this context, sorted.
    pub fn labels(&self) -> BTreeSet<String> {
        self.sentences.iter().map(|s| s.signal_type.clone()).collect()
    }

    /// Joins the document and task into the prompt sent to the marking model.
    pub fn prompt(&self) -> String {
        render_prompt(&self.document, &self.task)
    }
}

pub fn render_prompt(document: &str, task: &str) -> String {
    let mut s = String::with_capacity(document.len() + task.len() + PROMPT_SEPARATOR.len());
    s.push_str(document);
    s.push_str(PROMPT_SEPARATOR);
    s.push_str(task);
    s
}

pub fn contains_marker_literal(s: &str) -> bool {
    s.contains(START_MARKER) || s.contains(END_MARKER)
}

/// Splits `text` at terminal punctuation (`.`, `!`, `?`) followed by
/// whitespace. Returned spans are trimmed of surrounding whitespace and never
/// empty.
pub fn split_sentence_spans(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_non_ws = 0usize;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_non_ws = i + 1;
        let terminal = matches!(c, '.' | '!' | '?');
        let next_ws = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if terminal && next_ws {
            spans.push(Span::new(start.take().unwrap(), i + 1));
        }
    }
    if let Some(s) = start {
        spans.push(Span::new(s, last_non_ws));
    }
    spans
}

/// Returns a copy of `ctx` containing only sentences whose signal type is in
/// `keep`, re-rendered and re-spanned with [`SENTENCE_SEPARATOR`].
pub fn filter_signals(
    ctx: &UserContext,
    keep: &BTreeSet<String>,
) -> Result<UserContext, ContextError> {
    if keep.is_empty() {
        return Err(ContextError::EmptyKeepSet);
    }
    let kept: Vec<(String, String)> = ctx
        .sentences
        .iter()
        .filter(|s| keep.contains(&s.signal_type))
        .map(|s| (s.text.clone(), s.signal_type.clone()))
        .collect();
    if kept.is_empty() {
        return Err(ContextError::EmptyFilteredContext);
    }
    UserContext::from_sentences(ctx.user_id.clone(), kept, ctx.task.clone())
}

/// Token → sentence map. `None` marks a token outside every sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAssignment {
    pub sentence_of: Vec<Option<usize>>,
}

impl TokenAssignment {
    pub fn len(&self) -> usize {
        self.sentence_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_of.is_empty()
    }

    /// Extends the assignment with `count` unassigned tokens.
    pub fn push_unassigned(&mut self, count: usize) {
        self.sentence_of.extend(std::iter::repeat_n(None, count));
    }
}

/// Assigns each token to the sentence it overlaps most. Zero-overlap tokens
/// stay unassigned, ties go to the earlier sentence.
pub fn assign_tokens(
    token_offsets: &[Span],
    ctx: &UserContext,
) -> Result<TokenAssignment, ContextError> {
    let doc_len = ctx.document_char_len();
    let spans: Vec<Span> = ctx.sentences.iter().map(|s| s.char_span).collect();
    let mut sentence_of = Vec::with_capacity(token_offsets.len());
    let mut prev_start = 0usize;
    for (t, tok) in token_offsets.iter().enumerate() {
        if tok.end < tok.start || tok.start < prev_start {
            return Err(ContextError::MalformedOffset {
                token: t,
                start: tok.start,
                end: tok.end,
            });
        }
        if tok.end > doc_len {
            return Err(ContextError::OffsetOutOfRange {
                token: t,
                start: tok.start,
                end: tok.end,
                len: doc_len,
            });
        }
        prev_start = tok.start;

        let first = spans.partition_point(|s| s.end <= tok.start);
        let mut best: Option<(usize, usize)> = None;
        for (i, span) in spans.iter().enumerate().skip(first) {
            if span.start >= tok.end {
                break;
            }
            let ov = span.overlap(tok);
            if ov > 0 && best.is_none_or(|(_, b)| ov > b) {
                best = Some((i, ov));
            }
        }
        sentence_of.push(best.map(|(i, _)| i));
    }
    Ok(TokenAssignment { sentence_of })
}

/// Instance of a downstream personalization task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskInstance {
    Selection {
        candidates: Vec<String>,
        gold_index: usize,
    },
    Generation {
        query: String,
        gold_title: String,
    },
}

pub const SELECTION_CANDIDATES: usize = 5;

impl TaskInstance {
    pub fn selection(candidates: Vec<String>, gold_index: usize) -> Result<Self, String> {
        if candidates.len() != SELECTION_CANDIDATES {
            return Err(format!(
                "expected {SELECTION_CANDIDATES} candidates, got {}",
                candidates.len()
            ));
        }
        if gold_index >= candidates.len() {
            return Err(format!("gold_index {gold_index} out of bounds"));
        }
        Ok(Self::Selection {
            candidates,
            gold_index,
        })
    }

    pub fn generation(query: String, gold_title: String) -> Result<Self, String> {
        if gold_title.trim().is_empty() {
            return Err("missing gold title".to_string());
        }
        if query.trim().is_empty() {
            return Err("missing query abstract".to_string());
        }
        Ok(Self::Generation { query, gold_title })
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            TaskInstance::Selection { .. } => DatasetKind::Selection,
            TaskInstance::Generation { .. } => DatasetKind::Generation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sentences() -> UserContext {
        UserContext::from_sentences(
            "u1",
            [("Alpha beta.", "title"), ("Gamma delta epsilon.", "rating")],
            "Predict.",
        )
        .unwrap()
    }

    #[test]
    fn spans_tile_document() {
        let ctx = two_sentences();
        assert_eq!(ctx.document, "Alpha beta. Gamma delta epsilon.");
        assert_eq!(ctx.sentences[0].char_span, Span::new(0, 11));
        assert_eq!(ctx.sentences[1].char_span, Span::new(12, 32));
    }

    #[test]
    fn empty_context_rejected() {
        let r = UserContext::from_sentences("u", Vec::<(String, String)>::new(), "t");
        assert_eq!(r.unwrap_err(), ContextError::NoSentences);
    }

    #[test]
    fn marker_literal_rejected() {
        let r = UserContext::from_sentences("u", [("a <END_IMPORTANT> b", "x")], "t");
        assert_eq!(r.unwrap_err(), ContextError::MarkerLiteral);
    }

    #[test]
    fn token_inside_sentence() {
        let ctx = two_sentences();
        let a = assign_tokens(&[Span::new(0, 5), Span::new(13, 17)], &ctx).unwrap();
        assert_eq!(a.sentence_of, vec![Some(0), Some(1)]);
    }

    #[test]
    fn straddling_token_goes_to_larger_overlap() {
        // s1 = [0, 10), s2 = [11, 20); token [7, 16) has 3 chars in s1, 5 in s2.
        let ctx =
            UserContext::from_sentences("u", [("aaaaaaaaa.", "x"), ("bbbbbbbb.", "y")], "t")
                .unwrap();
        assert_eq!(ctx.sentences[0].char_span, Span::new(0, 10));
        assert_eq!(ctx.sentences[1].char_span, Span::new(11, 20));
        let a = assign_tokens(&[Span::new(7, 16)], &ctx).unwrap();
        assert_eq!(a.sentence_of, vec![Some(1)]);
    }

    #[test]
    fn ties_go_to_earlier_sentence() {
        let ctx =
            UserContext::from_sentences("u", [("aaaaaaaaa.", "x"), ("bbbbbbbb.", "y")], "t")
                .unwrap();
        // 3 chars in each sentence, one separator char between.
        let a = assign_tokens(&[Span::new(7, 14)], &ctx).unwrap();
        assert_eq!(a.sentence_of, vec![Some(0)]);
    }

    #[test]
    fn separator_token_unassigned() {
        let ctx = two_sentences();
        let a = assign_tokens(&[Span::new(11, 12)], &ctx).unwrap();
        assert_eq!(a.sentence_of, vec![None]);
    }

    #[test]
    fn offset_beyond_document_is_error() {
        let ctx = two_sentences();
        let err = assign_tokens(&[Span::new(30, 40)], &ctx).unwrap_err();
        assert!(matches!(err, ContextError::OffsetOutOfRange { token: 0, .. }));
    }

    #[test]
    fn decreasing_offsets_are_error() {
        let ctx = two_sentences();
        let err = assign_tokens(&[Span::new(5, 8), Span::new(2, 4)], &ctx).unwrap_err();
        assert!(matches!(err, ContextError::MalformedOffset { token: 1, .. }));
    }

    #[test]
    fn free_text_split() {
        let ctx = UserContext::from_free_text(
            "u",
            "It rates 3.5 out of 5.0.  Then? Yes!\nEnd",
            "note",
            "t",
        )
        .unwrap();
        let texts: Vec<&str> = ctx.sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["It rates 3.5 out of 5.0.", "Then?", "Yes!", "End"]);
    }

    #[test]
    fn filter_all_labels_is_identity() {
        let ctx = two_sentences();
        let out = filter_signals(&ctx, &ctx.labels()).unwrap();
        assert_eq!(out, ctx);
    }

    #[test]
    fn filter_to_nothing_is_error() {
        let ctx = two_sentences();
        let keep = BTreeSet::from(["genre".to_string()]);
        assert_eq!(
            filter_signals(&ctx, &keep).unwrap_err(),
            ContextError::EmptyFilteredContext
        );
        assert_eq!(
            filter_signals(&ctx, &BTreeSet::new()).unwrap_err(),
            ContextError::EmptyKeepSet
        );
    }

    #[test]
    fn unicode_spans_are_characters() {
        let ctx = UserContext::from_sentences("u", [("Amélie rocks.", "title"), ("Ok.", "x")], "t")
            .unwrap();
        assert_eq!(ctx.sentences[1].char_span, Span::new(14, 17));
        assert_eq!(ctx.document.len(), 18);
    }

    #[test]
    fn task_instance_bounds() {
        let c: Vec<String> = (0..5).map(|i| format!("m{i}")).collect();
        assert!(TaskInstance::selection(c.clone(), 4).is_ok());
        assert!(TaskInstance::selection(c.clone(), 5).is_err());
        assert!(TaskInstance::selection(c[..4].to_vec(), 0).is_err());
        assert!(TaskInstance::generation("abs".into(), " ".into()).is_err());
    }
}
