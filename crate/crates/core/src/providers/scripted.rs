//! Rule-based generators for offline runs.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::counter::{TokenCounter, WhitespaceCounter};
use super::{GenerationRequest, GenerationResult, Generator, ProviderError, RequestPurpose, Usage};
use crate::context::{split_sentence_spans, CharIndex};
use crate::marking::{marked_segments, strip_markers};

/// How the scripted generator answers selection prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Picks the first candidate whose title appears verbatim in the profile.
    TitleMatch,
    /// Picks a candidate uniformly, from a hash of the seed and the prompt.
    UniformRandom { seed: u64 },
}

/// How the scripted generator answers title-generation prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TitleRule {
    /// The first `n` whitespace tokens of the query abstract.
    FirstTokens { n: usize },
    /// The first `n` whitespace tokens of the profile.
    ProfileTokens { n: usize },
    Fixed { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedConfig {
    /// Keywords used to answer identification prompts: every context sentence
    /// containing one of them is returned, one per line.
    #[serde(default)]
    pub identify_keywords: Vec<String>,
    #[serde(default = "default_selection")]
    pub selection: SelectionRule,
    #[serde(default = "default_title")]
    pub title: TitleRule,
}

fn default_selection() -> SelectionRule {
    SelectionRule::TitleMatch
}

fn default_title() -> TitleRule {
    TitleRule::FirstTokens { n: 8 }
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            identify_keywords: Vec::new(),
            selection: default_selection(),
            title: default_title(),
        }
    }
}

/// Answers each request purpose by a fixed rule:
///
/// * summarize: the marked sentences of the context joined by spaces, or the
///   leading tokens of the context when nothing is marked, cut to the budget;
/// * refine: the previous summary, cut to the budget;
/// * identify: context sentences containing a configured keyword;
/// * answer / title: per [`SelectionRule`] / [`TitleRule`].
///
/// Every call is logged for call-count assertions.
pub struct ScriptedGenerator {
    config: ScriptedConfig,
    counter: Box<dyn TokenCounter>,
    log: Mutex<Vec<RequestPurpose>>,
}

impl std::fmt::Debug for ScriptedGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedGenerator")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Default for ScriptedGenerator {
    fn default() -> Self {
        Self::new(ScriptedConfig::default())
    }
}

/// Reply used when no candidate can be chosen.
pub const NO_ANSWER: &str = "I cannot determine the answer from the profile.";

impl ScriptedGenerator {
    pub fn new(config: ScriptedConfig) -> Self {
        Self {
            config,
            counter: Box::new(WhitespaceCounter),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_selection(mut self, rule: SelectionRule) -> Self {
        self.config.selection = rule;
        self
    }

    pub fn with_title(mut self, rule: TitleRule) -> Self {
        self.config.title = rule;
        self
    }

    pub fn with_identify_keywords(mut self, keywords: Vec<String>) -> Self {
        self.config.identify_keywords = keywords;
        self
    }

    pub fn config(&self) -> &ScriptedConfig {
        &self.config
    }

    pub fn calls(&self) -> Vec<RequestPurpose> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn reset_calls(&self) {
        self.log.lock().unwrap().clear();
    }

    fn fit(&self, text: &str, m: usize) -> String {
        self.counter.head(text, m).trim().to_string()
    }

    fn summarize(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let context = req.parts.context.as_deref().unwrap_or(&req.user);
        let segments = marked_segments(context)
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let raw = if segments.is_empty() {
            context.to_string()
        } else {
            segments.join(" ")
        };
        Ok(self.fit(&raw, req.max_tokens))
    }

    fn refine(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        match &req.parts.previous {
            Some(prev) => Ok(self.fit(prev, req.max_tokens)),
            None => self.summarize(req),
        }
    }

    fn identify(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let context = req.parts.context.as_deref().unwrap_or(&req.user);
        let plain = strip_markers(context).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let index = CharIndex::new(&plain);
        let lines: Vec<&str> = split_sentence_spans(&plain)
            .into_iter()
            .map(|s| index.slice(&plain, s))
            .filter(|s| self.config.identify_keywords.iter().any(|k| s.contains(k.as_str())))
            .collect();
        Ok(lines.join("\n"))
    }

    fn answer(&self, req: &GenerationRequest) -> String {
        let candidates = &req.parts.candidates;
        match &self.config.selection {
            SelectionRule::TitleMatch => {
                let profile = req.parts.profile.as_deref().unwrap_or("");
                candidates
                    .iter()
                    .position(|c| !c.trim().is_empty() && profile.contains(c.trim()))
                    .map_or_else(|| NO_ANSWER.to_string(), |i| (i + 1).to_string())
            }
            SelectionRule::UniformRandom { seed } => {
                if candidates.is_empty() {
                    return NO_ANSWER.to_string();
                }
                let mut h = Sha256::new();
                h.update(seed.to_le_bytes());
                h.update(req.system.as_bytes());
                h.update([0]);
                h.update(req.user.as_bytes());
                let d = h.finalize();
                let v = u64::from_le_bytes(d[..8].try_into().unwrap());
                ((v % candidates.len() as u64) + 1).to_string()
            }
        }
    }

    fn title(&self, req: &GenerationRequest) -> String {
        match &self.config.title {
            TitleRule::FirstTokens { n } => {
                let q = req.parts.query.as_deref().unwrap_or("");
                self.counter.head(q, *n).trim().to_string()
            }
            TitleRule::ProfileTokens { n } => {
                let p = req.parts.profile.as_deref().unwrap_or("");
                self.counter.head(p, *n).trim().to_string()
            }
            TitleRule::Fixed { text } => text.clone(),
        }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.log.lock().unwrap().push(req.purpose);
        let text = match req.purpose {
            RequestPurpose::Summarize => self.summarize(req)?,
            RequestPurpose::Refine => self.refine(req)?,
            RequestPurpose::Identify => self.identify(req)?,
            RequestPurpose::Answer => self.answer(req),
            RequestPurpose::Title => self.title(req),
        };
        let text = self.fit(&text, req.max_tokens);
        let usage = Usage {
            prompt_tokens: self.counter.count(&req.system) + self.counter.count(&req.user),
            completion_tokens: self.counter.count(&text),
        };
        Ok(GenerationResult {
            text,
            usage,
            finish_reason: "stop".into(),
        })
    }

    fn label(&self) -> String {
        "scripted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::PromptParts;

    fn req(purpose: RequestPurpose, parts: PromptParts, max_tokens: usize) -> GenerationRequest {
        GenerationRequest {
            system: "summarize".into(),
            user: parts.context.clone().unwrap_or_default(),
            max_tokens,
            temperature: 0.0,
            model: "scripted".into(),
            purpose,
            parts,
        }
    }

    #[test]
    fn extractive_concatenates_marked_sentences() {
        let g = ScriptedGenerator::default();
        let ctx = "<START_IMPORTANT>A b c.<END_IMPORTANT> D e. <START_IMPORTANT>F g.<END_IMPORTANT>";
        let parts = PromptParts {
            context: Some(ctx.into()),
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Summarize, parts.clone(), 50)).unwrap();
        assert_eq!(out.text, "A b c. F g.");
        let out = g.generate(&req(RequestPurpose::Summarize, parts, 3)).unwrap();
        assert_eq!(out.text, "A b c.");
        assert_eq!(out.usage.completion_tokens, 3);
        assert_eq!(g.call_count(), 2);
    }

    #[test]
    fn unmarked_context_uses_leading_tokens() {
        let g = ScriptedGenerator::default();
        let parts = PromptParts {
            context: Some("one two three four".into()),
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Summarize, parts, 2)).unwrap();
        assert_eq!(out.text, "one two");
    }

    #[test]
    fn title_match_answers_index() {
        let g = ScriptedGenerator::default();
        let parts = PromptParts {
            profile: Some("I loved Heat and Alien.".into()),
            candidates: vec!["Fargo".into(), "Up".into(), "Alien".into(), "Big".into(), "Jaws".into()],
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Answer, parts, 20)).unwrap();
        assert_eq!(out.text, "3");
    }

    #[test]
    fn title_match_without_hit_gives_no_number() {
        let g = ScriptedGenerator::default();
        let parts = PromptParts {
            profile: Some(String::new()),
            candidates: vec!["Fargo".into(); 5],
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Answer, parts, 20)).unwrap();
        assert!(!out.text.chars().any(|c| c.is_ascii_digit()));
    }

    #[test]
    fn identify_returns_keyword_sentences() {
        let g = ScriptedGenerator::default().with_identify_keywords(vec!["title".into()]);
        let parts = PromptParts {
            context: Some("Movie 1 title: X. Movie 1 year: 1999. Movie 2 title: Y.".into()),
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Identify, parts, 100)).unwrap();
        assert_eq!(out.text, "Movie 1 title: X.\nMovie 2 title: Y.");
    }

    #[test]
    fn title_first_tokens() {
        let g = ScriptedGenerator::default().with_title(TitleRule::FirstTokens { n: 3 });
        let parts = PromptParts {
            query: Some("We study graph  neural networks.".into()),
            ..Default::default()
        };
        let out = g.generate(&req(RequestPurpose::Title, parts, 20)).unwrap();
        assert_eq!(out.text, "We study graph");
    }
}
