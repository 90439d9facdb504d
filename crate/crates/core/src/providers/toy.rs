//! Deterministic keyword-driven attention provider.
//!
//! The prompt (history + separator + task) is whitespace tokenized. Every
//! token's logit is `1 + Σ weight` over the rules whose keyword occurs in the
//! token's sentence and whose layer scope covers the requested layer. Each head
//! adds its own seeded jitter to the logits and applies a softmax.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionProvider, AttentionRequest, ProviderError};
use crate::attention::AttentionSnapshot;
use crate::context::{char_len, render_prompt, split_sentence_spans, CharIndex, Span, PROMPT_SEPARATOR};

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_LAYERS: usize = 16;
pub const DEFAULT_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keyword: String,
    pub weight: f64,
    /// Layers the rule applies to; every layer when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<BTreeSet<usize>>,
}

impl KeywordRule {
    pub fn new(keyword: impl Into<String>, weight: f64) -> Self {
        Self {
            keyword: keyword.into(),
            weight,
            layers: None,
        }
    }

    pub fn on_layers(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.layers = Some(layers.into_iter().collect());
        self
    }

    fn applies(&self, layer: usize) -> bool {
        self.layers.as_ref().is_none_or(|l| l.contains(&layer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProvider {
    pub rules: Vec<KeywordRule>,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Half-width of the uniform per-head logit jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ToyProvider {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            num_heads: DEFAULT_HEADS,
            num_layers: DEFAULT_LAYERS,
            jitter: DEFAULT_JITTER,
            seed: 0,
        }
    }
}

/// Whitespace tokens of `text` as character spans.
pub fn whitespace_token_spans(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut i = 0usize;
    for c in text.chars() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(Span::new(s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
        i += 1;
    }
    if let Some(s) = start {
        spans.push(Span::new(s, i));
    }
    spans
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl ToyProvider {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        Self {
            rules,
            ..Self::default()
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.num_heads = heads;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.num_layers = layers;
        self
    }

    /// Rejects zero heads, out-of-range jitter and bad rule weights.
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.num_heads == 0 {
            return Err(ProviderError::Config("toy provider needs at least one head".into()));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(ProviderError::Config(format!("jitter {} out of range", self.jitter)));
        }
        if let Some(r) = self
            .rules
            .iter()
            .find(|r| !r.weight.is_finite() || r.weight < 0.0)
        {
            return Err(ProviderError::Config(format!(
                "rule `{}` has negative or non-finite weight",
                r.keyword
            )));
        }
        Ok(())
    }

    /// Pre-jitter logits, one per whitespace token of the prompt.
    pub fn logits(&self, req: &AttentionRequest) -> (Vec<Span>, Vec<f64>, usize) {
        let prompt = render_prompt(&req.document, &req.task);
        let index = CharIndex::new(&prompt);
        let doc_len = char_len(&req.document);
        let task_offset = doc_len + char_len(PROMPT_SEPARATOR);

        let mut sentences = split_sentence_spans(&req.document);
        sentences.extend(
            split_sentence_spans(&req.task)
                .into_iter()
                .map(|s| Span::new(s.start + task_offset, s.end + task_offset)),
        );
        let boosts: Vec<f64> = sentences
            .iter()
            .map(|&s| {
                let text = index.slice(&prompt, s);
                self.rules
                    .iter()
                    .filter(|r| r.applies(req.layer) && !r.keyword.is_empty() && text.contains(&r.keyword))
                    .map(|r| r.weight)
                    .sum()
            })
            .collect();

        let tokens = whitespace_token_spans(&prompt);
        let mut logits = Vec::with_capacity(tokens.len());
        let mut task_tokens = 0usize;
        for t in &tokens {
            if t.start >= doc_len {
                task_tokens += 1;
            }
            let k = sentences.partition_point(|s| s.end <= t.start);
            let boost = sentences
                .get(k)
                .filter(|s| s.start < t.end)
                .map_or(0.0, |_| boosts[k]);
            logits.push(1.0 + boost);
        }
        (tokens, logits, task_tokens)
    }

    fn head_rng(&self, layer: usize, head: usize) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(layer as u64).to_le_bytes());
        seed[16..24].copy_from_slice(&(head as u64).to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }
}

impl AttentionProvider for ToyProvider {
    fn fetch_attention(&self, req: &AttentionRequest) -> Result<AttentionSnapshot, ProviderError> {
        self.validate()?;
        req.validate()?;
        if req.layer >= self.num_layers {
            return Err(ProviderError::LayerOutOfRange {
                layer: req.layer,
                num_layers: self.num_layers,
            });
        }
        let (tokens, logits, task_tokens) = self.logits(req);
        let heads = (0..self.num_heads)
            .map(|j| {
                let mut rng = self.head_rng(req.layer, j);
                let jittered: Vec<f64> = if self.jitter > 0.0 {
                    logits
                        .iter()
                        .map(|l| l + rng.random_range(-self.jitter..=self.jitter))
                        .collect()
                } else {
                    logits.clone()
                };
                softmax(&jittered)
            })
            .collect();
        Ok(AttentionSnapshot {
            layer: req.layer,
            heads,
            token_offsets: tokens,
            task_token_count: task_tokens,
        })
    }

    fn label(&self) -> String {
        format!("toy(heads={},layers={})", self.num_heads, self.num_layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::fetch_attention;

    fn req(document: &str, layer: usize) -> AttentionRequest {
        AttentionRequest {
            document: document.into(),
            task: "Predict the next item.".into(),
            layer,
        }
    }

    #[test]
    fn no_rules_is_uniform() {
        let p = ToyProvider::default().with_jitter(0.0);
        let snap = fetch_attention(&p, &req("One two. Three four five.", 0)).unwrap();
        let n = snap.num_tokens() as f64;
        assert_eq!(snap.num_heads(), DEFAULT_HEADS);
        for head in &snap.heads {
            for &w in head {
                assert!((w - 1.0 / n).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn default_jitter_stays_near_uniform() {
        let p = ToyProvider::default();
        let snap = fetch_attention(&p, &req("One two. Three four five.", 3)).unwrap();
        let n = snap.num_tokens() as f64;
        for head in &snap.heads {
            for &w in head {
                // exp(±2e-3) bounds the ratio to the uniform value.
                assert!((w * n - 1.0).abs() < 2.1e-3);
            }
        }
        assert_ne!(snap.heads[0], snap.heads[1]);
    }

    #[test]
    fn task_tokens_counted_and_offset_past_document() {
        let p = ToyProvider::default();
        let doc = "One two. Three four five.";
        let snap = fetch_attention(&p, &req(doc, 0)).unwrap();
        assert_eq!(snap.task_token_count, 4);
        assert_eq!(snap.num_tokens(), 9);
        for off in &snap.token_offsets[5..] {
            assert!(off.start >= doc.len());
        }
    }

    #[test]
    fn keyword_rule_raises_mass_by_exp_weight() {
        let p = ToyProvider::new(vec![KeywordRule::new("Monkeys", 4f64.ln())]).with_jitter(0.0);
        let snap = fetch_attention(&p, &req("Alpha beta. Twelve Monkeys here.", 0)).unwrap();
        let h = &snap.heads[0];
        assert!((h[2] / h[0] - 4.0).abs() < 1e-12);
        assert!((h[4] / h[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn layer_scope_and_range() {
        let p = ToyProvider::new(vec![KeywordRule::new("Alpha", 2.0).on_layers([1])]).with_jitter(0.0);
        let on = fetch_attention(&p, &req("Alpha beta. Gamma.", 1)).unwrap();
        let off = fetch_attention(&p, &req("Alpha beta. Gamma.", 0)).unwrap();
        assert!(on.heads[0][0] > on.heads[0][2]);
        assert_eq!(off.heads[0][0], off.heads[0][2]);
        assert!(matches!(
            fetch_attention(&p, &req("Alpha.", 16)),
            Err(ProviderError::LayerOutOfRange { layer: 16, num_layers: 16 })
        ));
    }

    #[test]
    fn deterministic() {
        let p = ToyProvider::new(vec![KeywordRule::new("beta", 1.0)]).with_seed(9);
        let a = fetch_attention(&p, &req("Alpha beta. Gamma.", 2)).unwrap();
        let b = fetch_attention(&p, &req("Alpha beta. Gamma.", 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_weight_rejected() {
        let p = ToyProvider::new(vec![KeywordRule::new("x", -1.0)]);
        assert!(matches!(
            p.fetch_attention(&req("x.", 0)),
            Err(ProviderError::Config(_))
        ));
    }
}
