//! Profile compression: the attention-guided method and its baselines.

mod cache;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{average_heads, sentence_scores, AttentionError, SentenceScores};
use crate::context::{ContextError, DatasetKind, UserContext};
use crate::marking::{
    check_alpha, mark_context, random_selection, select_important, MarkSelection, MarkingError,
    SelectionCriterion, END_MARKER, START_MARKER,
};
use crate::providers::{
    fetch_attention, generate, AttentionProvider, AttentionRequest, GenerationRequest, Generator,
    PromptParts, ProviderError, RequestPurpose, TokenCounter,
};
use crate::templates::{template_id, TemplateError, TemplateKind, TemplateSet};

pub use cache::{CacheError, CacheKey, ProfileCache, PutOutcome};

/// Paper default for the marking threshold.
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const TOKEN_LIMITS: [usize; 4] = [50, 100, 150, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AttnGs,
    Truncate,
    Direct,
    Cot,
    SelfReflect,
    RandomMark,
    MarkAll,
    PromptGs,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::AttnGs,
        Method::Truncate,
        Method::Direct,
        Method::Cot,
        Method::SelfReflect,
        Method::RandomMark,
        Method::MarkAll,
        Method::PromptGs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::AttnGs => "attn-gs",
            Method::Truncate => "truncate",
            Method::Direct => "direct",
            Method::Cot => "cot",
            Method::SelfReflect => "self-reflect",
            Method::RandomMark => "random-mark",
            Method::MarkAll => "mark-all",
            Method::PromptGs => "prompt-gs",
        }
    }

    pub fn needs_provider(&self) -> bool {
        matches!(self, Method::AttnGs | Method::RandomMark)
    }

    pub fn needs_generator(&self) -> bool {
        !matches!(self, Method::Truncate)
    }

    /// Template used for the final summarization call.
    fn summary_template(&self) -> Option<TemplateKind> {
        match self {
            Method::AttnGs | Method::RandomMark | Method::MarkAll | Method::PromptGs => {
                Some(TemplateKind::Marked)
            }
            Method::Direct => Some(TemplateKind::Direct),
            Method::Cot => Some(TemplateKind::Cot),
            Method::SelfReflect => Some(TemplateKind::ReflectRefine),
            Method::Truncate => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("user {user_id}: {source}")]
    User {
        user_id: String,
        #[source]
        source: StageError,
    },
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Marking(#[from] MarkingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Inputs of one compression run, shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub method: Method,
    pub dataset: DatasetKind,
    pub alpha: f64,
    pub layer: Option<usize>,
    pub max_tokens: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub temperature: f64,
}

impl CompressionConfig {
    pub fn new(method: Method, dataset: DatasetKind, max_tokens: usize) -> Self {
        Self {
            method,
            dataset,
            alpha: DEFAULT_ALPHA,
            layer: None,
            max_tokens,
            seed: None,
            temperature: 0.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = Some(layer);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        check_alpha(self.alpha).map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.max_tokens == 0 {
            return Err(PipelineError::Config("max_tokens must be >= 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.method.needs_provider() && self.layer.is_none() {
            return Err(PipelineError::Config(format!("{} requires a layer", self.method)));
        }
        if self.method == Method::RandomMark && self.seed.is_none() {
            return Err(PipelineError::Config("random-mark requires a seed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelLabels {
    pub marker: Option<String>,
    pub summarizer: Option<String>,
}

/// Configuration recorded with each profile. Fields the method does not use
/// are left empty so they do not split cache keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub alpha: Option<f64>,
    pub layer: Option<usize>,
    pub max_tokens: usize,
    pub seed: Option<u64>,
    pub template_id: Option<String>,
    pub models: ModelLabels,
    pub temperature: Option<f64>,
}

impl ProfileConfig {
    /// Hex SHA-256 of the canonical JSON of `(dataset, method, self)`.
    pub fn hash(&self, dataset: DatasetKind, method: Method) -> String {
        let body = serde_json::to_string(&(dataset, method, self)).expect("plain data serializes");
        hex::encode(Sha256::digest(body.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileFlag {
    /// The summary exceeded the budget and was cut.
    Overflow,
    /// The summarizer echoed marker literals, which were removed.
    MarkerLeak,
    /// Identification matched no sentence; a direct summary was used.
    PromptGsFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedProfile {
    pub user_id: String,
    pub method: Method,
    pub config: ProfileConfig,
    pub text: String,
    pub token_count: usize,
    /// Marked sentence indices, for methods that mark.
    pub audit: Vec<usize>,
    pub flags: BTreeSet<ProfileFlag>,
    pub created_at: String,
}

impl CompressedProfile {
    pub fn has_flag(&self, flag: ProfileFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enforced {
    pub text: String,
    pub overflowed: bool,
}

/// Cuts `text` after its `m`-th token when it is longer than `m` tokens.
pub fn enforce_token_limit(text: &str, m: usize, counter: &dyn TokenCounter) -> Enforced {
    if counter.count(text) <= m {
        Enforced {
            text: text.to_string(),
            overflowed: false,
        }
    } else {
        Enforced {
            text: counter.head(text, m).to_string(),
            overflowed: true,
        }
    }
}

/// Removes marker literals, repeating until none remain (removal can join
/// fragments into a new literal).
pub fn remove_marker_literals(text: &str) -> String {
    let mut s = text.to_string();
    loop {
        let next = s.replace(START_MARKER, "").replace(END_MARKER, "");
        if next == s {
            return s;
        }
        s = next;
    }
}

/// Collapses whitespace runs into single spaces and trims.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Timestamp written into profiles: `SOURCE_DATE_EPOCH` when set, else now.
pub fn default_timestamp() -> String {
    let t: DateTime<Utc> = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|s| Utc.timestamp_opt(s, 0).single())
        .unwrap_or_else(Utc::now);
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Fetches attention at `layer` and reduces it to sentence scores.
pub fn score_sentences(
    provider: &dyn AttentionProvider,
    ctx: &UserContext,
    layer: usize,
) -> Result<SentenceScores, StageError> {
    let req = AttentionRequest {
        document: ctx.document.clone(),
        task: ctx.task.clone(),
        layer,
    };
    let snap = fetch_attention(provider, &req)?;
    let tokens = average_heads(&snap)?;
    let assignment = snap.assign(ctx)?;
    Ok(sentence_scores(&tokens, &assignment)?)
}

/// Per-user seed derived from the run seed.
pub fn user_seed(seed: u64, user_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(user_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Runs compression methods against fixed components.
pub struct Compressor<'a> {
    pub provider: Option<&'a dyn AttentionProvider>,
    pub generator: Option<&'a dyn Generator>,
    pub counter: &'a dyn TokenCounter,
    pub templates: &'a TemplateSet,
    timestamp: Option<String>,
}

impl<'a> Compressor<'a> {
    pub fn new(counter: &'a dyn TokenCounter, templates: &'a TemplateSet) -> Self {
        Self {
            provider: None,
            generator: None,
            counter,
            templates,
            timestamp: None,
        }
    }

    pub fn with_provider(mut self, provider: &'a dyn AttentionProvider) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn with_generator(mut self, generator: &'a dyn Generator) -> Self {
        self.generator = Some(generator);
        self
    }

    /// Fixes `created_at` for every profile.
    pub fn with_timestamp(mut self, ts: impl Into<String>) -> Self {
        self.timestamp = Some(ts.into());
        self
    }

    /// Checks the config and that the components it needs are present.
    pub fn check(&self, cfg: &CompressionConfig) -> Result<(), PipelineError> {
        cfg.validate()?;
        if cfg.dataset != self.templates.dataset() {
            return Err(PipelineError::Config(format!(
                "templates are for {}, run is for {}",
                self.templates.dataset(),
                cfg.dataset
            )));
        }
        if cfg.method.needs_provider() && self.provider.is_none() {
            return Err(PipelineError::Config(format!("{} requires an attention provider", cfg.method)));
        }
        if cfg.method.needs_generator() && self.generator.is_none() {
            return Err(PipelineError::Config(format!("{} requires a generator", cfg.method)));
        }
        Ok(())
    }

    /// The configuration snapshot stored with profiles of `cfg`.
    pub fn profile_config(&self, cfg: &CompressionConfig) -> ProfileConfig {
        let m = cfg.method;
        let uses_threshold = m.needs_provider();
        ProfileConfig {
            alpha: uses_threshold.then_some(cfg.alpha),
            layer: if uses_threshold { cfg.layer } else { None },
            max_tokens: cfg.max_tokens,
            seed: if m == Method::RandomMark { cfg.seed } else { None },
            template_id: m.summary_template().map(|k| template_id(cfg.dataset, k)),
            models: ModelLabels {
                marker: if uses_threshold { self.provider.map(|p| p.label()) } else { None },
                summarizer: if m.needs_generator() { self.generator.map(|g| g.label()) } else { None },
            },
            temperature: m.needs_generator().then_some(cfg.temperature),
        }
    }

    pub fn cache_key(&self, user_id: &str, cfg: &CompressionConfig) -> CacheKey {
        CacheKey {
            user_id: user_id.to_string(),
            method: cfg.method,
            config_hash: self.profile_config(cfg).hash(cfg.dataset, cfg.method),
        }
    }

    /// Compresses one user's context with `cfg.method`.
    pub fn compress(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<CompressedProfile, PipelineError> {
        self.check(cfg)?;
        if cfg.method == Method::AttnGs {
            self.compress_attn_gs(ctx, cfg)
        } else {
            self.compress_baseline(ctx, cfg)
        }
    }

    /// Compresses many users on at most `jobs` threads. Output order follows
    /// input order.
    pub fn compress_all(
        &self,
        contexts: &[&UserContext],
        cfg: &CompressionConfig,
        jobs: usize,
    ) -> Result<Vec<Result<CompressedProfile, PipelineError>>, PipelineError> {
        self.check(cfg)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(pool.install(|| contexts.par_iter().map(|c| self.compress(c, cfg)).collect()))
    }

    pub fn compress_attn_gs(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<CompressedProfile, PipelineError> {
        if cfg.method != Method::AttnGs {
            return Err(PipelineError::Config(format!("expected attn-gs, got {}", cfg.method)));
        }
        self.check(cfg)?;
        self.run(ctx, cfg).map_err(|source| user_err(ctx, source))
    }

    pub fn compress_baseline(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<CompressedProfile, PipelineError> {
        if cfg.method == Method::AttnGs {
            return Err(PipelineError::Config("attn-gs is not a baseline".into()));
        }
        self.check(cfg)?;
        self.run(ctx, cfg).map_err(|source| user_err(ctx, source))
    }

    fn run(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<CompressedProfile, StageError> {
        let mut flags = BTreeSet::new();
        let mut audit = Vec::new();
        let raw = match cfg.method {
            Method::Truncate => self.counter.tail(&ctx.document, cfg.max_tokens).to_string(),
            Method::Direct => self.summarize_plain(ctx, cfg, TemplateKind::Direct)?,
            Method::Cot => self.summarize_plain(ctx, cfg, TemplateKind::Cot)?,
            Method::SelfReflect => self.self_reflect(ctx, cfg)?,
            Method::AttnGs | Method::RandomMark | Method::MarkAll => {
                let sel = self.selection(ctx, cfg)?;
                audit = sel.indices();
                self.summarize_marked(ctx, cfg, &sel)?
            }
            Method::PromptGs => match self.identify(ctx, cfg)? {
                Some(sel) => {
                    audit = sel.indices();
                    self.summarize_marked(ctx, cfg, &sel)?
                }
                None => {
                    log::warn!("user {}: identification matched no sentence, using a direct summary", ctx.user_id);
                    flags.insert(ProfileFlag::PromptGsFallback);
                    self.summarize_plain(ctx, cfg, TemplateKind::Direct)?
                }
            },
        };
        let clean = remove_marker_literals(&raw);
        if clean != raw {
            flags.insert(ProfileFlag::MarkerLeak);
        }
        let enforced = enforce_token_limit(clean.trim(), cfg.max_tokens, self.counter);
        if enforced.overflowed {
            flags.insert(ProfileFlag::Overflow);
        }
        Ok(CompressedProfile {
            user_id: ctx.user_id.clone(),
            method: cfg.method,
            config: self.profile_config(cfg),
            token_count: self.counter.count(&enforced.text),
            text: enforced.text,
            audit,
            flags,
            created_at: self.timestamp.clone().unwrap_or_else(default_timestamp),
        })
    }

    fn threshold_selection(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<MarkSelection, StageError> {
        let provider = self.provider.expect("checked");
        let layer = cfg.layer.expect("checked");
        let scores = score_sentences(provider, ctx, layer)?;
        Ok(select_important(&scores, cfg.alpha)?)
    }

    fn selection(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<MarkSelection, StageError> {
        match cfg.method {
            Method::AttnGs => self.threshold_selection(ctx, cfg),
            Method::RandomMark => {
                let k = self.threshold_selection(ctx, cfg)?.len();
                let seed = user_seed(cfg.seed.expect("checked"), &ctx.user_id);
                Ok(random_selection(ctx, k, seed)?)
            }
            Method::MarkAll => Ok(MarkSelection::all(ctx)),
            m => unreachable!("{m} does not select by score"),
        }
    }

    fn generate(
        &self,
        system: String,
        user: String,
        cfg: &CompressionConfig,
        purpose: RequestPurpose,
        parts: PromptParts,
        max_tokens: usize,
    ) -> Result<String, StageError> {
        let g = self.generator.expect("checked");
        let req = GenerationRequest {
            system,
            user,
            max_tokens,
            temperature: cfg.temperature,
            model: String::new(),
            purpose,
            parts,
        };
        Ok(generate(g, &req)?.text)
    }

    fn system_prompt(&self, kind: TemplateKind, cfg: &CompressionConfig, extra: &[(&str, &str)]) -> Result<String, StageError> {
        let m = cfg.max_tokens.to_string();
        let mut vars = vec![("max_tokens", m.as_str())];
        vars.extend_from_slice(extra);
        Ok(self.templates.get(kind).render(&vars)?)
    }

    fn summarize_plain(&self, ctx: &UserContext, cfg: &CompressionConfig, kind: TemplateKind) -> Result<String, StageError> {
        let system = self.system_prompt(kind, cfg, &[])?;
        let parts = PromptParts {
            context: Some(ctx.document.clone()),
            ..Default::default()
        };
        self.generate(system, ctx.document.clone(), cfg, RequestPurpose::Summarize, parts, cfg.max_tokens)
    }

    fn summarize_marked(&self, ctx: &UserContext, cfg: &CompressionConfig, sel: &MarkSelection) -> Result<String, StageError> {
        let marked = mark_context(sel, ctx)?;
        let system = self.system_prompt(TemplateKind::Marked, cfg, &[])?;
        let parts = PromptParts {
            context: Some(marked.text.clone()),
            ..Default::default()
        };
        self.generate(system, marked.text, cfg, RequestPurpose::Summarize, parts, cfg.max_tokens)
    }

    fn self_reflect(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<String, StageError> {
        let initial = self.summarize_plain(ctx, cfg, TemplateKind::ReflectInitial)?;
        let system = self.system_prompt(TemplateKind::ReflectRefine, cfg, &[("initial_summary", &initial)])?;
        let parts = PromptParts {
            context: Some(ctx.document.clone()),
            previous: Some(initial),
            ..Default::default()
        };
        self.generate(system, ctx.document.clone(), cfg, RequestPurpose::Refine, parts, cfg.max_tokens)
    }

    /// Asks the generator for important sentences and matches its lines to
    /// context sentences after whitespace normalization.
    fn identify(&self, ctx: &UserContext, cfg: &CompressionConfig) -> Result<Option<MarkSelection>, StageError> {
        let user = self.templates.get(TemplateKind::Identify).render(&[
            ("context", &ctx.document),
            ("task_description", &ctx.task),
        ])?;
        let parts = PromptParts {
            context: Some(ctx.document.clone()),
            ..Default::default()
        };
        let budget = self.counter.count(&ctx.document).max(1);
        let out = self.generate(String::new(), user, cfg, RequestPurpose::Identify, parts, budget)?;
        Ok(match_identified(ctx, &out))
    }
}

fn user_err(ctx: &UserContext, source: StageError) -> PipelineError {
    PipelineError::User {
        user_id: ctx.user_id.clone(),
        source,
    }
}

/// Sentences whose normalized text equals a normalized output line.
pub fn match_identified(ctx: &UserContext, output: &str) -> Option<MarkSelection> {
    let mut selected = BTreeSet::new();
    for line in output.lines() {
        let norm = normalize_ws(line);
        if norm.is_empty() {
            continue;
        }
        let hits: Vec<usize> = ctx
            .sentences
            .iter()
            .filter(|s| normalize_ws(&s.text) == norm)
            .map(|s| s.index)
            .collect();
        if hits.is_empty() {
            log::debug!("user {}: dropping unmatched line {norm:?}", ctx.user_id);
        }
        selected.extend(hits);
    }
    (!selected.is_empty()).then_some(MarkSelection {
        selected,
        criterion: SelectionCriterion::Identified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::scripted::ScriptedGenerator;
    use crate::providers::toy::{KeywordRule, ToyProvider};
    use crate::providers::WhitespaceCounter;

    fn ctx() -> UserContext {
        UserContext::from_sentences(
            "u7",
            [
                ("Alpha one two.", "a"),
                ("Bravo three four.", "b"),
                ("Charlie five KEY.", "c"),
                ("Delta six seven.", "d"),
                ("Echo eight KEY.", "e"),
            ],
            "Predict.",
        )
        .unwrap()
    }

    fn cfg(method: Method) -> CompressionConfig {
        CompressionConfig::new(method, DatasetKind::Selection, 50)
            .with_layer(3)
            .with_seed(11)
    }

    struct Parts {
        provider: ToyProvider,
        generator: ScriptedGenerator,
        templates: TemplateSet,
    }

    fn parts() -> Parts {
        Parts {
            provider: ToyProvider::new(vec![KeywordRule::new("KEY", 3.0)]),
            generator: ScriptedGenerator::default().with_identify_keywords(vec!["Bravo".into()]),
            templates: TemplateSet::builtin(DatasetKind::Selection),
        }
    }

    fn compressor(p: &Parts) -> Compressor<'_> {
        Compressor::new(&WhitespaceCounter, &p.templates)
            .with_provider(&p.provider)
            .with_generator(&p.generator)
            .with_timestamp("2025-01-01T00:00:00Z")
    }

    #[test]
    fn attn_gs_marks_planted_sentences() {
        let p = parts();
        let out = compressor(&p).compress(&ctx(), &cfg(Method::AttnGs)).unwrap();
        assert_eq!(out.audit, vec![2, 4]);
        assert_eq!(out.text, "Charlie five KEY. Echo eight KEY.");
        assert_eq!(out.token_count, 6);
        assert_eq!(out.config.alpha, Some(0.2));
        assert_eq!(out.config.template_id.as_deref(), Some("selection/marked"));
        assert!(out.flags.is_empty());
    }

    #[test]
    fn truncate_takes_tail_without_generator() {
        let templates = TemplateSet::builtin(DatasetKind::Selection);
        let c = Compressor::new(&WhitespaceCounter, &templates);
        let mut cf = cfg(Method::Truncate);
        cf.max_tokens = 4;
        let out = c.compress(&ctx(), &cf).unwrap();
        assert_eq!(out.text, "seven. Echo eight KEY.");
        cf.max_tokens = 100;
        assert_eq!(c.compress(&ctx(), &cf).unwrap().text, ctx().document);
    }

    #[test]
    fn self_reflect_calls_twice() {
        let p = parts();
        compressor(&p).compress(&ctx(), &cfg(Method::SelfReflect)).unwrap();
        assert_eq!(p.generator.calls(), vec![RequestPurpose::Summarize, RequestPurpose::Refine]);
    }

    #[test]
    fn random_mark_matches_attn_gs_size() {
        let p = parts();
        let c = compressor(&p);
        let a = c.compress(&ctx(), &cfg(Method::AttnGs)).unwrap();
        let r = c.compress(&ctx(), &cfg(Method::RandomMark)).unwrap();
        assert_eq!(a.audit.len(), r.audit.len());
        let all = c.compress(&ctx(), &cfg(Method::MarkAll)).unwrap();
        assert_eq!(all.audit, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn prompt_gs_marks_identified_and_falls_back() {
        let p = parts();
        let out = compressor(&p).compress(&ctx(), &cfg(Method::PromptGs)).unwrap();
        assert_eq!(out.audit, vec![1]);
        assert_eq!(out.text, "Bravo three four.");

        let p = Parts {
            generator: ScriptedGenerator::default(),
            ..parts()
        };
        let out = compressor(&p).compress(&ctx(), &cfg(Method::PromptGs)).unwrap();
        assert!(out.has_flag(ProfileFlag::PromptGsFallback));
        assert!(out.audit.is_empty());
    }

    #[test]
    fn identified_lines_match_after_whitespace_normalization() {
        let sel = match_identified(&ctx(), "  Delta  six\tseven. \nnot a sentence\nAlpha one two.").unwrap();
        assert_eq!(sel.indices(), vec![0, 3]);
        assert!(match_identified(&ctx(), "Delta six seven").is_none());
    }

    #[test]
    fn enforcement() {
        let c = WhitespaceCounter;
        let forty = vec!["w"; 40].join(" ");
        assert_eq!(enforce_token_limit(&forty, 50, &c), Enforced { text: forty.clone(), overflowed: false });
        let sixty = vec!["w"; 60].join(" ");
        let e = enforce_token_limit(&sixty, 50, &c);
        assert!(e.overflowed);
        assert_eq!(c.count(&e.text), 50);
    }

    #[test]
    fn marker_literals_removed_to_fixed_point() {
        assert_eq!(remove_marker_literals("a<START_IMPORTANT>b<END_IMPORTANT>"), "ab");
        assert_eq!(remove_marker_literals("<START_<END_IMPORTANT>IMPORTANT>x"), "x");
    }

    #[test]
    fn config_validation() {
        let p = parts();
        let c = compressor(&p);
        assert!(matches!(c.compress(&ctx(), &cfg(Method::AttnGs).with_alpha(1.5)), Err(PipelineError::Config(_))));
        let mut no_layer = cfg(Method::AttnGs);
        no_layer.layer = None;
        assert!(matches!(c.compress(&ctx(), &no_layer), Err(PipelineError::Config(_))));
        let mut no_seed = cfg(Method::RandomMark);
        no_seed.seed = None;
        assert!(matches!(c.compress(&ctx(), &no_seed), Err(PipelineError::Config(_))));
        let templates = TemplateSet::builtin(DatasetKind::Selection);
        let bare = Compressor::new(&WhitespaceCounter, &templates);
        assert!(matches!(bare.compress(&ctx(), &cfg(Method::Direct)), Err(PipelineError::Config(_))));
    }

    #[test]
    fn provider_errors_carry_user_id() {
        let p = parts();
        let err = compressor(&p).compress(&ctx(), &cfg(Method::AttnGs).with_layer(99)).unwrap_err();
        assert!(err.to_string().starts_with("user u7:"), "{err}");
    }

    #[test]
    fn unused_fields_do_not_split_keys() {
        let p = parts();
        let c = compressor(&p);
        let a = c.cache_key("u", &cfg(Method::Truncate));
        let b = c.cache_key("u", &cfg(Method::Truncate).with_alpha(0.9).with_layer(1));
        assert_eq!(a, b);
        let a = c.cache_key("u", &cfg(Method::AttnGs));
        let b = c.cache_key("u", &cfg(Method::AttnGs).with_alpha(0.3));
        assert_ne!(a, b);
    }

    #[test]
    fn timestamp_honours_source_date_epoch_format() {
        let ts = default_timestamp();
        assert!(DateTime::parse_from_rfc3339(&ts).is_ok());
    }
}
