//! Downstream scoring of compressed profiles, method × limit grids,
//! ablations and attention reports.

pub mod rouge;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::signal_scores;
use crate::context::{DatasetKind, TaskInstance, UserContext};
use crate::pipeline::{
    score_sentences, CacheError, CompressedProfile, CompressionConfig, Compressor, Method,
    PipelineError, ProfileCache, StageError,
};
use crate::providers::{
    generate, AttentionProvider, GenerationRequest, Generator, PromptParts, ProviderError,
    RequestPurpose, TokenCounter,
};
use crate::templates::{TemplateError, TemplateKind, TemplateSet};

pub use rouge::{lcs_len, rouge_l, rouge_l_tokens, rouge_tokens, RougeScore};

pub const FULL_CONTEXT: &str = "full-context";
pub const NO_CONTEXT: &str = "no-context";

/// Output budget for a selection answer.
const ANSWER_TOKENS: usize = 16;
/// Output budget for a generated title.
const TITLE_TOKENS: usize = 32;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("task is {found}, expected {expected}")]
    TaskKind { expected: DatasetKind, found: DatasetKind },
    #[error(transparent)]
    Generator(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("user {user_id}: {source}")]
    User {
        user_id: String,
        #[source]
        source: StageError,
    },
    #[error("csv: {0}")]
    Csv(String),
}

fn csv_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Csv(e.to_string())
}

/// First integer in `text`, mapped from 1-based to 0-based when it names one of
/// `n` candidates.
pub fn parse_answer(text: &str, n: usize) -> Option<usize> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    let v: usize = digits.parse().ok()?;
    (1..=n).contains(&v).then(|| v - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub correct: bool,
    pub parse_failure: bool,
}

/// Score of one instance on the dataset's metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub score: f64,
    pub parse_failure: bool,
}

pub fn numbered_candidates(candidates: &[String]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Scores profiles against downstream tasks with one fixed inference template.
pub struct Evaluator<'a> {
    pub generator: &'a dyn Generator,
    pub templates: &'a TemplateSet,
    pub temperature: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(generator: &'a dyn Generator, templates: &'a TemplateSet) -> Self {
        Self {
            generator,
            templates,
            temperature: 0.0,
        }
    }

    fn request(&self, user: String, purpose: RequestPurpose, parts: PromptParts, max_tokens: usize) -> GenerationRequest {
        GenerationRequest {
            system: String::new(),
            user,
            max_tokens,
            temperature: self.temperature,
            model: String::new(),
            purpose,
            parts,
        }
    }

    pub fn eval_selection(&self, profile: &str, task: &TaskInstance) -> Result<SelectionOutcome, EvalError> {
        let TaskInstance::Selection { candidates, gold_index } = task else {
            return Err(EvalError::TaskKind {
                expected: DatasetKind::Selection,
                found: task.kind(),
            });
        };
        let listed = numbered_candidates(candidates);
        let user = self
            .templates
            .get(TemplateKind::Infer)
            .render(&[("profile", profile), ("candidates", &listed)])?;
        let parts = PromptParts {
            profile: Some(profile.to_string()),
            candidates: candidates.clone(),
            ..Default::default()
        };
        let out = generate(self.generator, &self.request(user, RequestPurpose::Answer, parts, ANSWER_TOKENS))?;
        Ok(match parse_answer(&out.text, candidates.len()) {
            Some(i) => SelectionOutcome {
                correct: i == *gold_index,
                parse_failure: false,
            },
            None => SelectionOutcome {
                correct: false,
                parse_failure: true,
            },
        })
    }

    pub fn eval_generation(&self, profile: &str, task: &TaskInstance) -> Result<RougeScore, EvalError> {
        let TaskInstance::Generation { query, gold_title } = task else {
            return Err(EvalError::TaskKind {
                expected: DatasetKind::Generation,
                found: task.kind(),
            });
        };
        let user = self
            .templates
            .get(TemplateKind::Infer)
            .render(&[("profile", profile), ("query", query)])?;
        let parts = PromptParts {
            profile: Some(profile.to_string()),
            query: Some(query.clone()),
            ..Default::default()
        };
        let out = generate(self.generator, &self.request(user, RequestPurpose::Title, parts, TITLE_TOKENS))?;
        Ok(rouge_l(gold_title, &out.text))
    }

    /// Accuracy (0 or 1) for selection, ROUGE-L F1 for generation.
    pub fn eval(&self, profile: &str, task: &TaskInstance) -> Result<Outcome, EvalError> {
        match task {
            TaskInstance::Selection { .. } => {
                let o = self.eval_selection(profile, task)?;
                Ok(Outcome {
                    score: if o.correct { 1.0 } else { 0.0 },
                    parse_failure: o.parse_failure,
                })
            }
            TaskInstance::Generation { .. } => Ok(Outcome {
                score: self.eval_generation(profile, task)?.f1,
                parse_failure: false,
            }),
        }
    }
}

pub fn metric_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Selection => "accuracy",
        DatasetKind::Generation => "rouge_l_f1",
    }
}

/// Supplies profiles for a batch of users under one configuration.
pub trait ProfileSource: Sync {
    /// One entry per context, in order; `None` when no profile is available.
    fn profiles(&self, contexts: &[&UserContext], cfg: &CompressionConfig) -> Result<Vec<Option<CompressedProfile>>, EvalError>;
}

/// Reads profiles from an optional cache and computes the rest when allowed.
/// New profiles are written to the cache in input order.
pub struct PipelineSource<'a> {
    pub compressor: &'a Compressor<'a>,
    pub cache: Option<&'a ProfileCache>,
    pub compute: bool,
    pub jobs: usize,
}

impl ProfileSource for PipelineSource<'_> {
    fn profiles(&self, contexts: &[&UserContext], cfg: &CompressionConfig) -> Result<Vec<Option<CompressedProfile>>, EvalError> {
        let mut out = Vec::with_capacity(contexts.len());
        let mut todo = Vec::new();
        for (i, ctx) in contexts.iter().enumerate() {
            let hit = match self.cache {
                Some(c) => c.get(&self.compressor.cache_key(&ctx.user_id, cfg))?,
                None => None,
            };
            if hit.is_none() && self.compute {
                todo.push(i);
            }
            out.push(hit);
        }
        if todo.is_empty() {
            return Ok(out);
        }
        let batch: Vec<&UserContext> = todo.iter().map(|&i| contexts[i]).collect();
        let computed = self.compressor.compress_all(&batch, cfg, self.jobs)?;
        for (i, res) in todo.into_iter().zip(computed) {
            let p = res?;
            if let Some(c) = self.cache {
                c.put(&self.compressor.cache_key(&p.user_id, cfg), &p)?;
            }
            out[i] = Some(p);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub token_limit: Option<usize>,
    pub model: String,
    /// Mean metric; absent when any profile of the row is missing.
    pub metric: Option<f64>,
    pub n: usize,
    pub parse_failures: usize,
    /// Users without a profile.
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: DatasetKind,
    pub metric: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    token_limit: Option<usize>,
    metric: Option<f64>,
    n: usize,
    parse_failures: usize,
}

impl ReportTable {
    pub fn new(meta: ReportMeta) -> Self {
        Self { meta, rows: Vec::new() }
    }

    /// Adds a row; a second row with the same (method, limit, model) is an
    /// error.
    pub fn push(&mut self, row: ReportRow) -> Result<(), EvalError> {
        if self.get(&row.method, row.token_limit, &row.model).is_some() {
            return Err(EvalError::Config(format!(
                "duplicate report row {} @ {:?} ({})",
                row.method, row.token_limit, row.model
            )));
        }
        if let Some(m) = row.metric {
            if !(0.0..=1.0).contains(&m) {
                return Err(EvalError::Config(format!("metric {m} outside [0, 1]")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, method: &str, token_limit: Option<usize>, model: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.token_limit == token_limit && r.model == model)
    }

    pub fn metric(&self, method: &str, token_limit: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.token_limit == token_limit)
            .and_then(|r| r.metric)
    }

    pub fn missing(&self) -> impl Iterator<Item = (&ReportRow, &str)> {
        self.rows
            .iter()
            .flat_map(|r| r.missing.iter().map(move |u| (r, u.as_str())))
    }

    /// `method,token_limit,metric,n,parse_failures`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(CsvRow {
                method: &r.method,
                token_limit: r.token_limit,
                metric: r.metric,
                n: r.n,
                parse_failures: r.parse_failures,
            })
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(csv_err)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))
}

/// Hex SHA-256 of a serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let body = serde_json::to_string(cfg).expect("plain data serializes");
    hex::encode(Sha256::digest(body.as_bytes()))
}

struct Scored {
    metric: Option<f64>,
    n: usize,
    parse_failures: usize,
}

fn score_profiles(
    evaluator: &Evaluator<'_>,
    items: &[(UserContext, TaskInstance)],
    profiles: &[Option<String>],
    jobs: usize,
) -> Result<Scored, EvalError> {
    let outcomes: Vec<Option<Outcome>> = pool(jobs)?.install(|| {
        items
            .par_iter()
            .zip(profiles)
            .map(|((_, task), p)| p.as_deref().map(|p| evaluator.eval(p, task)).transpose())
            .collect::<Result<_, _>>()
    })?;
    let present: Vec<Outcome> = outcomes.iter().flatten().copied().collect();
    let complete = present.len() == items.len();
    Ok(Scored {
        metric: (complete && !present.is_empty())
            .then(|| present.iter().map(|o| o.score).sum::<f64>() / present.len() as f64),
        n: present.len(),
        parse_failures: present.iter().filter(|o| o.parse_failure).count(),
    })
}

/// Evaluation grid over methods and limits, plus full-context and
/// no-context reference rows. `base` supplies every setting except method and
/// limit.
pub fn run_grid(
    items: &[(UserContext, TaskInstance)],
    methods: &[Method],
    limits: &[usize],
    base: &CompressionConfig,
    source: &dyn ProfileSource,
    evaluator: &Evaluator<'_>,
    jobs: usize,
) -> Result<ReportTable, EvalError> {
    let mut table = ReportTable::new(ReportMeta {
        dataset: base.dataset,
        metric: metric_name(base.dataset).to_string(),
        seed: base.seed,
        config_hash: config_hash(&(base, methods, limits)),
    });
    let contexts: Vec<&UserContext> = items.iter().map(|(c, _)| c).collect();
    let model = evaluator.generator.label();
    for &method in methods {
        for &limit in limits {
            let cfg = CompressionConfig {
                method,
                max_tokens: limit,
                ..base.clone()
            };
            let profiles = source.profiles(&contexts, &cfg)?;
            let missing: Vec<String> = contexts
                .iter()
                .zip(&profiles)
                .filter(|(_, p)| p.is_none())
                .map(|(c, _)| c.user_id.clone())
                .collect();
            if !missing.is_empty() {
                log::warn!("{method} @ {limit}: {} profiles missing", missing.len());
            }
            let texts: Vec<Option<String>> = profiles.into_iter().map(|p| p.map(|p| p.text)).collect();
            let s = score_profiles(evaluator, items, &texts, jobs)?;
            table.push(ReportRow {
                method: method.to_string(),
                token_limit: Some(limit),
                model: model.clone(),
                metric: s.metric,
                n: s.n,
                parse_failures: s.parse_failures,
                missing,
            })?;
        }
    }
    for (label, text) in [(FULL_CONTEXT, None), (NO_CONTEXT, Some(""))] {
        let texts: Vec<Option<String>> = items
            .iter()
            .map(|(c, _)| Some(text.map_or_else(|| c.document.clone(), str::to_string)))
            .collect();
        let s = score_profiles(evaluator, items, &texts, jobs)?;
        table.push(ReportRow {
            method: label.to_string(),
            token_limit: None,
            model: model.clone(),
            metric: s.metric,
            n: s.n,
            parse_failures: s.parse_failures,
            missing: Vec::new(),
        })?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationParam {
    Alpha,
    Layer,
}

impl std::str::FromStr for AblationParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(AblationParam::Alpha),
            "layer" => Ok(AblationParam::Layer),
            other => Err(format!("unknown ablation parameter `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub x: f64,
    pub metric: Option<f64>,
    pub n: usize,
    /// Mean number of marked sentences per profile.
    pub mean_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub param: AblationParam,
    pub meta: ReportMeta,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `x,metric,n,mean_selected`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(r).map_err(csv_err)?;
        }
        wtr.flush().map_err(csv_err)
    }
}

/// Sweeps one marking parameter with everything else in `base` held fixed.
pub fn ablate(
    param: AblationParam,
    values: &[f64],
    items: &[(UserContext, TaskInstance)],
    base: &CompressionConfig,
    source: &dyn ProfileSource,
    evaluator: &Evaluator<'_>,
    jobs: usize,
) -> Result<AblationTable, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("no ablation values".into()));
    }
    let contexts: Vec<&UserContext> = items.iter().map(|(c, _)| c).collect();
    let mut rows = Vec::with_capacity(values.len());
    for &x in values {
        let mut cfg = base.clone();
        match param {
            AblationParam::Alpha => cfg.alpha = x,
            AblationParam::Layer => {
                if x < 0.0 || x.fract() != 0.0 {
                    return Err(EvalError::Config(format!("layer {x} is not a non-negative integer")));
                }
                cfg.layer = Some(x as usize);
            }
        }
        cfg.validate()?;
        let profiles = source.profiles(&contexts, &cfg)?;
        let present: Vec<&CompressedProfile> = profiles.iter().flatten().collect();
        let mean_selected = if present.is_empty() {
            0.0
        } else {
            present.iter().map(|p| p.audit.len()).sum::<usize>() as f64 / present.len() as f64
        };
        let texts: Vec<Option<String>> = profiles.iter().map(|p| p.as_ref().map(|p| p.text.clone())).collect();
        let s = score_profiles(evaluator, items, &texts, jobs)?;
        rows.push(AblationRow {
            x,
            metric: s.metric,
            n: s.n,
            mean_selected,
        });
    }
    Ok(AblationTable {
        param,
        meta: ReportMeta {
            dataset: base.dataset,
            metric: metric_name(base.dataset).to_string(),
            seed: base.seed,
            config_hash: config_hash(&(base, param, values)),
        },
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalReportRow {
    pub layer: usize,
    pub signal_label: String,
    /// Per-user signal score averaged over users that carry the label.
    pub mean_score: f64,
    /// Scored sentences with the label, summed over users.
    pub sentence_count: usize,
}

/// Per-layer, per-label mean attention across users, ordered by layer then
/// label.
pub fn signal_report(
    contexts: &[&UserContext],
    layers: &[usize],
    provider: &dyn AttentionProvider,
    jobs: usize,
) -> Result<Vec<SignalReportRow>, EvalError> {
    let pool = pool(jobs)?;
    let mut rows = Vec::new();
    for &layer in layers {
        let per_user = pool.install(|| {
            contexts
                .par_iter()
                .map(|ctx| {
                    score_sentences(provider, ctx, layer)
                        .map(|s| signal_scores(&s, ctx))
                        .map_err(|source| EvalError::User {
                            user_id: ctx.user_id.clone(),
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let mut acc: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
        for sig in &per_user {
            for (label, &score) in &sig.scores {
                let e = acc.entry(label.clone()).or_default();
                e.0 += score;
                e.1 += 1;
                e.2 += sig.sentence_counts[label];
            }
        }
        rows.extend(acc.into_iter().map(|(label, (sum, users, sentences))| SignalReportRow {
            layer,
            signal_label: label,
            mean_score: sum / users as f64,
            sentence_count: sentences,
        }));
    }
    Ok(rows)
}

/// `layer,signal_label,mean_score,sentence_count`.
pub fn write_signal_report<W: Write>(w: W, rows: &[SignalReportRow]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub method: String,
    /// Smallest limit reaching the target; `None` when never reached.
    pub tokens: Option<usize>,
    /// `tokens` as a percentage of the mean full-context length.
    pub percentage: Option<f64>,
}

/// Smallest evaluated limit per method whose metric reaches `target`.
pub fn token_efficiency(
    table: &ReportTable,
    methods: &[Method],
    target: f64,
    full_context_tokens: f64,
) -> Vec<EfficiencyRow> {
    methods
        .iter()
        .map(|m| {
            let name = m.to_string();
            let mut limits: Vec<(usize, f64)> = table
                .rows
                .iter()
                .filter(|r| r.method == name)
                .filter_map(|r| Some((r.token_limit?, r.metric?)))
                .collect();
            limits.sort_by_key(|(l, _)| *l);
            let tokens = limits.iter().find(|(_, v)| *v >= target).map(|(l, _)| *l);
            EfficiencyRow {
                method: name,
                tokens,
                percentage: tokens
                    .filter(|_| full_context_tokens > 0.0)
                    .map(|t| 100.0 * t as f64 / full_context_tokens),
            }
        })
        .collect()
}

/// Mean token count of the raw documents.
pub fn mean_document_tokens(items: &[(UserContext, TaskInstance)], counter: &dyn TokenCounter) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(|(c, _)| counter.count(&c.document)).sum::<usize>() as f64 / items.len() as f64
}

#[derive(Serialize)]
struct EfficiencyCsv<'a> {
    method: &'a str,
    tokens: String,
    percentage: Option<f64>,
}

/// `method,tokens,percentage`, with `not reached` in place of a count.
pub fn write_efficiency<W: Write>(w: W, rows: &[EfficiencyRow]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(EfficiencyCsv {
            method: &r.method,
            tokens: r.tokens.map_or_else(|| "not reached".to_string(), |t| t.to_string()),
            percentage: r.percentage,
        })
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::scripted::{ScriptedGenerator, SelectionRule, TitleRule};

    fn selection_task(gold: usize) -> TaskInstance {
        TaskInstance::selection(
            ["Alien", "Heat", "Fargo", "Up", "Jaws"].map(String::from).to_vec(),
            gold,
        )
        .unwrap()
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_answer("3", 5), Some(2));
        assert_eq!(parse_answer("The answer is 5.", 5), Some(4));
        assert_eq!(parse_answer("12", 5), None);
        assert_eq!(parse_answer("0", 5), None);
        assert_eq!(parse_answer("none", 5), None);
        assert_eq!(parse_answer("Movie 2 then 4", 5), Some(1));
    }

    #[test]
    fn selection_with_title_match() {
        let g = ScriptedGenerator::default();
        let t = TemplateSet::builtin(DatasetKind::Selection);
        let e = Evaluator::new(&g, &t);
        let ok = e.eval_selection("I watched Fargo twice.", &selection_task(2)).unwrap();
        assert_eq!(ok, SelectionOutcome { correct: true, parse_failure: false });
        let wrong = e.eval_selection("I watched Fargo twice.", &selection_task(0)).unwrap();
        assert!(!wrong.correct && !wrong.parse_failure);
        let empty = e.eval_selection("", &selection_task(0)).unwrap();
        assert_eq!(empty, SelectionOutcome { correct: false, parse_failure: true });
    }

    #[test]
    fn generation_scores() {
        let t = TemplateSet::builtin(DatasetKind::Generation);
        let task = TaskInstance::generation("Deep nets for graphs are studied.".into(), "Graph Nets".into()).unwrap();
        let echo = ScriptedGenerator::default().with_title(TitleRule::Fixed { text: "Graph Nets".into() });
        assert_eq!(Evaluator::new(&echo, &t).eval_generation("p", &task).unwrap().f1, 1.0);
        let empty = ScriptedGenerator::default().with_title(TitleRule::Fixed { text: String::new() });
        assert_eq!(Evaluator::new(&empty, &t).eval_generation("p", &task).unwrap().f1, 0.0);
        let g = ScriptedGenerator::default();
        assert!(matches!(
            Evaluator::new(&g, &t).eval_generation("p", &selection_task(0)),
            Err(EvalError::TaskKind { .. })
        ));
    }

    #[test]
    fn uniform_random_is_deterministic() {
        let g = ScriptedGenerator::default().with_selection(SelectionRule::UniformRandom { seed: 4 });
        let t = TemplateSet::builtin(DatasetKind::Selection);
        let e = Evaluator::new(&g, &t);
        let a = e.eval_selection("x", &selection_task(1)).unwrap();
        let b = e.eval_selection("x", &selection_task(1)).unwrap();
        assert_eq!(a, b);
        assert!(!a.parse_failure);
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            dataset: DatasetKind::Selection,
            metric: "accuracy".into(),
            seed: None,
            config_hash: "h".into(),
        }
    }

    fn row(method: &str, limit: Option<usize>, metric: Option<f64>) -> ReportRow {
        ReportRow {
            method: method.into(),
            token_limit: limit,
            model: "m".into(),
            metric,
            n: 10,
            parse_failures: 1,
            missing: vec![],
        }
    }

    #[test]
    fn report_rejects_duplicates_and_writes_csv() {
        let mut t = ReportTable::new(meta());
        t.push(row("attn-gs", Some(50), Some(0.5))).unwrap();
        assert!(t.push(row("attn-gs", Some(50), Some(0.6))).is_err());
        assert!(t.push(row("truncate", Some(50), Some(1.5))).is_err());
        t.push(row(FULL_CONTEXT, None, None)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,token_limit,metric,n,parse_failures\nattn-gs,50,0.5,10,1\nfull-context,,,10,1\n"
        );
    }

    #[test]
    fn efficiency_picks_smallest_reaching_limit() {
        let mut t = ReportTable::new(meta());
        for (m, l, v) in [("attn-gs", 50, 0.3), ("attn-gs", 100, 0.5), ("attn-gs", 150, 0.6), ("truncate", 50, 0.1), ("truncate", 200, 0.2)] {
            t.push(row(m, Some(l), Some(v))).unwrap();
        }
        let rows = token_efficiency(&t, &[Method::AttnGs, Method::Truncate], 0.45, 1000.0);
        assert_eq!(rows[0].tokens, Some(100));
        assert_eq!(rows[0].percentage, Some(10.0));
        assert_eq!(rows[1].tokens, None);
        let mut buf = Vec::new();
        write_efficiency(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,tokens,percentage\nattn-gs,100,10.0\ntruncate,not reached,\n"
        );
    }
}
