//! Subcommand bodies. Each returns whether the run was complete.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use attnsum_core::attention::SentenceScores;
use attnsum_core::context::{Dataset, UserContext};
use attnsum_core::eval::{
    ablate, mean_document_tokens, run_grid, signal_report, token_efficiency, write_efficiency, write_signal_report,
    AblationParam, EvalError, Evaluator, ReportTable,
};
use attnsum_core::marking::{check_alpha, mark_context, select_important};
use attnsum_core::pipeline::{score_sentences, CompressionConfig, Compressor, Method, PipelineError, ProfileCache};
use attnsum_core::providers::{AttentionProvider, Generator, WhitespaceCounter};
use attnsum_core::templates::TemplateSet;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::Effective;
use crate::source::{is_fatal, CachedSource};
use crate::wiring::Counting;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

/// Everything a subcommand needs, built once per invocation.
pub struct Run {
    pub eff: Effective,
    pub dataset: Dataset,
    pub templates: TemplateSet,
    pub provider: Option<Box<dyn AttentionProvider>>,
    pub generator: Option<Counting>,
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Usage(m),
            EvalError::Pipeline(PipelineError::Config(m)) => CliError::Usage(m),
            other => CliError::Fatal(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => CliError::Usage(m),
            other => CliError::Fatal(other.to_string()),
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Fatal(format!("{}: {e}", path.display()))
}

impl Run {
    fn contexts(&self) -> Vec<&UserContext> {
        self.dataset.items.iter().map(|(c, _)| c).collect()
    }

    fn compressor(&self) -> Compressor<'_> {
        let mut c = Compressor::new(&WhitespaceCounter, &self.templates);
        if let Some(p) = &self.provider {
            c = c.with_provider(p.as_ref());
        }
        if let Some(g) = &self.generator {
            c = c.with_generator(g);
        }
        if let Some(ts) = &self.eff.created_at {
            c = c.with_timestamp(ts.clone());
        }
        c
    }

    fn evaluator(&self) -> Result<Evaluator<'_>, CliError> {
        let g: &dyn Generator = self
            .generator
            .as_ref()
            .ok_or_else(|| CliError::Usage("evaluation needs a generator".into()))?;
        let mut e = Evaluator::new(g, &self.templates);
        e.temperature = self.eff.temperature;
        Ok(e)
    }

    fn base_config(&self, method: Method, max_tokens: usize) -> CompressionConfig {
        CompressionConfig {
            method,
            dataset: self.eff.task,
            alpha: self.eff.alpha,
            layer: self.eff.layer,
            max_tokens,
            seed: Some(self.eff.seed),
            temperature: self.eff.temperature,
        }
    }

    fn cache(&self) -> Result<ProfileCache, CliError> {
        ProfileCache::open(self.eff.cache_dir()).map_err(|e| CliError::Fatal(e.to_string()))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.eff.output_dir.join(name)
    }

    fn generator_calls(&self) -> usize {
        self.generator.as_ref().map_or(0, Counting::calls)
    }

    /// Writes `{stem}.meta.json` next to the outputs of a command.
    fn write_meta(&self, stem: &str, command: &str, extra: Value) -> Result<(), CliError> {
        let mut meta = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.eff,
        });
        if let (Value::Object(m), Value::Object(x)) = (&mut meta, extra) {
            m.extend(x);
        }
        let path = self.out(&format!("{stem}.meta.json"));
        let body = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
        fs::write(&path, body).map_err(|e| io(&path, e))
    }

    fn write_table(&self, name: &str, table: &ReportTable) -> Result<(), CliError> {
        let path = self.out(name);
        let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
        table.write_csv(f)?;
        Ok(())
    }

    fn provider(&self) -> Result<&dyn AttentionProvider, CliError> {
        self.provider
            .as_deref()
            .ok_or_else(|| CliError::Usage("this command needs an attention provider (--provider)".into()))
    }
}

#[derive(Serialize)]
struct AuditLine<'a> {
    user_id: &'a str,
    layer: usize,
    alpha: f64,
    max_score: f64,
    selected: Vec<usize>,
    scores: &'a BTreeMap<usize, f64>,
}

#[derive(Serialize)]
struct MarkedLine<'a> {
    user_id: &'a str,
    text: String,
}

#[derive(Serialize)]
struct UserFailure {
    user_id: String,
    error: String,
}

pub fn mark(run: &Run) -> Result<Status, CliError> {
    check_alpha(run.eff.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    let layer = run.eff.layer.ok_or_else(|| CliError::Usage("mark requires --layer".into()))?;
    let provider = run.provider()?;
    let contexts = run.contexts();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.eff.jobs)
        .build()
        .map_err(|e| CliError::Fatal(e.to_string()))?;
    let scored: Vec<Result<SentenceScores, _>> = pool.install(|| {
        contexts
            .par_iter()
            .map(|ctx| score_sentences(provider, ctx, layer))
            .collect()
    });

    let mut audit = String::new();
    let mut marked = String::new();
    let mut failures = Vec::new();
    for (ctx, res) in contexts.iter().zip(scored) {
        let outcome = res.and_then(|scores| {
            let sel = select_important(&scores, run.eff.alpha)?;
            let m = mark_context(&sel, ctx)?;
            Ok((scores, sel, m))
        });
        match outcome {
            Ok((scores, sel, m)) => {
                let line = AuditLine {
                    user_id: &ctx.user_id,
                    layer,
                    alpha: run.eff.alpha,
                    max_score: scores.max_score().unwrap_or(0.0),
                    selected: sel.indices(),
                    scores: &scores.scores,
                };
                audit.push_str(&serde_json::to_string(&line).expect("audit serializes"));
                audit.push('\n');
                marked.push_str(
                    &serde_json::to_string(&MarkedLine {
                        user_id: &ctx.user_id,
                        text: m.text,
                    })
                    .expect("marked serializes"),
                );
                marked.push('\n');
            }
            Err(e) if is_fatal(&e) => return Err(CliError::Fatal(format!("user {}: {e}", ctx.user_id))),
            Err(e) => {
                log::error!("user {}: {e}", ctx.user_id);
                failures.push(UserFailure {
                    user_id: ctx.user_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    for (name, body) in [("audit.jsonl", &audit), ("marked.jsonl", &marked)] {
        let path = run.out(name);
        fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    run.write_meta("mark", "mark", json!({ "users": contexts.len(), "failures": failures }))?;
    report_failures(failures.iter().map(|f| format!("{}: {}", f.user_id, f.error)))
}

fn report_failures(lines: impl Iterator<Item = String>) -> Result<Status, CliError> {
    let lines: Vec<String> = lines.collect();
    if lines.is_empty() {
        return Ok(Status::Complete);
    }
    eprintln!("{} failures:", lines.len());
    for l in &lines {
        eprintln!("  {l}");
    }
    Ok(Status::Partial)
}

pub fn compress(run: &Run) -> Result<Status, CliError> {
    let comp = run.compressor();
    for &m in &run.eff.methods {
        comp.check(&run.base_config(m, run.eff.limits[0]))?;
    }
    let cache = run.cache()?;
    let source = CachedSource::new(&comp, &cache, true, run.eff.force, run.eff.jobs);
    let contexts = run.contexts();
    for &method in &run.eff.methods {
        for &limit in &run.eff.limits {
            use attnsum_core::eval::ProfileSource;
            source.profiles(&contexts, &run.base_config(method, limit))?;
        }
    }
    let batches: Vec<Value> = source
        .counts()
        .into_iter()
        .map(|(method, limit, c)| json!({ "method": method, "token_limit": limit, "cached": c.cached, "computed": c.computed, "failed": c.failed }))
        .collect();
    let failures = source.failures();
    let calls = run.generator_calls();
    run.write_meta(
        "compress",
        "compress",
        json!({ "batches": batches, "generator_calls": calls, "failures": failures }),
    )?;
    eprintln!("compress: {} batches, {calls} generator calls", batches.len());
    report_failures(
        failures
            .iter()
            .map(|f| format!("{} @ {} {}: {}", f.method, f.token_limit, f.user_id, f.error)),
    )
}

fn missing_lines(table: &ReportTable) -> Vec<String> {
    table
        .missing()
        .map(|(row, user)| format!("{} @ {}: no profile for {user}", row.method, row.token_limit.map_or("-".into(), |l| l.to_string())))
        .collect()
}

pub fn eval(run: &Run, compute: bool) -> Result<Status, CliError> {
    let comp = run.compressor();
    let cache = run.cache()?;
    let source = CachedSource::new(&comp, &cache, compute, run.eff.force && compute, run.eff.jobs);
    let evaluator = run.evaluator()?;
    let base = run.base_config(run.eff.methods[0], run.eff.limits[0]);
    let table = run_grid(
        &run.dataset.items,
        &run.eff.methods,
        &run.eff.limits,
        &base,
        &source,
        &evaluator,
        run.eff.jobs,
    )?;
    run.write_table("eval.csv", &table)?;
    let missing = missing_lines(&table);
    run.write_meta(
        "eval",
        "eval",
        json!({ "report": table.meta, "missing": missing, "failures": source.failures() }),
    )?;
    report_failures(missing.into_iter())
}

pub fn ablate_cmd(
    run: &Run,
    param: AblationParam,
    values: &[f64],
    method: Method,
    max_tokens: usize,
    compute: bool,
) -> Result<Status, CliError> {
    let comp = run.compressor();
    let cache = run.cache()?;
    let source = CachedSource::new(&comp, &cache, compute, run.eff.force && compute, run.eff.jobs);
    let evaluator = run.evaluator()?;
    let base = run.base_config(method, max_tokens);
    let table = ablate(param, values, &run.dataset.items, &base, &source, &evaluator, run.eff.jobs)?;
    let name = match param {
        AblationParam::Alpha => "ablation-alpha",
        AblationParam::Layer => "ablation-layer",
    };
    let path = run.out(&format!("{name}.csv"));
    let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
    table.write_csv(f)?;
    let incomplete: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.metric.is_none())
        .map(|r| format!("{} = {}: {} of {} profiles", name, r.x, r.n, run.dataset.items.len()))
        .collect();
    run.write_meta(
        name,
        "ablate",
        json!({ "report": table.meta, "method": method, "max_tokens": max_tokens, "values": values, "incomplete": incomplete }),
    )?;
    report_failures(incomplete.into_iter())
}

pub fn analyze(run: &Run, layers: &[usize]) -> Result<Status, CliError> {
    let provider = run.provider()?;
    let rows = signal_report(&run.contexts(), layers, provider, run.eff.jobs)?;
    let path = run.out("signal_report.csv");
    let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
    write_signal_report(f, &rows)?;
    run.write_meta("signal_report", "analyze", json!({ "layers": layers }))?;
    Ok(Status::Complete)
}

pub fn efficiency(run: &Run, compute: bool) -> Result<Status, CliError> {
    let target = run
        .eff
        .efficiency_target
        .ok_or_else(|| CliError::Usage("efficiency needs --target or efficiency_target".into()))?;
    let comp = run.compressor();
    let cache = run.cache()?;
    let source = CachedSource::new(&comp, &cache, compute, run.eff.force && compute, run.eff.jobs);
    let evaluator = run.evaluator()?;
    let base = run.base_config(run.eff.methods[0], run.eff.limits[0]);
    let table = run_grid(
        &run.dataset.items,
        &run.eff.methods,
        &run.eff.limits,
        &base,
        &source,
        &evaluator,
        run.eff.jobs,
    )?;
    let full = mean_document_tokens(&run.dataset.items, &WhitespaceCounter);
    let rows = token_efficiency(&table, &run.eff.methods, target, full);
    let path = run.out("efficiency.csv");
    let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
    write_efficiency(f, &rows)?;
    let missing = missing_lines(&table);
    run.write_meta(
        "efficiency",
        "efficiency",
        json!({ "target": target, "full_context_tokens": full, "report": table.meta, "missing": missing }),
    )?;
    report_failures(missing.into_iter())
}
