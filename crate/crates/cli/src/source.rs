//! Cache-backed profile source that records per-user failures instead of
//! aborting the batch.

use std::sync::Mutex;

use attnsum_core::context::UserContext;
use attnsum_core::eval::{EvalError, ProfileSource};
use attnsum_core::pipeline::{CompressedProfile, CompressionConfig, Compressor, PipelineError, ProfileCache, StageError};
use attnsum_core::providers::ProviderError;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub method: String,
    pub token_limit: usize,
    pub user_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BatchCounts {
    pub cached: usize,
    pub computed: usize,
    pub failed: usize,
}

pub struct CachedSource<'a> {
    pub compressor: &'a Compressor<'a>,
    pub cache: &'a ProfileCache,
    pub compute: bool,
    /// Recompute and overwrite entries that are already cached.
    pub force: bool,
    pub jobs: usize,
    failures: Mutex<Vec<Failure>>,
    counts: Mutex<Vec<(String, usize, BatchCounts)>>,
}

impl<'a> CachedSource<'a> {
    pub fn new(compressor: &'a Compressor<'a>, cache: &'a ProfileCache, compute: bool, force: bool, jobs: usize) -> Self {
        Self {
            compressor,
            cache,
            compute,
            force,
            jobs,
            failures: Mutex::new(Vec::new()),
            counts: Mutex::new(Vec::new()),
        }
    }

    pub fn failures(&self) -> Vec<Failure> {
        self.failures.lock().unwrap().clone()
    }

    /// `(method, limit, counts)` per batch, in call order.
    pub fn counts(&self) -> Vec<(String, usize, BatchCounts)> {
        self.counts.lock().unwrap().clone()
    }
}

/// Errors that will repeat for every user, so the batch stops.
pub fn is_fatal(e: &StageError) -> bool {
    matches!(
        e,
        StageError::Provider(ProviderError::LayerOutOfRange { .. } | ProviderError::Config(_))
    )
}

impl ProfileSource for CachedSource<'_> {
    fn profiles(&self, contexts: &[&UserContext], cfg: &CompressionConfig) -> Result<Vec<Option<CompressedProfile>>, EvalError> {
        self.compressor.check(cfg)?;
        let mut out = Vec::with_capacity(contexts.len());
        let mut todo = Vec::new();
        let mut counts = BatchCounts::default();
        for (i, ctx) in contexts.iter().enumerate() {
            let hit = if self.force {
                None
            } else {
                self.cache.get(&self.compressor.cache_key(&ctx.user_id, cfg))?
            };
            match hit {
                Some(_) => counts.cached += 1,
                None if self.compute => todo.push(i),
                None => {}
            }
            out.push(hit);
        }
        if !todo.is_empty() {
            let batch: Vec<&UserContext> = todo.iter().map(|&i| contexts[i]).collect();
            let results = self.compressor.compress_all(&batch, cfg, self.jobs)?;
            for (i, res) in todo.into_iter().zip(results) {
                match res {
                    Ok(p) => {
                        let key = self.compressor.cache_key(&p.user_id, cfg);
                        if self.force {
                            self.cache.replace(&key, &p)?;
                        } else {
                            self.cache.put(&key, &p)?;
                        }
                        counts.computed += 1;
                        out[i] = Some(p);
                    }
                    Err(PipelineError::User { user_id, source }) if !is_fatal(&source) => {
                        log::error!("{} @ {}: user {user_id}: {source}", cfg.method, cfg.max_tokens);
                        counts.failed += 1;
                        self.failures.lock().unwrap().push(Failure {
                            method: cfg.method.to_string(),
                            token_limit: cfg.max_tokens,
                            user_id,
                            error: source.to_string(),
                        });
                    }
                    Err(PipelineError::User { user_id, source }) => return Err(EvalError::User { user_id, source }),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        self.counts
            .lock()
            .unwrap()
            .push((cfg.method.to_string(), cfg.max_tokens, counts));
        Ok(out)
    }
}
