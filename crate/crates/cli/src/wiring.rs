//! Builds datasets, providers and generators from the effective config.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use attnsum_core::context::{ingest_generation_dataset, ingest_selection_dataset, Dataset, DatasetKind, SignalTaxonomy};
use attnsum_core::providers::remote::{RemoteAttentionClient, RemoteGenerator};
use attnsum_core::providers::scripted::{ScriptedConfig, ScriptedGenerator, SelectionRule};
use attnsum_core::providers::toy::ToyProvider;
use attnsum_core::providers::transport::{HttpTransport, RecordingTransport, ReplayTransport, Transport};
use attnsum_core::providers::{
    AttentionProvider, GenerationRequest, GenerationResult, Generator, InFlightLimiter, ProviderError,
    DEFAULT_IN_FLIGHT,
};
use attnsum_core::synthetic::finetuned_signal_provider;
use attnsum_core::templates::TemplateSet;

use crate::manifest::{Effective, GeneratorSpec, ProviderSpec, SelectionMode};
use crate::CliError;

const DEFAULT_TIMEOUT_SECS: u64 = 60;

/// Counts calls that reach the wrapped generator.
pub struct Counting {
    inner: Box<dyn Generator>,
    calls: AtomicUsize,
}

impl Counting {
    pub fn new(inner: Box<dyn Generator>) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Generator for Counting {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(req)
    }

    fn label(&self) -> String {
        self.inner.label()
    }
}

pub fn load_dataset(eff: &Effective) -> Result<Dataset, CliError> {
    let taxonomy = match &eff.taxonomy {
        Some(p) => SignalTaxonomy::from_json_file(eff.task, p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => SignalTaxonomy::default_for(eff.task),
    };
    let ds = match eff.task {
        DatasetKind::Selection => ingest_selection_dataset(&eff.dataset, &taxonomy),
        DatasetKind::Generation => ingest_generation_dataset(&eff.dataset, &taxonomy),
    };
    ds.map_err(|e| CliError::Usage(format!("dataset {}: {e}", eff.dataset.display())))
}

pub fn load_templates(eff: &Effective) -> Result<TemplateSet, CliError> {
    match &eff.templates {
        Some(dir) => TemplateSet::with_overrides(eff.task, dir).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(TemplateSet::builtin(eff.task)),
    }
}

fn http(timeout: Option<u64>, record: &Option<std::path::PathBuf>) -> Result<Arc<dyn Transport>, CliError> {
    let inner = HttpTransport::new(Duration::from_secs(timeout.unwrap_or(DEFAULT_TIMEOUT_SECS)))
        .map_err(|e| CliError::Fatal(e.to_string()))?;
    Ok(match record {
        Some(p) => Arc::new(RecordingTransport::new(inner, p.clone())),
        None => Arc::new(inner),
    })
}

fn replay(cassette: &std::path::Path) -> Result<Arc<dyn Transport>, CliError> {
    Ok(Arc::new(
        ReplayTransport::from_file(cassette).map_err(|e| CliError::Usage(e.to_string()))?,
    ))
}

pub fn build_provider(eff: &Effective) -> Result<Option<Box<dyn AttentionProvider>>, CliError> {
    Ok(match &eff.provider {
        ProviderSpec::None => None,
        ProviderSpec::Toy {
            rules,
            heads,
            layers,
            jitter,
            seed,
        } => {
            let mut toy = match rules {
                Some(r) => ToyProvider::new(r.clone()),
                None => finetuned_signal_provider(),
            };
            if let Some(h) = heads {
                toy = toy.with_heads(*h);
            }
            if let Some(l) = layers {
                toy = toy.with_layers(*l);
            }
            if let Some(j) = jitter {
                toy = toy.with_jitter(*j);
            }
            toy = toy.with_seed(seed.unwrap_or(eff.seed));
            toy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Some(Box::new(toy))
        }
        ProviderSpec::Remote {
            endpoint,
            timeout_secs,
            max_in_flight,
            record,
        } => Some(Box::new(
            RemoteAttentionClient::new(endpoint.clone(), http(*timeout_secs, record)?)
                .with_limiter(Arc::new(InFlightLimiter::new(max_in_flight.unwrap_or(DEFAULT_IN_FLIGHT)))),
        )),
        ProviderSpec::Replay { endpoint, cassette } => {
            Some(Box::new(RemoteAttentionClient::new(endpoint.clone(), replay(cassette)?)))
        }
    })
}

pub fn build_generator(eff: &Effective) -> Result<Option<Counting>, CliError> {
    let g: Box<dyn Generator> = match &eff.generator {
        GeneratorSpec::None => return Ok(None),
        GeneratorSpec::Scripted {
            selection,
            identify_keywords,
            title,
        } => {
            let mut cfg = ScriptedConfig {
                identify_keywords: identify_keywords.clone(),
                selection: match selection {
                    SelectionMode::TitleMatch => SelectionRule::TitleMatch,
                    SelectionMode::UniformRandom => SelectionRule::UniformRandom { seed: eff.seed },
                },
                ..Default::default()
            };
            if let Some(t) = title {
                cfg.title = t.clone();
            }
            Box::new(ScriptedGenerator::new(cfg))
        }
        GeneratorSpec::Remote {
            endpoint,
            model,
            api_key_env,
            timeout_secs,
            max_in_flight,
            record,
        } => {
            let mut g = RemoteGenerator::new(endpoint.clone(), model.clone(), http(*timeout_secs, record)?)
                .with_limiter(Arc::new(InFlightLimiter::new(max_in_flight.unwrap_or(DEFAULT_IN_FLIGHT))));
            if let Some(var) = api_key_env {
                if std::env::var_os(var).is_none() {
                    return Err(CliError::Usage(format!("environment variable {var} is not set")));
                }
                g = g.with_auth_env(var.clone());
            }
            Box::new(g)
        }
        GeneratorSpec::Replay {
            endpoint,
            model,
            cassette,
        } => Box::new(RemoteGenerator::new(endpoint.clone(), model.clone(), replay(cassette)?)),
    };
    Ok(Some(Counting::new(g)))
}
