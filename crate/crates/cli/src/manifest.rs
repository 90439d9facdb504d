//! Run manifest (TOML) and the effective configuration after flags are applied.

use std::fs;
use std::path::{Path, PathBuf};

use attnsum_core::context::DatasetKind;
use attnsum_core::pipeline::{Method, DEFAULT_ALPHA, TOKEN_LIMITS};
use attnsum_core::providers::scripted::TitleRule;
use attnsum_core::providers::toy::KeywordRule;
use attnsum_core::providers::DEFAULT_IN_FLIGHT;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub task: Option<DatasetKind>,
    pub path: Option<PathBuf>,
    /// JSON map from record field to signal label.
    pub taxonomy: Option<PathBuf>,
    /// Directory whose template files override the built-ins.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderSpec {
    Toy {
        #[serde(default)]
        rules: Option<Vec<KeywordRule>>,
        heads: Option<usize>,
        layers: Option<usize>,
        jitter: Option<f64>,
        /// Jitter seed; the run seed when absent.
        seed: Option<u64>,
    },
    Remote {
        endpoint: String,
        timeout_secs: Option<u64>,
        max_in_flight: Option<usize>,
        /// Append every exchange to this golden file.
        record: Option<PathBuf>,
    },
    Replay {
        endpoint: String,
        cassette: PathBuf,
    },
    None,
}

impl ProviderSpec {
    pub fn kind(&self) -> ProviderKind {
        match self {
            ProviderSpec::Toy { .. } => ProviderKind::Toy,
            ProviderSpec::Remote { .. } => ProviderKind::Remote,
            ProviderSpec::Replay { .. } => ProviderKind::Replay,
            ProviderSpec::None => ProviderKind::None,
        }
    }

    pub fn default_toy() -> Self {
        ProviderSpec::Toy {
            rules: None,
            heads: None,
            layers: None,
            jitter: None,
            seed: None,
        }
    }

    fn in_flight(&self) -> Option<usize> {
        match self {
            ProviderSpec::Remote { max_in_flight, .. } => *max_in_flight,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    #[default]
    TitleMatch,
    /// Uniform guess seeded from the run seed.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Scripted {
        #[serde(default)]
        selection: SelectionMode,
        #[serde(default)]
        identify_keywords: Vec<String>,
        title: Option<TitleRule>,
    },
    Remote {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the API key.
        api_key_env: Option<String>,
        timeout_secs: Option<u64>,
        max_in_flight: Option<usize>,
        record: Option<PathBuf>,
    },
    Replay {
        endpoint: String,
        model: String,
        cassette: PathBuf,
    },
    None,
}

impl GeneratorSpec {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            GeneratorSpec::Scripted { .. } => GeneratorKind::Scripted,
            GeneratorSpec::Remote { .. } => GeneratorKind::Remote,
            GeneratorSpec::Replay { .. } => GeneratorKind::Replay,
            GeneratorSpec::None => GeneratorKind::None,
        }
    }

    pub fn default_scripted() -> Self {
        GeneratorSpec::Scripted {
            selection: SelectionMode::default(),
            identify_keywords: Vec::new(),
            title: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderKind {
    Toy,
    Remote,
    Replay,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GeneratorKind {
    Scripted,
    Remote,
    Replay,
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
    pub limits: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub layer: Option<usize>,
    pub temperature: Option<f64>,
    /// Fixed `created_at` for new profiles.
    pub created_at: Option<String>,
    pub efficiency_target: Option<f64>,
    #[serde(default)]
    pub dataset: DatasetSection,
    pub provider: Option<ProviderSpec>,
    pub generator: Option<GeneratorSpec>,
}

impl RunManifest {
    /// Parses `path`; relative paths inside are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        let mut m: RunManifest =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.rebase(base);
        Ok(m)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.output_dir.as_mut(),
            self.dataset.path.as_mut(),
            self.dataset.taxonomy.as_mut(),
            self.dataset.templates.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        match &mut self.provider {
            Some(ProviderSpec::Remote { record: Some(p), .. }) => fix(p),
            Some(ProviderSpec::Replay { cassette, .. }) => fix(cassette),
            _ => {}
        }
        match &mut self.generator {
            Some(GeneratorSpec::Remote { record: Some(p), .. }) => fix(p),
            Some(GeneratorSpec::Replay { cassette, .. }) => fix(cassette),
            _ => {}
        }
    }
}

/// Flag values; `None` defers to the manifest, then to defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub task: Option<DatasetKind>,
    pub taxonomy: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub generator: Option<GeneratorKind>,
    pub alpha: Option<f64>,
    pub layer: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub methods: Option<Vec<Method>>,
    pub limits: Option<Vec<usize>>,
    pub efficiency_target: Option<f64>,
}

/// Configuration in force for one invocation. Echoed into output metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effective {
    pub task: DatasetKind,
    pub dataset: PathBuf,
    pub taxonomy: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub provider: ProviderSpec,
    pub generator: GeneratorSpec,
    pub methods: Vec<Method>,
    pub limits: Vec<usize>,
    pub alpha: f64,
    pub layer: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub temperature: f64,
    pub created_at: Option<String>,
    pub efficiency_target: Option<f64>,
    pub force: bool,
}

fn pick_provider(flag: Option<ProviderKind>, manifest: Option<ProviderSpec>) -> Result<ProviderSpec, CliError> {
    match (flag, manifest) {
        (None, Some(m)) => Ok(m),
        (None, None) => Ok(ProviderSpec::None),
        (Some(k), Some(m)) if m.kind() == k => Ok(m),
        (Some(ProviderKind::Toy), _) => Ok(ProviderSpec::default_toy()),
        (Some(ProviderKind::None), _) => Ok(ProviderSpec::None),
        (Some(k), _) => Err(CliError::Usage(format!(
            "--provider {k:?} needs a matching [provider] section in the manifest"
        ))),
    }
}

fn pick_generator(flag: Option<GeneratorKind>, manifest: Option<GeneratorSpec>) -> Result<GeneratorSpec, CliError> {
    match (flag, manifest) {
        (None, Some(m)) => Ok(m),
        (None, None) => Ok(GeneratorSpec::None),
        (Some(k), Some(m)) if m.kind() == k => Ok(m),
        (Some(GeneratorKind::Scripted), _) => Ok(GeneratorSpec::default_scripted()),
        (Some(GeneratorKind::None), _) => Ok(GeneratorSpec::None),
        (Some(k), _) => Err(CliError::Usage(format!(
            "--generator {k:?} needs a matching [generator] section in the manifest"
        ))),
    }
}

impl Effective {
    pub fn resolve(manifest: RunManifest, o: Overrides) -> Result<Self, CliError> {
        let dataset = o
            .dataset
            .or(manifest.dataset.path)
            .ok_or_else(|| CliError::Usage("no dataset: pass --dataset or set [dataset].path".into()))?;
        let provider = pick_provider(o.provider, manifest.provider)?;
        let generator = pick_generator(o.generator, manifest.generator)?;
        let jobs = o
            .jobs
            .or(manifest.jobs)
            .or_else(|| provider.in_flight())
            .unwrap_or(DEFAULT_IN_FLIGHT);
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        let limits = o.limits.or(manifest.limits).unwrap_or_else(|| TOKEN_LIMITS.to_vec());
        if limits.is_empty() || limits.contains(&0) {
            return Err(CliError::Usage("token limits must be non-empty and >= 1".into()));
        }
        let eff = Effective {
            task: o.task.or(manifest.dataset.task).unwrap_or(DatasetKind::Selection),
            dataset,
            taxonomy: o.taxonomy.or(manifest.dataset.taxonomy),
            templates: o.templates.or(manifest.dataset.templates),
            provider,
            generator,
            methods: o.methods.or(manifest.methods).unwrap_or_else(|| vec![Method::AttnGs]),
            limits,
            alpha: o.alpha.or(manifest.alpha).unwrap_or(DEFAULT_ALPHA),
            layer: o.layer.or(manifest.layer),
            seed: o.seed.or(manifest.seed).unwrap_or(0),
            jobs,
            output_dir: o.out.or(manifest.output_dir).unwrap_or_else(|| PathBuf::from("attnsum-out")),
            temperature: manifest.temperature.unwrap_or(0.0),
            created_at: manifest.created_at,
            efficiency_target: o.efficiency_target.or(manifest.efficiency_target),
            force: o.force,
        };
        eff.check_paths()?;
        Ok(eff)
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Usage(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.dataset, "dataset")?;
        if let Some(p) = &self.taxonomy {
            must_exist(p, "taxonomy")?;
        }
        if let Some(p) = &self.templates {
            must_exist(p, "template directory")?;
        }
        if let ProviderSpec::Replay { cassette, .. } = &self.provider {
            must_exist(cassette, "provider cassette")?;
        }
        if let GeneratorSpec::Replay { cassette, .. } = &self.generator {
            must_exist(cassette, "generator cassette")?;
        }
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Usage(format!("output directory {}: {e}", self.output_dir.display())))?;
        let probe = self.output_dir.join(".write-probe");
        fs::write(&probe, b"")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| CliError::Usage(format!("output directory {} is not writable: {e}", self.output_dir.display())))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output_dir.join("cache").join(self.task.as_str())
    }
}
