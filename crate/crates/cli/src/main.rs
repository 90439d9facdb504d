//! `attnsum`: batch driver for attention-guided profile compression.
//!
//! Exit codes: 0 complete, 1 fatal error, 2 usage error, 3 partial failure.

mod commands;
mod manifest;
mod source;
mod wiring;

use std::path::PathBuf;
use std::process::ExitCode;

use attnsum_core::context::DatasetKind;
use attnsum_core::eval::AblationParam;
use attnsum_core::pipeline::Method;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use commands::{Run, Status};
use manifest::{Effective, GeneratorKind, Overrides, ProviderKind, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Parser)]
#[command(name = "attnsum", version, about = "Attention-guided compression of long user contexts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run manifest; flags override its values.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Line-delimited dataset file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    task: Option<DatasetKind>,
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true, value_enum)]
    generator: Option<GeneratorKind>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    layer: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the provider's in-flight cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute cached profiles.
    #[arg(long, global = true)]
    force: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, alias = "method", value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, alias = "max-tokens", value_delimiter = ',')]
    limits: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score sentences, select by threshold and write marked contexts.
    Mark,
    /// Build profiles into the cache.
    Compress(GridArgs),
    /// Score cached profiles on the downstream task.
    Eval {
        #[command(flatten)]
        grid: GridArgs,
        /// Compute profiles missing from the cache.
        #[arg(long)]
        compute: bool,
    },
    /// Sweep alpha or layer.
    Ablate {
        #[arg(long)]
        param: AblationParam,
        /// `start:end:step` or a comma list.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "attn-gs")]
        method: Method,
        /// Defaults to the first configured limit.
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        compute: bool,
    },
    /// Per-layer, per-signal mean attention.
    Analyze {
        /// `a-b` range or comma list.
        #[arg(long)]
        layers: String,
    },
    /// Smallest limit per method reaching a target metric.
    Efficiency {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        compute: bool,
    },
}

fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse values `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [a, b, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (a, b, step) = (a.map_err(|_| bad())?, b.map_err(|_| bad())?, step.map_err(|_| bad())?);
        if step <= 0.0 || b < a {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        return Ok((0..n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn parse_layers(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse layers `{s}`"));
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

fn run(cli: Cli) -> Result<Status, CliError> {
    let g = cli.global;
    let manifest = match &g.manifest {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    let mut o = Overrides {
        dataset: g.dataset,
        task: g.task,
        taxonomy: g.taxonomy,
        templates: g.templates,
        provider: g.provider,
        generator: g.generator,
        alpha: g.alpha,
        layer: g.layer,
        seed: g.seed,
        jobs: g.jobs,
        out: g.out,
        force: g.force,
        ..Default::default()
    };
    match &cli.command {
        Command::Compress(grid) | Command::Eval { grid, .. } | Command::Efficiency { grid, .. } => {
            o.methods = grid.methods.clone();
            o.limits = grid.limits.clone();
        }
        _ => {}
    }
    if let Command::Efficiency { target, .. } = &cli.command {
        o.efficiency_target = *target;
    }
    let eff = Effective::resolve(manifest, o)?;
    log::info!("effective config: {eff:?}");
    let r = Run {
        dataset: wiring::load_dataset(&eff)?,
        templates: wiring::load_templates(&eff)?,
        provider: wiring::build_provider(&eff)?,
        generator: wiring::build_generator(&eff)?,
        eff,
    };
    match cli.command {
        Command::Mark => commands::mark(&r),
        Command::Compress(_) => commands::compress(&r),
        Command::Eval { compute, .. } => commands::eval(&r, compute),
        Command::Ablate {
            param,
            values,
            method,
            max_tokens,
            compute,
        } => {
            let values = parse_values(&values)?;
            let m = max_tokens.unwrap_or(r.eff.limits[0]);
            commands::ablate_cmd(&r, param, &values, method, m, compute)
        }
        Command::Analyze { layers } => commands::analyze(&r, &parse_layers(&layers)?),
        Command::Efficiency { compute, .. } => commands::efficiency(&r, compute),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(3),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Fatal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_ranges() {
        let v = parse_values("0.1:1.0:0.1").unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v[2], 0.3);
        assert_eq!(v[9], 1.0);
        assert_eq!(parse_values("0.2, 0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_values("1:0:0.1").is_err());
        assert_eq!(parse_layers("0-15").unwrap().len(), 16);
        assert_eq!(parse_layers("3,6").unwrap(), vec![3, 6]);
    }
}
