//! `mfamml`: batch pipeline from meshes to retrieval scores.

mod commands;
mod config;
mod manifest;
mod plot;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfamml::synth::SynthConfig;
use mfamml::Execution;

/// Invalid configuration or arguments; exit code 2.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

/// Some items failed while the rest were processed; exit code 1.
#[derive(Debug)]
pub struct PartialFailure(pub String);

impl fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PartialFailure {}

#[derive(Debug, Parser)]
#[command(name = "mfamml", version, about = "Non-rigid shape retrieval with multi-view metric learning")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding cached features, codebooks, models and reports.
    #[arg(long, global = true, default_value = "mfamml-work")]
    work: PathBuf,
    /// Dataset manifest (CSV with `path,label,id`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(flatten)]
    overrides: config::Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded collection of deformed primitives and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
    },
    /// Compute spectra and descriptors for every manifest shape (cached).
    Features,
    /// Fit the bag-of-words codebooks on training shapes.
    Codebook {
        /// Fit on these shape ids instead of the whole training split.
        #[arg(long, value_delimiter = ',')]
        shapes: Option<Vec<String>>,
    },
    /// Encode every shape into its four view vectors.
    Encode,
    /// Learn the per-view projections.
    Train {
        /// Model directory (default: <work>/model).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write fused distances and rankings.
    Retrieve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one or more models and write report.json and pr_curve.csv.
    Eval {
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render pr_curve.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Render a PR table as SVG.
    PrCurve {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(InvalidConfig("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let layout = config::Layout { root: cli.work.clone() };
    if let Command::Synth { out, per_class } = &cli.command {
        let cfg = SynthConfig {
            per_class: *per_class,
            seed: cli.overrides.seed.unwrap_or(0),
            ..Default::default()
        };
        return commands::synth(out, &cfg);
    }
    if let Command::PrCurve { input, out } = &cli.command {
        let input = input.clone().unwrap_or_else(|| layout.eval().join("pr_curve.csv"));
        let out = out.clone().unwrap_or_else(|| input.with_extension("svg"));
        return commands::pr_curve(&input, &out);
    }
    let ctx = commands::Context {
        cfg: config::load(cli.config.as_deref(), &cli.overrides)?,
        layout,
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
        manifest: cli.manifest.clone(),
    };
    match cli.command {
        Command::Features => commands::features(&ctx),
        Command::Codebook { shapes } => commands::codebook(&ctx, shapes.as_deref()),
        Command::Encode => commands::encode(&ctx),
        Command::Train { model } => commands::train(&ctx, &model.unwrap_or_else(|| ctx.layout.model())),
        Command::Retrieve { model, out } => commands::retrieve(
            &ctx,
            &model.unwrap_or_else(|| ctx.layout.model()),
            &out.unwrap_or_else(|| ctx.layout.retrieval()),
        ),
        Command::Eval { model, out, svg } => {
            let models = if model.is_empty() { vec![ctx.layout.model()] } else { model };
            let out = out.unwrap_or_else(|| ctx.layout.eval());
            commands::eval(&ctx, &models, &out)?;
            if svg {
                commands::pr_curve(&out.join("pr_curve.csv"), &out.join("pr_curve.svg"))?;
            }
            Ok(())
        }
        Command::Synth { .. } | Command::PrCurve { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<InvalidConfig>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
