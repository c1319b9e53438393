use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gate_adapt_cli::{Baseline, CliError, ExperimentConfig, Run};

#[derive(Parser)]
#[command(name = "gate-adapt", version, about = "Sim-to-real gate pose adaptation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory shared by all stages.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic two-domain dataset.
    Generate(Common),
    /// Train on labeled sim frames.
    Pretrain(Common),
    /// Adapt the pretrained model with the state-consistency loss.
    Finetune(Common),
    /// Train one baseline: mean-predictor, zero-shot, pencil or da.
    Baseline {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Score the configured methods on the labeled real test split.
    Evaluate(Common),
    /// Fine-tune and score with growing numbers of real sequences.
    Ablate(Common),
    /// Draw predicted gates over selected frames.
    Overlay(Common),
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("GATE_ADAPT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Invalid(format!("GATE_ADAPT_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn open(common: &Common) -> Result<Run, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(Run::new(cfg, &common.out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Generate(c) => open(&c)?.generate(),
        Command::Pretrain(c) => open(&c)?.pretrain(),
        Command::Finetune(c) => open(&c)?.finetune(),
        Command::Baseline { name, common } => {
            let which = Baseline::parse(&name)?;
            open(&common)?.baseline(which)
        }
        Command::Evaluate(c) => open(&c)?.evaluate().map(|_| ()),
        Command::Ablate(c) => open(&c)?.ablate().map(|_| ()),
        Command::Overlay(c) => open(&c)?.overlay().map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
