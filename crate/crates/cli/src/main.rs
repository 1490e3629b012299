use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mgm_core::backbones::EncoderKind;
use mgm_core::harness::{self, parse_seeds, Overrides, PredictOptions, RunConfig};
use mgm_core::memory::MemoryMode;
use mgm_core::{MgmError, Result};

#[derive(Parser)]
#[command(name = "mgm", version, about = "Memory-augmented node classification on media graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train vanilla and MGM models for every seed.
    Train(Common),
    /// Classify nodes with a saved checkpoint.
    Predict(Common),
    /// Grid over K and η.
    Sweep(Common),
    /// Paired vanilla/MGM runs at several label fractions.
    LabelFraction(Common),
    /// Score sampled memories of decreasing mass.
    MemoryFraction(Common),
    /// Write synthetic graphs as TSV files.
    Synth(Common),
    /// Late fusion of text and graph probabilities.
    Fuse(Common),
    /// Score a predictions file against gold labels.
    Eval(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Sampled,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seed list; overrides MGM_SEED and the file.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    memory_mode: Option<Mode>,
    #[arg(long)]
    mass: Option<f64>,
    /// η = 1: the pre-trained backbone alone.
    #[arg(long)]
    vanilla: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
}

impl Common {
    fn memory_mode(&self) -> Option<MemoryMode> {
        self.memory_mode.map(|m| match m {
            Mode::Full => MemoryMode::Full,
            Mode::Sampled => MemoryMode::Sampled,
        })
    }

    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let env = std::env::var("MGM_SEED").ok();
        let flags = Overrides {
            seeds: self.seed.as_deref().map(parse_seeds).transpose()?,
            out: self.out.clone(),
            encoder: self.encoder,
            k: self.k,
            eta: self.eta,
            alpha: self.alpha,
            memory_mode: self.memory_mode(),
            mass: self.mass,
            vanilla: self.vanilla,
            checkpoint: self.checkpoint.clone(),
            predictions: self.predictions.clone(),
        };
        file.resolve(env.as_deref(), &flags)
    }

    fn predict_options(&self) -> PredictOptions {
        PredictOptions {
            eta: if self.vanilla { Some(1.0) } else { self.eta },
            k: self.k,
            memory_mode: self.memory_mode(),
        }
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => print(&harness::cmd_train(&c.resolve()?)?),
        Command::Predict(c) => print(&harness::cmd_predict(&c.resolve()?, &c.predict_options())?),
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let (_, summary) = harness::cmd_sweep(&cfg)?;
            print(&summary)
        }
        Command::LabelFraction(c) => print(&harness::cmd_label_fraction(&c.resolve()?)?),
        Command::MemoryFraction(c) => print(&harness::cmd_memory_fraction(&c.resolve()?)?),
        Command::Synth(c) => {
            let cfg = c.resolve()?;
            harness::cmd_synth(&cfg)?;
            println!("{}", cfg.out.display());
            Ok(())
        }
        Command::Fuse(c) => print(&harness::cmd_fuse(&c.resolve()?)?),
        Command::Eval(c) => print(&harness::cmd_eval(&c.resolve()?)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e: MgmError = e;
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
