use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nulltext::analysis::StrategyChoice;
use nulltext::cli::{cmd_analyze, cmd_cartoonize, cmd_sample, cmd_sweep, CommandOutput};
use nulltext::config::{Overrides, ReferenceSpec, RunConfig};
use nulltext::Error;

#[derive(Parser)]
#[command(
    name = "nulltext",
    version,
    about = "Guided diffusion with null-text disturbance on mixture data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free generation from noise.
    Sample(RunArgs),
    /// Image-guided generation from a reference latent.
    Cartoonize(RunArgs),
    /// Grid over the [sweep] axes of the config.
    Sweep(RunArgs),
    /// Summarize run bundles, one row each.
    Analyze {
        bundles: Vec<PathBuf>,
        #[arg(long, default_value = "out/analysis")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// none | backd | imaged | baseline
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    prompt_class: Option<u32>,
    /// mode:K, sample:K, or comma-separated values
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let overrides = Overrides {
            gamma: self.gamma,
            b: self.b,
            s: self.s,
            steps: self.steps,
            seed: self.seed,
            strategy: self.strategy.as_deref().map(StrategyChoice::parse).transpose()?,
            prompt_class: self.prompt_class,
            reference: self.reference.as_deref().map(ReferenceSpec::parse).transpose()?,
            dataset: self.dataset.clone(),
            output: self.out.clone(),
        };
        cfg.apply(&overrides);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<CommandOutput, Error> {
    match cli.command {
        Command::Sample(a) => cmd_sample(&a.config()?),
        Command::Cartoonize(a) => cmd_cartoonize(&a.config()?),
        Command::Sweep(a) => cmd_sweep(&a.config()?),
        Command::Analyze { bundles, out } => cmd_analyze(&bundles, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for line in &out.log {
                eprintln!("{line}");
            }
            println!("{}", out.bundle.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
