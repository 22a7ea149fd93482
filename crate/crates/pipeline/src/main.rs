use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltg_pipeline::config::ModelChoice;
use ltg_pipeline::{Experiment, PipelineError, Profile, RunConfig, Stage, StageOptions};

/// Latent-space text GAN with RL finetuning.
#[derive(Parser)]
#[command(name = "ltg", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding the profile's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Experiment directory holding checkpoints and the ledger.
    #[arg(long, global = true, default_value = "ltg-run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and train/dev/test splits.
    Ingest,
    /// Train the sequence VAE.
    TrainVae,
    /// Train the WGAN-GP on encoder latents.
    TrainGan,
    /// Pretrain the value head on generated sentences.
    PretrainVh,
    /// Finetune the decoder's output layer with policy gradient.
    FinetuneRl,
    /// Write generated sentences, one per line.
    Generate {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<ModelChoice>,
        /// Output file (default: samples.txt in the experiment directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score generated sentences against the test split.
    Evaluate {
        #[arg(long, value_enum)]
        model: Option<ModelChoice>,
    },
    /// Compare the base model with short and long RL finetuning.
    AblationRl,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let c = &cli.common;
    let config = RunConfig::load(c.config.as_deref(), c.profile, c.seed)?;
    let mut opts = StageOptions::default();
    let stage = match cli.command {
        Command::ShowConfig => {
            config.validate()?;
            print!("{}", config.to_toml());
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::TrainVae => Stage::TrainVae,
        Command::TrainGan => Stage::TrainGan,
        Command::PretrainVh => Stage::PretrainVh,
        Command::FinetuneRl => Stage::FinetuneRl,
        Command::Generate { count, model, output } => {
            opts = StageOptions { count, model, output };
            Stage::Generate
        }
        Command::Evaluate { model } => {
            opts.model = model;
            Stage::Evaluate
        }
        Command::AblationRl => Stage::AblationRl,
    };
    let x = Experiment::new(&c.out, config)?;
    let rec = x.run(stage, &opts)?;
    log::info!("{stage} done in {:.1}s -> {}", rec.wall_time_s, x.dir.join(&rec.checkpoint).display());
    for (k, v) in &rec.metrics {
        println!("{k}\t{v}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
