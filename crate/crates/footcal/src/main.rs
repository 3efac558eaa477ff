use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use footcal::cli::{run_all, run_stage, PipelineConfig, PipelineError, Stage};

/// Foot force-sensor self-calibration pipeline on a simulated biped.
#[derive(Parser)]
#[command(name = "footcal", version, about)]
struct Args {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all configured stages, or one selected with --stage.
    Run {
        /// Single stage to run (sample, plan, simulate, manual-cal,
        /// self-cal, evaluate, report).
        #[arg(long)]
        stage: Option<String>,
    },
    /// Sample double-support stances.
    Sample,
    /// Plan CoP-tracking trajectories for the sampled stances.
    Plan,
    /// Simulate sensor datasets along the planned trajectories.
    Simulate,
    /// Run the grid-weight manual calibration.
    ManualCal,
    /// Fit the self-calibration parameters on the training datasets.
    SelfCal,
    /// Evaluate all variants on train and test datasets.
    Evaluate,
    /// Print the MAE tables from the result artifacts.
    Report,
    /// Write a default configuration file to stdout.
    DefaultConfig,
}

fn load_config(args: &Args) -> Result<PipelineConfig, PipelineError> {
    let path = args
        .config
        .clone()
        .ok_or_else(|| PipelineError::BadConfig("--config is required".into()))?;
    let mut config = PipelineConfig::load(&path)?;
    if let Some(seed) = args.seed {
        config.apply_seed(seed);
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(args: &Args) -> Result<(), PipelineError> {
    match &args.command {
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().canonical_toml());
            Ok(())
        }
        Command::Run { stage } => {
            let config = load_config(args)?;
            match stage {
                None => run_all(&config),
                Some(name) => {
                    let stage = Stage::parse(name).ok_or_else(|| {
                        PipelineError::BadConfig(format!("unknown stage `{name}`"))
                    })?;
                    run_stage(&config, stage)
                }
            }
        }
        Command::Sample => run_stage(&load_config(args)?, Stage::Sample),
        Command::Plan => run_stage(&load_config(args)?, Stage::Plan),
        Command::Simulate => run_stage(&load_config(args)?, Stage::Simulate),
        Command::ManualCal => run_stage(&load_config(args)?, Stage::ManualCal),
        Command::SelfCal => run_stage(&load_config(args)?, Stage::SelfCal),
        Command::Evaluate => run_stage(&load_config(args)?, Stage::Evaluate),
        Command::Report => run_stage(&load_config(args)?, Stage::Report),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("footcal: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
