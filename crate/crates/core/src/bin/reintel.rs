use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use reintel::pipeline::{env_overrides, run_stage, write_synthetic_project, PipelineConfig, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Preprocess,
    Featurize,
    Train,
    Predict,
    Evaluate,
    Ensemble,
    /// Write a synthetic dataset and a config for it under --out.
    Synth,
}

/// Multimodal reliability classifier pipeline.
///
/// Settings come from the config file, then REINTEL_<KEY> environment
/// variables, then flags.
#[derive(Debug, Parser)]
#[command(name = "reintel", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Command,
    /// Flat key=value config file. Optional only for `synth`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant: 1 parallel, 2 stacked, 3 residual.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    variant: Option<u8>,
    /// Comma-separated prediction files for `ensemble` and `evaluate`.
    #[arg(long)]
    inputs: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(reintel::Error),
}

impl From<reintel::Error> for Failure {
    fn from(e: reintel::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match (&cli.config, cli.stage) {
        (Some(path), _) => PipelineConfig::from_file(path)?,
        (None, Command::Synth) => PipelineConfig::desk_scale(),
        (None, _) => return Err(Failure::Usage("--config is required for this stage".into())),
    };
    cfg.apply(&env_overrides(std::env::vars()), Path::new(""))?;
    let mut flags = Vec::new();
    for item in &cli.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(v) = cli.variant {
        flags.push(("variant".into(), v.to_string()));
    }
    if let Some(v) = &cli.inputs {
        flags.push(("inputs".into(), v.clone()));
    }
    if let Some(v) = cli.seed {
        flags.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = &cli.out {
        flags.push(("out_dir".into(), v.display().to_string()));
    }
    cfg.apply(&flags, Path::new(""))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = config(cli)?;
    let stage = match cli.stage {
        Command::Synth => {
            let path = write_synthetic_project(&cfg)?;
            println!("{}", path.display());
            return Ok(());
        }
        Command::Preprocess => Stage::Preprocess,
        Command::Featurize => Stage::Featurize,
        Command::Train => Stage::Train,
        Command::Predict => Stage::Predict,
        Command::Evaluate => Stage::Evaluate,
        Command::Ensemble => Stage::Ensemble,
    };
    let out = run_stage(stage, &cfg)?;
    print!("{}", out.message);
    for a in &out.artifacts {
        log::info!("wrote {}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
