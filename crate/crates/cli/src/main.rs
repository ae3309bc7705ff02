use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mixmatch::config::ExperimentConfig;
use mixmatch::experiment::{load_data, model_for, run_experiment, ExperimentSummary, OUTPUT_ROOT_VAR};
use mixmatch::model::load_checkpoint;
use mixmatch::train::evaluate;

#[derive(Parser)]
#[command(name = "mixmatch", version, about = "Semi-supervised learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write metrics, manifests and a summary.
    #[command(after_help = format!("The output root can be overridden with ${OUTPUT_ROOT_VAR}."))]
    Run { config: PathBuf },
    /// Apply a named ablation to a base config and run it.
    Ablate { preset: String, base_config: PathBuf },
    /// Report the test error of a saved checkpoint.
    Eval { checkpoint: PathBuf, config: PathBuf },
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::parse(&text).with_context(|| format!("{}", path.display()))
}

fn run(config: &ExperimentConfig) -> Result<ExitCode> {
    let (dir, summary) = run_experiment(config)?;
    report(&dir, &summary);
    Ok(if summary.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn report(dir: &Path, summary: &ExperimentSummary) {
    println!("{}", dir.display());
    for r in &summary.runs {
        println!(
            "seed {}: median error {:.4}, final error {:.4}",
            r.seed, r.median_error, r.final_error
        );
    }
    if let (Some(mean), Some(std)) = (summary.mean, summary.std) {
        println!("mean {mean:.4} std {std:.4} over {} runs", summary.runs.len());
    }
    for f in &summary.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
}

fn eval(checkpoint: &Path, config: &ExperimentConfig) -> Result<ExitCode> {
    let (train, test) = load_data(config)?;
    let model = model_for(config, &train)?;
    let params = load_checkpoint(checkpoint)?;
    params
        .check_structure(&model.init_params(0)?)
        .with_context(|| format!("{} does not match the configured model", checkpoint.display()))?;
    let error = evaluate(&model, &params, &test)?;
    println!("test error {error:.4} on {} examples", test.len());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => read_config(&config).and_then(|c| run(&c)),
        Command::Ablate { preset, base_config } => read_config(&base_config)
            .and_then(|c| c.with_ablation(&preset).map_err(Into::into))
            .and_then(|c| run(&c)),
        Command::Eval { checkpoint, config } => read_config(&config).and_then(|c| eval(&checkpoint, &c)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
