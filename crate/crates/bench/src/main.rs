use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsclust_bench::config::SynthConfig;
use tsclust_bench::dataset;
use tsclust_bench::report::{emit_multi_report, emit_report};
use tsclust_bench::{run_experiment, run_multivariate_comparison, BenchError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "bench", about = "Benchmark clustering forecasters against naive baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every configured model for every K and write report tables.
    Run { config: PathBuf },
    /// Generate a synthetic dataset with ground-truth labels.
    Synth { spec: PathBuf },
    /// Compare one multivariate model with two combined univariate models.
    CompareMulti { config: PathBuf },
}

/// `bench synth` file: the `[synth]` keys at top level plus `out_dir`.
#[derive(serde::Deserialize)]
struct SynthFile {
    out_dir: PathBuf,
    #[serde(flatten)]
    synth: SynthConfig,
}

fn synth(spec: &PathBuf) -> Result<PathBuf, BenchError> {
    let text = std::fs::read_to_string(spec).map_err(|e| BenchError::ConfigInvalid(format!("{}: {e}", spec.display())))?;
    let file: SynthFile = toml::from_str(&text).map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
    let ds = dataset::generate(&file.synth, file.synth.seed.unwrap_or(0))?;
    let out = spec.parent().unwrap_or(std::path::Path::new(".")).join(&file.out_dir);
    dataset::write_dataset(&ds, &out)?;
    Ok(out)
}

fn run(cli: Cli) -> Result<PathBuf, BenchError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = run_experiment(&cfg)?;
            emit_report(&report, &cfg.out_dir)?;
            Ok(cfg.out_dir)
        }
        Command::Synth { spec } => synth(&spec),
        Command::CompareMulti { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let report = run_multivariate_comparison(&cfg)?;
            emit_multi_report(&report, &cfg.out_dir)?;
            Ok(cfg.out_dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BenchError::ConfigInvalid(_) => 2,
                BenchError::DataLoad(_) => 3,
                _ => 1,
            })
        }
    }
}
