use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use fedora_core::client::ModelSpecs;
use fedora_core::env::WorldConfig;
use fedora_core::eval::episode_returns;
use fedora_core::harness::{
    emit_plot, load_config, run_seed, write_datasets, Algorithm, ExperimentConfig,
};
use fedora_core::nn::read_params;
use fedora_core::numfmt::format_real;
use fedora_core::rng::derive_rng;
use fedora_core::Result;

#[derive(Parser)]
#[command(name = "fedora", version, about = "Federated offline reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the client datasets of one seed.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write one metrics file (and final actor) per seed.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// fedora | fed-a | fed-ac | fed-ac-prox | centralized | individual
        #[arg(long, value_parser = parse_algorithm)]
        algo: Option<Algorithm>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved actor online.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Plot evaluation return curves (mean +/- std over seeds) as SVG.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: fedora_core::Error| e.to_string())
}

fn config_or_default(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let config = config_or_default(config.as_deref())?;
            for path in write_datasets(&config, seed, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Train { config, seed, algo, out } => {
            let mut config = config_or_default(config.as_deref())?;
            if let Some(a) = algo {
                config.algorithm = a;
            }
            if let Some(o) = out {
                config.output_dir = o;
            }
            if let Some(s) = seed {
                config.seeds = vec![s];
            }
            config.validate()?;
            for &s in &config.seeds {
                let outcome = run_seed(&config, s)?;
                let last = outcome.rows.last().expect("at least one round");
                println!(
                    "{} seed {s}: final return {:.3} +/- {:.3} -> {}",
                    config.algorithm,
                    last.eval_mean,
                    last.eval_std,
                    outcome.path.display()
                );
            }
        }
        Command::Eval { config, params, seed, episodes } => {
            let config = config_or_default(config.as_deref())?;
            let specs = ModelSpecs::new(
                config.world.observation_dim(),
                WorldConfig::ACTION_DIM,
                &config.hidden,
                config.td3bc.max_action,
            )?;
            let actor = read_params(&params, Arc::clone(&specs.actor))?;
            let episodes = episodes.unwrap_or(config.eval_episodes);
            let returns = episode_returns(&actor, &config.world, episodes, &mut derive_rng(seed, "evaluate", 0))?;
            let (mean, std) = fedora_core::eval::mean_std(&returns);
            for (i, r) in returns.iter().enumerate() {
                println!("episode {i}: {}", format_real(*r));
            }
            println!("mean {} std {}", format_real(mean), format_real(std));
        }
        Command::Plot { out, metrics } => {
            let inputs: Vec<&Path> = metrics.iter().map(PathBuf::as_path).collect();
            for curve in emit_plot(&inputs, &out)? {
                if let (Some(r), Some(m)) = (curve.rounds.last(), curve.mean.last()) {
                    println!("{}: round {r} mean {m:.3}", curve.algorithm);
                }
            }
        }
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml_string()?);
        }
    }
    Ok(())
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
