use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{Algorithm, ExperimentConfig};
use super::metrics::{level_index, LevelStats, MetricsRow, MetricsWriter};
use crate::baselines::{fedavg_weights, pooled_learner, run_fed_a, run_fed_ac, run_fed_ac_prox, FedAvgOptions};
use crate::client::{estimate_policy_value, ClientState, ModelSpecs};
use crate::data::{generate_dataset, load_dataset, BehaviorLevel, OfflineDataset, ScriptedPolicy};
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, mean_std};
use crate::nn::{write_params, ParamVector};
use crate::rng::{derive_rng, derive_seed};
use crate::server::{run_round, Aggregation, FederationConfig, RoundReport, ServerState};

pub fn dataset_file_name(client: usize) -> String {
    format!("client_{client}.jsonl")
}

/// Client datasets for one seed, generated from the configured behavior mix
/// or loaded from `data_dir`.
pub fn provision_datasets(config: &ExperimentConfig, seed: u64) -> Result<Vec<Arc<OfflineDataset>>> {
    let levels = config.client_levels();
    let build = |(i, level): (usize, &BehaviorLevel)| -> Result<Arc<OfflineDataset>> {
        let data = match &config.data_dir {
            Some(dir) => load_dataset(&dir.join(dataset_file_name(i)))?,
            None => generate_dataset(
                &config.world,
                &ScriptedPolicy::for_level(*level),
                config.dataset_size,
                derive_seed(seed, "dataset", i as u64),
            )?,
        };
        if data.obs_dim() != config.world.observation_dim() || data.act_dim() != WorldConfig::ACTION_DIM {
            return Err(Error::Shape(format!("client {i}: dataset dimensions do not match the world")));
        }
        Ok(Arc::new(data))
    };
    if config.parallel {
        levels.par_iter().enumerate().map(build).collect()
    } else {
        levels.iter().enumerate().map(build).collect()
    }
}

pub fn metrics_path(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("{}_seed{seed}.csv", config.algorithm))
}

/// Final actor parameters of a seed.
pub fn checkpoint_path(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("{}_seed{seed}_actor.fedp", config.algorithm))
}

/// Everything a seed produced besides the metrics file.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub rows: Vec<MetricsRow>,
    /// Decay coefficient of every client after each round.
    pub local_coeffs: Vec<Vec<f64>>,
    /// Per-round reports of federated algorithms.
    pub reports: Vec<RoundReport>,
    /// Final server (or pooled, or first individual) actor.
    pub actor: ParamVector,
    pub path: PathBuf,
    pub checkpoint: PathBuf,
}

fn group_means(levels: &[BehaviorLevel], entries: impl Iterator<Item = (usize, f64)>) -> LevelStats {
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for (client, v) in entries {
        let k = level_index(levels[client]);
        sums[k] += v;
        counts[k] += 1;
    }
    std::array::from_fn(|k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64))
}

struct Row<'a> {
    config: &'a ExperimentConfig,
    levels: &'a [BehaviorLevel],
    seed: u64,
}

impl Row<'_> {
    #[allow(clippy::too_many_arguments)]
    fn build(
        &self,
        round: usize,
        eval: (f64, f64),
        values: &[f64],
        weights: &[(usize, f64)],
        coeffs: &[f64],
    ) -> MetricsRow {
        MetricsRow {
            algorithm: self.config.algorithm.to_string(),
            seed: self.seed,
            round,
            eval_mean: eval.0,
            eval_std: eval.1,
            n_sampled: weights.len(),
            mean_value: values.iter().sum::<f64>() / values.len() as f64,
            mean_weight: group_means(self.levels, weights.iter().copied()),
            mean_decay: group_means(self.levels, coeffs.iter().copied().enumerate()),
            mean_decay_all: coeffs.iter().sum::<f64>() / coeffs.len() as f64,
        }
    }
}

/// Runs one seed and streams its metrics file.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let path = metrics_path(config, seed);
    let mut writer = MetricsWriter::create(&path)?;
    let result = run_seed_rows(config, seed, &mut writer);
    writer.finish(result.as_ref().map(|_| ()))?;
    let mut outcome = result?;
    outcome.checkpoint = checkpoint_path(config, seed);
    write_params(&outcome.actor, &outcome.checkpoint)?;
    outcome.path = path;
    Ok(outcome)
}

fn run_seed_rows(config: &ExperimentConfig, seed: u64, writer: &mut MetricsWriter) -> Result<SeedOutcome> {
    config.validate()?;
    let datasets = provision_datasets(config, seed)?;
    let levels = config.client_levels();
    let specs = ModelSpecs::new(
        config.world.observation_dim(),
        WorldConfig::ACTION_DIM,
        &config.hidden,
        config.td3bc.max_action,
    )?;
    let cfg = config.client_config();
    let row = Row { config, levels: &levels, seed };
    let mut outcome = SeedOutcome {
        rows: Vec::with_capacity(config.rounds),
        local_coeffs: Vec::with_capacity(config.rounds),
        reports: Vec::new(),
        actor: ParamVector::zeros(specs.actor.clone()),
        path: PathBuf::new(),
        checkpoint: PathBuf::new(),
    };
    let mut emit = |outcome: &mut SeedOutcome, r: MetricsRow, coeffs: Vec<f64>| -> Result<()> {
        writer.write_row(&r)?;
        outcome.rows.push(r);
        outcome.local_coeffs.push(coeffs);
        Ok(())
    };
    let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
    let all_weights: Vec<(usize, f64)> = fedavg_weights(&sizes)?.into_iter().enumerate().collect();

    match config.algorithm {
        Algorithm::Fedora | Algorithm::FedA | Algorithm::FedAc | Algorithm::FedAcProx => {
            let mut server = ServerState::new(&specs, seed);
            let mut clients = datasets
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut c = ClientState::new(i, d.clone(), &specs, &cfg, seed)?;
                    c.reset_models(&server.fed_actor, &server.fed_critics)?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            let fed = FederationConfig {
                aggregation: Aggregation::Priority { beta: config.beta },
                share_critics: true,
                client_fraction: config.client_fraction,
                eval_episodes: config.eval_episodes,
                parallel: config.parallel,
            };
            let opts = FedAvgOptions {
                client_fraction: config.client_fraction,
                eval_episodes: config.eval_episodes,
                parallel: config.parallel,
            };
            for _ in 0..config.rounds {
                let report = match config.algorithm {
                    Algorithm::Fedora => run_round(&mut server, &mut clients, &cfg, &fed, &config.world)?,
                    Algorithm::FedA => single(run_fed_a(&mut server, &mut clients, 1, &cfg, &opts, &config.world)?),
                    Algorithm::FedAc => single(run_fed_ac(&mut server, &mut clients, 1, &cfg, &opts, &config.world)?),
                    _ => single(run_fed_ac_prox(
                        &mut server,
                        &mut clients,
                        1,
                        &cfg,
                        config.fedprox_mu,
                        &opts,
                        &config.world,
                    )?),
                };
                let values: Vec<f64> = report.clients.iter().map(|c| c.value).collect();
                let weights: Vec<(usize, f64)> = report.clients.iter().map(|c| (c.client_id, c.weight)).collect();
                let coeffs: Vec<f64> = clients.iter().map(|c| c.local_coeff()).collect();
                let r = row.build(report.round, (report.eval_mean, report.eval_std), &values, &weights, &coeffs);
                emit(&mut outcome, r, coeffs)?;
                outcome.reports.push(report);
            }
            outcome.actor = server.fed_actor;
        }
        Algorithm::Centralized => {
            let mut learner = pooled_learner(&datasets, &specs, &cfg, seed)?;
            let plain = cfg.clone().plain();
            let total = config.centralized_steps();
            for round in 1..=config.rounds {
                let steps = total * round / config.rounds - total * (round - 1) / config.rounds;
                learner.train_steps(steps, None, &plain)?;
                let eval = evaluate_policy(
                    &learner.actor,
                    &config.world,
                    config.eval_episodes,
                    &mut derive_rng(seed, "evaluate", round as u64),
                )?;
                let value = estimate_policy_value(&learner.actor, &learner.critics, learner.dataset())?;
                let coeffs = vec![1.0; datasets.len()];
                emit(&mut outcome, row.build(round, eval, &[value], &all_weights, &coeffs), coeffs)?;
            }
            outcome.actor = learner.actor;
        }
        Algorithm::Individual => {
            let plain = cfg.clone().plain();
            let mut learners = datasets
                .iter()
                .enumerate()
                .map(|(i, d)| ClientState::new(i, d.clone(), &specs, &plain, seed))
                .collect::<Result<Vec<_>>>()?;
            for round in 1..=config.rounds {
                let step = |l: &mut ClientState| -> Result<(f64, f64)> {
                    l.train_steps(plain.local_steps, None, &plain)?;
                    let (mean, _) = evaluate_policy(
                        &l.actor,
                        &config.world,
                        config.eval_episodes,
                        &mut derive_rng(seed, "evaluate", round as u64),
                    )?;
                    Ok((mean, estimate_policy_value(&l.actor, &l.critics, l.dataset())?))
                };
                let results: Vec<Result<(f64, f64)>> = if config.parallel {
                    learners.par_iter_mut().map(step).collect()
                } else {
                    learners.iter_mut().map(step).collect()
                };
                let results = results.into_iter().collect::<Result<Vec<_>>>()?;
                let returns: Vec<f64> = results.iter().map(|r| r.0).collect();
                let values: Vec<f64> = results.iter().map(|r| r.1).collect();
                let coeffs = vec![1.0; datasets.len()];
                emit(&mut outcome, row.build(round, mean_std(&returns), &values, &all_weights, &coeffs), coeffs)?;
            }
            outcome.actor = learners.swap_remove(0).actor;
        }
    }
    Ok(outcome)
}

fn single(mut reports: Vec<RoundReport>) -> RoundReport {
    reports.pop().expect("one round requested")
}

/// Runs every configured seed; returns the metrics file paths in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let run = |&seed: &u64| run_seed(config, seed).map(|o| o.path);
    if config.parallel {
        config.seeds.par_iter().map(run).collect()
    } else {
        config.seeds.iter().map(run).collect()
    }
}

/// Writes the seed's client datasets to `dir` in the dataset file format.
pub fn write_datasets(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let generate = ExperimentConfig { data_dir: None, ..config.clone() };
    provision_datasets(&generate, seed)?
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let path = dir.join(dataset_file_name(i));
            crate::data::save_dataset(d, &path)?;
            Ok(path)
        })
        .collect()
}
