//! Comparison algorithms: FedAvg over actors only (Fed-A), over actors and
//! critics (Fed-AC), Fed-AC with a parameter-space proximal penalty
//! (Fed-AC-Prox), pooled-data training and isolated per-client training.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::client::{ClientState, ModelSpecs, TD3BCConfig};
use crate::data::OfflineDataset;
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate_policy;
use crate::nn::{weighted_param_average, ParamVector};
use crate::server::{sample_clients, size_weights, train_sampled, ClientReport, RoundReport, ServerState};

pub const DEFAULT_FEDPROX_MU: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FedA,
    FedAc,
    FedAcProx,
    Centralized,
    Individual,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [Self::FedA, Self::FedAc, Self::FedAcProx, Self::Centralized, Self::Individual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FedA => "fed-a",
            Self::FedAc => "fed-ac",
            Self::FedAcProx => "fed-ac-prox",
            Self::Centralized => "centralized",
            Self::Individual => "individual",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}`")))
    }
}

/// `w_i = |D_i| / sum_j |D_j|`.
pub fn fedavg_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    size_weights(sizes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FedAvgOptions {
    pub client_fraction: f64,
    pub eval_episodes: usize,
    pub parallel: bool,
}

impl Default for FedAvgOptions {
    fn default() -> Self {
        Self { client_fraction: 1.0, eval_episodes: 10, parallel: false }
    }
}

fn run_fedavg(
    server: &mut ServerState,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &TD3BCConfig,
    share_critics: bool,
    opts: &FedAvgOptions,
    world: &WorldConfig,
) -> Result<Vec<RoundReport>> {
    let mut history = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let sampled = sample_clients(clients.len(), opts.client_fraction, &mut server.sampling_rng())?;
        let ids: Vec<usize> = sampled.iter().map(|&k| clients[k].id()).collect();
        let updates = train_sampled(clients, &ids, &server.broadcast(share_critics), cfg, opts.parallel)?;
        let sizes: Vec<usize> = updates.iter().map(|u| u.dataset_size).collect();
        let weights = fedavg_weights(&sizes)?;

        let actors: Vec<_> = updates.iter().map(|u| &u.actor).zip(weights.iter().copied()).collect();
        server.fed_actor = weighted_param_average(&actors)?;
        if share_critics {
            for j in 0..2 {
                let critics: Vec<_> = updates.iter().map(|u| &u.critics[j]).zip(weights.iter().copied()).collect();
                server.fed_critics[j] = weighted_param_average(&critics)?;
            }
        }
        server.round += 1;

        let (eval_mean, eval_std) = evaluate_policy(&server.fed_actor, world, opts.eval_episodes, &mut server.eval_rng())?;
        let uniform = 1.0 / updates.len() as f64;
        let clients = updates
            .iter()
            .zip(&weights)
            .map(|(u, &weight)| ClientReport {
                client_id: u.client_id,
                value: u.value,
                fed_value: u.fed_value,
                priority: uniform,
                weight,
                dataset_size: u.dataset_size,
                local_coeff: u.local_coeff,
            })
            .collect();
        history.push(RoundReport { round: server.round, sampled: ids, clients, eval_mean, eval_std });
    }
    Ok(history)
}

/// FedAvg of actors only; critics stay with their clients.
pub fn run_fed_a(
    server: &mut ServerState,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &TD3BCConfig,
    opts: &FedAvgOptions,
    world: &WorldConfig,
) -> Result<Vec<RoundReport>> {
    run_fedavg(server, clients, rounds, &cfg.clone().plain(), false, opts, world)
}

/// FedAvg of actors and critics.
pub fn run_fed_ac(
    server: &mut ServerState,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &TD3BCConfig,
    opts: &FedAvgOptions,
    world: &WorldConfig,
) -> Result<Vec<RoundReport>> {
    run_fedavg(server, clients, rounds, &cfg.clone().plain(), true, opts, world)
}

/// Fed-AC with `mu / 2 * ||theta - theta_fed||^2` added to every local loss.
#[allow(clippy::too_many_arguments)]
pub fn run_fed_ac_prox(
    server: &mut ServerState,
    clients: &mut [ClientState],
    rounds: usize,
    cfg: &TD3BCConfig,
    mu: f64,
    opts: &FedAvgOptions,
    world: &WorldConfig,
) -> Result<Vec<RoundReport>> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("proximal coefficient must be non-negative, got {mu}")));
    }
    let cfg = TD3BCConfig { fedprox_mu: mu, ..cfg.clone().plain() };
    run_fedavg(server, clients, rounds, &cfg, true, opts, world)
}

/// A single learner over the concatenation of all datasets.
pub fn pooled_learner(
    datasets: &[Arc<OfflineDataset>],
    specs: &ModelSpecs,
    cfg: &TD3BCConfig,
    seed: u64,
) -> Result<ClientState> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("centralized training needs at least one dataset".into()));
    }
    let parts: Vec<&OfflineDataset> = datasets.iter().map(|d| d.as_ref()).collect();
    let pooled = OfflineDataset::concat(&parts, "pooled")?;
    ClientState::new(0, Arc::new(pooled), specs, &cfg.clone().plain(), seed)
}

/// Plain TD3-BC on the pooled data for `steps` iterations.
pub fn train_centralized(
    datasets: &[Arc<OfflineDataset>],
    steps: usize,
    specs: &ModelSpecs,
    cfg: &TD3BCConfig,
    seed: u64,
) -> Result<ParamVector> {
    let mut learner = pooled_learner(datasets, specs, cfg, seed)?;
    learner.train_steps(steps, None, &cfg.clone().plain())?;
    Ok(learner.actor)
}

/// Plain TD3-BC on one client's data for `steps` iterations.
pub fn train_individual(
    id: usize,
    dataset: Arc<OfflineDataset>,
    steps: usize,
    specs: &ModelSpecs,
    cfg: &TD3BCConfig,
    seed: u64,
) -> Result<ParamVector> {
    let cfg = cfg.clone().plain();
    let mut learner = ClientState::new(id, dataset, specs, &cfg, seed)?;
    learner.train_steps(steps, None, &cfg)?;
    Ok(learner.actor)
}
