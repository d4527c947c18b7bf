//! Federation server: client sampling, priority-weighted aggregation and
//! round orchestration.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{Broadcast, ClientState, ClientUpdate, CriticPair, ModelSpecs, TD3BCConfig};
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate_policy;
use crate::nn::{weighted_param_average, ParamVector};
use crate::rng::{derive_rng, Rng};

pub const DEFAULT_BETA: f64 = 0.1;

/// Softmax of `beta * values`, computed with max-subtraction.
pub fn compute_priorities(values: &[f64], beta: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("priorities need at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("policy value {v}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be non-negative, got {beta}")));
    }
    let max = values.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (beta * v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `w_i = p_i |D_i| / sum_j p_j |D_j|`.
pub fn compute_weights(priorities: &[f64], sizes: &[usize]) -> Result<Vec<f64>> {
    if priorities.len() != sizes.len() {
        return Err(Error::Shape(format!("{} priorities for {} dataset sizes", priorities.len(), sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    // relative to the largest priority, so uniform priorities give exact size weights
    let p_max = priorities.iter().copied().fold(0.0, f64::max);
    let raw: Vec<f64> = priorities.iter().zip(sizes).map(|(p, &n)| p / p_max * n as f64).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    Ok(raw.into_iter().map(|r| r / total).collect())
}

pub fn federate_actor(actors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if actors.len() != weights.len() {
        return Err(Error::Shape(format!("{} actors for {} weights", actors.len(), weights.len())));
    }
    let entries: Vec<_> = actors.iter().copied().zip(weights.iter().copied()).collect();
    weighted_param_average(&entries)
}

/// Averages each critic of the pair position-wise.
pub fn federate_critic(critics: &[&CriticPair], weights: &[f64]) -> Result<CriticPair> {
    let first: Vec<_> = critics.iter().map(|c| &c[0]).collect();
    let second: Vec<_> = critics.iter().map(|c| &c[1]).collect();
    Ok([federate_actor(&first, weights)?, federate_actor(&second, weights)?])
}

/// `ceil(fraction * n)` distinct ids in `0..n`, returned in ascending order.
pub fn sample_clients(n: usize, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("client fraction must lie in (0, 1], got {fraction}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no clients to sample from".into()));
    }
    let m = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut ids = sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregation {
    /// Softmax priorities over the returned policy values, times dataset size.
    Priority { beta: f64 },
    /// Plain dataset-size proportional averaging.
    SizeProportional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederationConfig {
    pub aggregation: Aggregation,
    /// Broadcast and aggregate critics as well as the actor.
    pub share_critics: bool,
    pub client_fraction: f64,
    pub eval_episodes: usize,
    /// Train sampled clients concurrently.
    pub parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Priority { beta: DEFAULT_BETA },
            share_critics: true,
            client_fraction: 1.0,
            eval_episodes: 10,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub fed_actor: ParamVector,
    pub fed_critics: CriticPair,
    pub round: usize,
    pub seed: u64,
}

impl ServerState {
    pub fn new(specs: &ModelSpecs, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "server-init", 0);
        let fed_actor = specs.init_actor(&mut rng);
        let fed_critics = specs.init_critics(&mut rng);
        Self { fed_actor, fed_critics, round: 0, seed }
    }

    pub fn broadcast(&self, share_critics: bool) -> Broadcast<'_> {
        Broadcast { actor: &self.fed_actor, critics: share_critics.then_some(&self.fed_critics) }
    }

    pub fn sampling_rng(&self) -> Rng {
        derive_rng(self.seed, "sample-clients", self.round as u64)
    }

    pub fn eval_rng(&self) -> Rng {
        derive_rng(self.seed, "evaluate", self.round as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: usize,
    pub value: f64,
    pub fed_value: Option<f64>,
    pub priority: f64,
    pub weight: f64,
    pub dataset_size: usize,
    pub local_coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// One-based index of the completed round.
    pub round: usize,
    pub sampled: Vec<usize>,
    pub clients: Vec<ClientReport>,
    pub eval_mean: f64,
    pub eval_std: f64,
}

/// Trains the given clients from one broadcast. Results come back in the
/// order of `ids` regardless of scheduling.
pub fn train_sampled(
    clients: &mut [ClientState],
    ids: &[usize],
    broadcast: &Broadcast,
    cfg: &TD3BCConfig,
    parallel: bool,
) -> Result<Vec<ClientUpdate>> {
    let mut selected: Vec<&mut ClientState> = clients.iter_mut().filter(|c| ids.contains(&c.id())).collect();
    if selected.len() != ids.len() {
        return Err(Error::InvalidArgument("sampled client id not present".into()));
    }
    let updates: Vec<Result<ClientUpdate>> = if parallel {
        selected.par_iter_mut().map(|c| c.train_client(broadcast, cfg)).collect()
    } else {
        selected.iter_mut().map(|c| c.train_client(broadcast, cfg)).collect()
    };
    let mut updates = updates.into_iter().collect::<Result<Vec<_>>>()?;
    updates.sort_by_key(|u| ids.iter().position(|&i| i == u.client_id));
    Ok(updates)
}

/// Executes one federation round and advances `server.round`.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &TD3BCConfig,
    fed: &FederationConfig,
    world: &WorldConfig,
) -> Result<RoundReport> {
    let sampled = sample_clients(clients.len(), fed.client_fraction, &mut server.sampling_rng())?;
    let ids: Vec<usize> = sampled.iter().map(|&k| clients[k].id()).collect();
    let updates = train_sampled(clients, &ids, &server.broadcast(fed.share_critics), cfg, fed.parallel)?;

    let values: Vec<f64> = updates.iter().map(|u| u.value).collect();
    let sizes: Vec<usize> = updates.iter().map(|u| u.dataset_size).collect();
    let priorities = match fed.aggregation {
        Aggregation::Priority { beta } => compute_priorities(&values, beta)?,
        Aggregation::SizeProportional => vec![1.0 / updates.len() as f64; updates.len()],
    };
    let weights = match fed.aggregation {
        Aggregation::Priority { .. } => compute_weights(&priorities, &sizes)?,
        Aggregation::SizeProportional => size_weights(&sizes)?,
    };

    let actors: Vec<_> = updates.iter().map(|u| &u.actor).collect();
    server.fed_actor = federate_actor(&actors, &weights)?;
    if fed.share_critics {
        let critics: Vec<_> = updates.iter().map(|u| &u.critics).collect();
        server.fed_critics = federate_critic(&critics, &weights)?;
    }
    server.round += 1;

    let (eval_mean, eval_std) = evaluate_policy(&server.fed_actor, world, fed.eval_episodes, &mut server.eval_rng())?;
    let clients = updates
        .iter()
        .zip(priorities.iter().zip(&weights))
        .map(|(u, (&priority, &weight))| ClientReport {
            client_id: u.client_id,
            value: u.value,
            fed_value: u.fed_value,
            priority,
            weight,
            dataset_size: u.dataset_size,
            local_coeff: u.local_coeff,
        })
        .collect();
    Ok(RoundReport { round: server.round, sampled: ids, clients, eval_mean, eval_std })
}

/// `w_i = |D_i| / sum_j |D_j|`.
pub fn size_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no dataset sizes given".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}
