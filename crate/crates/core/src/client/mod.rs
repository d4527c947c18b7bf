//! One client's local offline RL.
//!
//! A client runs TD3-BC style updates on its own dataset, starting each round
//! from the broadcast federated models. On top of plain TD3-BC the update can
//! bootstrap from the larger of the local and federated critic values, tie the
//! policy to the federated policy's actions, and shrink the weight of the
//! local-data term whenever the federated policy looks at least as good as the
//! freshly trained local one.

pub mod losses;

use std::sync::Arc;

use ndarray::{Array1, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{sample_minibatch, Batch, OfflineDataset};
use crate::error::{Error, Result};
use crate::nn::{forward_batch, AdamState, NetworkSpec, OutputActivation, ParamVector};
use crate::rng::{derive_rng, Rng};

pub use losses::{actor_loss_and_grad, critic_loss_and_grad, proximal_penalty_and_grad, ActorLossWeights};
use losses::{critic_input, pair_min};

pub type CriticPair = [ParamVector; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TD3BCConfig {
    pub gamma: f64,
    /// Weight of the value term relative to behavior cloning.
    pub lambda_bc: f64,
    /// Replace `lambda_bc` by `bc_alpha / mean|Q|` per batch.
    pub normalize_q: bool,
    pub bc_alpha: f64,
    /// Weight of the action-space proximal term towards the federated policy.
    pub prox_coeff: f64,
    /// Parameter-space proximal weight `mu` applied to actor and critics.
    pub fedprox_mu: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub tau: f64,
    /// Local gradient steps per round.
    pub local_steps: usize,
    pub batch_size: usize,
    /// Decay factor for the local-data coefficient; 1 disables decay.
    pub decay: f64,
    /// Bootstrap from `max(local, federated)` critic values.
    pub optimism: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub max_action: f64,
}

impl Default for TD3BCConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_bc: 1.0,
            normalize_q: false,
            bc_alpha: 2.5,
            prox_coeff: 1.0,
            fedprox_mu: 0.0,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            tau: 0.005,
            local_steps: 40,
            batch_size: 256,
            decay: 0.995,
            optimism: true,
            actor_lr: AdamState::DEFAULT_LEARNING_RATE,
            critic_lr: AdamState::DEFAULT_LEARNING_RATE,
            max_action: 1.0,
        }
    }
}

impl TD3BCConfig {
    /// Plain TD3-BC: no optimism, no proximal terms, no decay.
    pub fn plain(self) -> Self {
        Self { optimism: false, prox_coeff: 0.0, fedprox_mu: 0.0, decay: 1.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("td3bc.{k}");
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(key("gamma"), format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(key("decay"), format!("must lie in (0, 1], got {}", self.decay)));
        }
        if self.local_steps < 1 {
            return Err(Error::config(key("local_steps"), "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config(key("batch_size"), "must be at least 1"));
        }
        if self.policy_delay < 1 {
            return Err(Error::config(key("policy_delay"), "must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(key("tau"), format!("must lie in (0, 1], got {}", self.tau)));
        }
        for (k, v) in [
            ("lambda_bc", self.lambda_bc),
            ("bc_alpha", self.bc_alpha),
            ("prox_coeff", self.prox_coeff),
            ("fedprox_mu", self.fedprox_mu),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key(k), format!("must be non-negative, got {v}")));
            }
        }
        if !(self.max_action > 0.0) {
            return Err(Error::config(key("max_action"), "must be positive"));
        }
        Ok(())
    }
}

/// `max(q_local, q_fed)` when optimism is enabled, else `q_local`.
pub fn optimistic_target(q_local: f64, q_fed: f64, optimism: bool) -> f64 {
    if optimism {
        q_local.max(q_fed)
    } else {
        q_local
    }
}

/// Network shapes shared by every participant of a run.
#[derive(Clone, Debug)]
pub struct ModelSpecs {
    pub actor: Arc<NetworkSpec>,
    pub critic: Arc<NetworkSpec>,
}

impl ModelSpecs {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], max_action: f64) -> Result<Self> {
        let actor = NetworkSpec::new(
            obs_dim,
            hidden.to_vec(),
            act_dim,
            OutputActivation::BoundedSquash { bound: max_action },
        )?;
        let critic = NetworkSpec::new(obs_dim + act_dim, hidden.to_vec(), 1, OutputActivation::Linear)?;
        Ok(Self { actor: Arc::new(actor), critic: Arc::new(critic) })
    }

    pub fn init_actor(&self, rng: &mut Rng) -> ParamVector {
        ParamVector::init_uniform(self.actor.clone(), rng)
    }

    pub fn init_critics(&self, rng: &mut Rng) -> CriticPair {
        [
            ParamVector::init_uniform(self.critic.clone(), rng),
            ParamVector::init_uniform(self.critic.clone(), rng),
        ]
    }
}

/// Models a client receives at the start of a round. Critics are absent
/// when only the actor is federated.
#[derive(Clone, Copy, Debug)]
pub struct Broadcast<'a> {
    pub actor: &'a ParamVector,
    pub critics: Option<&'a CriticPair>,
}

/// What a client sends back to the server after a round.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub actor: ParamVector,
    pub critics: CriticPair,
    /// Proxy value of the updated local policy under the updated local critics.
    pub value: f64,
    /// Proxy value of the broadcast policy under the broadcast critics.
    pub fed_value: Option<f64>,
    pub dataset_size: usize,
    pub local_coeff: f64,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    id: usize,
    dataset: Arc<OfflineDataset>,
    pub actor: ParamVector,
    pub critics: CriticPair,
    pub critic_targets: CriticPair,
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    local_coeff: f64,
    iterations: u64,
    rng: Rng,
}

impl ClientState {
    pub fn new(id: usize, dataset: Arc<OfflineDataset>, specs: &ModelSpecs, cfg: &TD3BCConfig, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument(format!("client {id} has an empty dataset")));
        }
        if specs.actor.input_dim != dataset.obs_dim() || specs.actor.output_dim != dataset.act_dim() {
            return Err(Error::Shape(format!("client {id}: dataset dims do not match the actor network")));
        }
        let mut init_rng = derive_rng(seed, "client-init", id as u64);
        let actor = specs.init_actor(&mut init_rng);
        let critics = specs.init_critics(&mut init_rng);
        Ok(Self {
            id,
            dataset,
            actor_opt: AdamState::for_params(&actor, cfg.actor_lr),
            critic_opts: [
                AdamState::for_params(&critics[0], cfg.critic_lr),
                AdamState::for_params(&critics[1], cfg.critic_lr),
            ],
            critic_targets: critics.clone(),
            actor,
            critics,
            local_coeff: 1.0,
            iterations: 0,
            rng: derive_rng(seed, "client-train", id as u64),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dataset(&self) -> &Arc<OfflineDataset> {
        &self.dataset
    }

    pub fn local_coeff(&self) -> f64 {
        self.local_coeff
    }

    pub fn set_local_coeff(&mut self, c: f64) {
        self.local_coeff = c;
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Overwrites the local actor (and critics, when broadcast). Target
    /// critics and optimizer moments stay local.
    pub fn load_broadcast(&mut self, broadcast: &Broadcast) -> Result<()> {
        self.actor.copy_from(broadcast.actor)?;
        if let Some(critics) = broadcast.critics {
            for j in 0..2 {
                self.critics[j].copy_from(&critics[j])?;
            }
        }
        Ok(())
    }

    /// Replaces actor, critics and target critics, e.g. with a shared
    /// initialization before the first round.
    pub fn reset_models(&mut self, actor: &ParamVector, critics: &CriticPair) -> Result<()> {
        self.actor.copy_from(actor)?;
        for j in 0..2 {
            self.critics[j].copy_from(&critics[j])?;
            self.critic_targets[j].copy_from(&critics[j])?;
        }
        Ok(())
    }

    /// Bootstrapped targets `r + gamma * (1 - done) * max(min local target, min federated)`.
    pub fn bellman_targets(&mut self, batch: &Batch, broadcast: Option<&Broadcast>, cfg: &TD3BCConfig) -> Result<Array1<f64>> {
        let mut next_actions = forward_batch(&self.actor, batch.next_obs.view())?;
        if cfg.target_noise > 0.0 {
            let clip = cfg.noise_clip * cfg.max_action;
            for a in next_actions.iter_mut() {
                let eps: f64 = StandardNormal.sample(&mut self.rng);
                *a = (*a + (eps * cfg.target_noise * cfg.max_action).clamp(-clip, clip))
                    .clamp(-cfg.max_action, cfg.max_action);
            }
        }
        let input = critic_input(batch.next_obs.view(), next_actions.view());
        let mut bootstrap = pair_min(&self.critic_targets, input.view())?;
        if cfg.optimism {
            if let Some(fed) = broadcast.and_then(|b| b.critics) {
                let fed_q = pair_min(fed, input.view())?;
                Zip::from(&mut bootstrap).and(&fed_q).for_each(|q, &f| *q = optimistic_target(*q, f, true));
            }
        }
        let mut y = batch.rew.clone();
        Zip::from(&mut y)
            .and(&bootstrap)
            .and(&batch.done)
            .for_each(|y, &q, &d| *y += cfg.gamma * (1.0 - d) * q);
        Ok(y)
    }

    /// One gradient step on both local critics; returns the summed loss.
    pub fn critic_update(&mut self, batch: &Batch, broadcast: Option<&Broadcast>, cfg: &TD3BCConfig) -> Result<f64> {
        let targets = self.bellman_targets(batch, broadcast, cfg)?;
        let mut total = 0.0;
        let mut all_grads = Vec::with_capacity(2);
        for j in 0..2 {
            let (loss, mut grads) = critic_loss_and_grad(&self.critics[j], batch, targets.view())?;
            total += loss;
            if cfg.fedprox_mu > 0.0 {
                if let Some(fed) = broadcast.and_then(|b| b.critics) {
                    let (penalty, g) = proximal_penalty_and_grad(&self.critics[j], &fed[j], cfg.fedprox_mu)?;
                    total += penalty;
                    grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            all_grads.push(grads);
        }
        for (j, grads) in all_grads.iter().enumerate() {
            self.critic_opts[j].apply(&mut self.critics[j], grads)?;
            self.critic_targets[j].polyak_update(&self.critics[j], cfg.tau)?;
        }
        Ok(total)
    }

    fn lambda(&self, batch: &Batch, cfg: &TD3BCConfig) -> Result<f64> {
        if !cfg.normalize_q {
            return Ok(cfg.lambda_bc);
        }
        let pi = forward_batch(&self.actor, batch.obs.view())?;
        let q = losses::q_values(&self.critics[0], critic_input(batch.obs.view(), pi.view()).view())?;
        let mean_abs = q.mapv(f64::abs).mean().unwrap_or(0.0);
        Ok(cfg.bc_alpha / mean_abs.max(1e-8))
    }

    /// One gradient step on the actor objective.
    pub fn actor_update(&mut self, batch: &Batch, broadcast: Option<&Broadcast>, cfg: &TD3BCConfig) -> Result<f64> {
        let weights = ActorLossWeights {
            local_coeff: self.local_coeff,
            lambda: self.lambda(batch, cfg)?,
            prox_coeff: if broadcast.is_some() { cfg.prox_coeff } else { 0.0 },
        };
        let (mut loss, mut grads) =
            actor_loss_and_grad(&self.actor, &self.critics[0], batch, broadcast.map(|b| b.actor), weights)?;
        if cfg.fedprox_mu > 0.0 {
            if let Some(b) = broadcast {
                let (penalty, g) = proximal_penalty_and_grad(&self.actor, b.actor, cfg.fedprox_mu)?;
                loss += penalty;
                grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        self.actor_opt.apply(&mut self.actor, &grads)?;
        Ok(loss)
    }

    /// `steps` TD3 iterations (critic every step, actor every `policy_delay`).
    pub fn train_steps(&mut self, steps: usize, broadcast: Option<&Broadcast>, cfg: &TD3BCConfig) -> Result<()> {
        for _ in 0..steps {
            let batch = sample_minibatch(&self.dataset, cfg.batch_size, &mut self.rng)?;
            self.critic_update(&batch, broadcast, cfg)?;
            self.iterations += 1;
            if self.iterations.is_multiple_of(cfg.policy_delay) {
                self.actor_update(&batch, broadcast, cfg)?;
            }
        }
        Ok(())
    }

    /// Shrinks the local-data coefficient by `delta` when `fed_value >= local_value`.
    pub fn maybe_decay(&mut self, fed_value: f64, local_value: f64, delta: f64) {
        if fed_value >= local_value {
            self.local_coeff *= delta;
        }
    }

    /// One federated round of local training starting from `broadcast`.
    pub fn train_client(&mut self, broadcast: &Broadcast, cfg: &TD3BCConfig) -> Result<ClientUpdate> {
        self.load_broadcast(broadcast)?;
        self.train_steps(cfg.local_steps, Some(broadcast), cfg)?;
        let fed_value = match broadcast.critics {
            Some(fed) => Some(estimate_policy_value(broadcast.actor, fed, &self.dataset)?),
            None => None,
        };
        let value = estimate_policy_value(&self.actor, &self.critics, &self.dataset)?;
        if let Some(fed_value) = fed_value {
            self.maybe_decay(fed_value, value, cfg.decay);
        }
        Ok(ClientUpdate {
            client_id: self.id,
            actor: self.actor.clone(),
            critics: self.critics.clone(),
            value,
            fed_value,
            dataset_size: self.dataset.len(),
            local_coeff: self.local_coeff,
        })
    }
}

/// Mean over all dataset states of `min_j Q_j(s, actor(s))`.
pub fn estimate_policy_value(actor: &ParamVector, critics: &CriticPair, dataset: &OfflineDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot estimate a policy value on an empty dataset".into()));
    }
    let obs = dataset.observations();
    let actions = forward_batch(actor, obs)?;
    let q = pair_min(critics, critic_input(obs, actions.view()).view())?;
    Ok(q.sum_axis(Axis(0)).into_scalar() / dataset.len() as f64)
}
