use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, DEFAULT_FEDPROX_MU};
use crate::client::TD3BCConfig;
use crate::data::BehaviorLevel;
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::server::DEFAULT_BETA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fedora,
    FedA,
    FedAc,
    FedAcProx,
    Centralized,
    Individual,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] =
        [Self::Fedora, Self::FedA, Self::FedAc, Self::FedAcProx, Self::Centralized, Self::Individual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fedora => "fedora",
            Self::FedA => "fed-a",
            Self::FedAc => "fed-ac",
            Self::FedAcProx => "fed-ac-prox",
            Self::Centralized => "centralized",
            Self::Individual => "individual",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Fedora => None,
            Self::FedA => Some(BaselineKind::FedA),
            Self::FedAc => Some(BaselineKind::FedAc),
            Self::FedAcProx => Some(BaselineKind::FedAcProx),
            Self::Centralized => Some(BaselineKind::Centralized),
            Self::Individual => Some(BaselineKind::Individual),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// `count` clients whose data comes from the scripted `level` policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientGroup {
    pub level: BehaviorLevel,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub n_clients: usize,
    pub clients: Vec<ClientGroup>,
    /// Transitions per client dataset.
    pub dataset_size: usize,
    /// Load `client_<i>.jsonl` from here instead of generating datasets.
    pub data_dir: Option<PathBuf>,
    pub rounds: usize,
    /// Local epochs per round; local steps = epochs * ceil(dataset_size / batch_size).
    pub epochs: usize,
    pub client_fraction: f64,
    pub beta: f64,
    pub fedprox_mu: f64,
    /// Gradient steps for centralized training; defaults to rounds * local steps.
    pub centralized_steps: Option<usize>,
    pub hidden: Vec<usize>,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    /// Train sampled clients on the rayon pool.
    pub parallel: bool,
    pub td3bc: TD3BCConfig,
    pub world: WorldConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fedora,
            seeds: vec![0, 1, 2, 3],
            n_clients: 20,
            clients: vec![
                ClientGroup { level: BehaviorLevel::Expert, count: 10 },
                ClientGroup { level: BehaviorLevel::Medium, count: 10 },
            ],
            dataset_size: 2000,
            data_dir: None,
            rounds: 100,
            epochs: 5,
            client_fraction: 0.4,
            beta: DEFAULT_BETA,
            fedprox_mu: DEFAULT_FEDPROX_MU,
            centralized_steps: None,
            hidden: vec![256, 256],
            eval_episodes: 10,
            output_dir: PathBuf::from("runs"),
            parallel: false,
            td3bc: TD3BCConfig::default(),
            world: WorldConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut key = e.path().to_string();
            let message = e.into_inner().to_string();
            if let Some(field) = message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                key = if key == "." { field.to_string() } else { format!("{key}.{field}") };
            }
            Error::config(key, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_clients", self.n_clients),
            ("dataset_size", self.dataset_size),
            ("rounds", self.rounds),
            ("epochs", self.epochs),
            ("eval_episodes", self.eval_episodes),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        for (i, g) in self.clients.iter().enumerate() {
            if g.count == 0 {
                return Err(Error::config(format!("clients[{i}].count"), "must be positive"));
            }
        }
        let total: usize = self.clients.iter().map(|g| g.count).sum();
        if total != self.n_clients {
            return Err(Error::config(
                "clients",
                format!("group counts sum to {total} but n_clients is {}", self.n_clients),
            ));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config("client_fraction", format!("must lie in (0, 1], got {}", self.client_fraction)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", format!("must be non-negative, got {}", self.beta)));
        }
        if !(self.fedprox_mu.is_finite() && self.fedprox_mu >= 0.0) {
            return Err(Error::config("fedprox_mu", format!("must be non-negative, got {}", self.fedprox_mu)));
        }
        if self.centralized_steps == Some(0) {
            return Err(Error::config("centralized_steps", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        self.td3bc.validate()?;
        self.world.validate()
    }

    /// Local gradient steps per round.
    pub fn local_steps(&self) -> usize {
        self.epochs * self.dataset_size.div_ceil(self.td3bc.batch_size)
    }

    /// Client configuration with the local step count derived from `epochs`.
    pub fn client_config(&self) -> TD3BCConfig {
        TD3BCConfig { local_steps: self.local_steps(), ..self.td3bc.clone() }
    }

    pub fn centralized_steps(&self) -> usize {
        self.centralized_steps.unwrap_or(self.rounds * self.local_steps())
    }

    /// Behavior level of each client in id order.
    pub fn client_levels(&self) -> Vec<BehaviorLevel> {
        self.clients.iter().flat_map(|g| std::iter::repeat_n(g.level, g.count)).collect()
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.to_toml_string()?).map_err(|e| Error::io(path, e))
}
