//! Off-policy TD agents behind one interface: act, update, and access to
//! the critics that the imagination module regresses.

mod actor;
mod critic;
mod ddpg;
mod dqn;
mod sac;

pub use actor::{DeterministicActor, GaussianActor, GaussianSample, LOG_STD_MAX, LOG_STD_MIN};
pub use critic::{Critic, CriticCache, CriticKind};
pub use ddpg::Ddpg;
pub use dqn::Dqn;
pub use sac::Sac;

pub(crate) use critic::hcat;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{self, Action, ActionSpace, EnvName};
use crate::nn::{Activation, NnError};
use crate::replay::Batch;
use crate::rng::Rng;
use crate::state::{StateDict, StateError};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("non-finite {what} ({value})")]
    NonFiniteLoss { what: &'static str, value: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{algo} cannot drive a {space} action space")]
    Incompatible {
        algo: &'static str,
        space: &'static str,
    },
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoName {
    Dqn,
    Ddpg,
    Sac,
}

impl AlgoName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgoName::Dqn => "dqn",
            AlgoName::Ddpg => "ddpg",
            AlgoName::Sac => "sac",
        }
    }
}

/// Hyperparameters for every supported algorithm; each agent reads the
/// fields relevant to it. Serialized as the `algo` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub name: AlgoName,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    /// DQN: gradient steps between hard target copies.
    pub target_update_period: u64,
    /// DDPG/SAC: target <- (1 - polyak) * target + polyak * online.
    pub polyak: f64,
    /// SAC entropy coefficient (fixed).
    pub alpha: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    /// DDPG Gaussian noise std as a fraction of the action bound.
    pub exploration_noise: f64,
    /// Hidden widths; `None` picks 2x256 for pendulum and 2x64 otherwise.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            name: AlgoName::Sac,
            gamma: 0.99,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            batch_size: 128,
            target_update_period: 500,
            polyak: 0.005,
            alpha: 0.2,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 10_000,
            exploration_noise: 0.1,
            hidden: None,
            activation: Activation::Tanh,
        }
    }
}

impl AgentConfig {
    pub fn hidden_for(&self, env: EnvName) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match env {
            EnvName::Pendulum => vec![256, 256],
            EnvName::Cartpole | EnvName::Chain => vec![64, 64],
        })
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::Config(msg.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.target_update_period == 0 {
            return bad("target_update_period must be positive");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0) || !(self.exploration_noise >= 0.0) {
            return bad("alpha and exploration_noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return bad("epsilon schedule endpoints must lie in [0, 1]");
        }
        if self
            .hidden
            .as_ref()
            .is_some_and(|h| h.contains(&0))
        {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Explore,
    Eval,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Entropy coefficient used (SAC); zero otherwise.
    pub alpha: f64,
}

pub trait Agent: Send {
    fn algo(&self) -> AlgoName;

    /// Chooses an action. `env_step` drives exploration schedules.
    fn act(&self, obs: &[f64], mode: ActMode, env_step: u64, rng: &mut Rng) -> Action;

    /// One gradient step on a minibatch.
    fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats, AgentError>;

    fn critics(&self) -> Vec<&Critic>;

    fn critics_mut(&mut self) -> Vec<&mut Critic>;

    fn action_space(&self) -> ActionSpace;

    fn obs_dim(&self) -> usize;

    fn save_state(&self, dict: &mut StateDict);

    fn load_state(&mut self, dict: &StateDict) -> Result<(), AgentError>;
}

/// Builds the configured agent for `env`, initializing networks from `rng`.
pub fn build_agent(
    cfg: &AgentConfig,
    env: EnvName,
    rng: &mut Rng,
) -> Result<Box<dyn Agent>, AgentError> {
    cfg.validate()?;
    let space = envs::action_space(env);
    let obs_dim = envs::obs_dim(env);
    let hidden = cfg.hidden_for(env);
    let incompatible = |space| AgentError::Incompatible {
        algo: cfg.name.as_str(),
        space,
    };
    Ok(match (cfg.name, space) {
        (AlgoName::Dqn, ActionSpace::Discrete(n)) => {
            Box::new(Dqn::new(cfg.clone(), obs_dim, n, &hidden, rng)?)
        }
        (AlgoName::Dqn, _) => return Err(incompatible("continuous")),
        (AlgoName::Ddpg, ActionSpace::Box { dim, high }) => {
            Box::new(Ddpg::new(cfg.clone(), obs_dim, dim, high, &hidden, rng)?)
        }
        (AlgoName::Sac, ActionSpace::Box { dim, high }) => {
            Box::new(Sac::new(cfg.clone(), obs_dim, dim, high, &hidden, rng)?)
        }
        (_, _) => return Err(incompatible("discrete")),
    })
}

pub(crate) fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

/// Mean squared error and its gradient w.r.t. predictions.
pub(crate) fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, y)| 2.0 * (p - y) / n)
        .collect();
    (loss, grad)
}

pub(crate) fn check_finite(what: &'static str, value: f64) -> Result<f64, AgentError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AgentError::NonFiniteLoss { what, value })
    }
}
