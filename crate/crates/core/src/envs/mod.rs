//! Seedable in-repo control tasks: pendulum swing-up (continuous torque),
//! cart-pole (two discrete pushes) and a five-state chain MDP whose optimal
//! action values are known exactly.
//!
//! Every environment is a plain value type stepped by a pure function, so
//! trajectories are a deterministic function of `(seed, actions)`.

pub mod cartpole;
pub mod chain;
pub mod pendulum;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cartpole::CartPoleState;
pub use chain::ChainState;
pub use pendulum::PendulumState;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid discrete action {0}")]
    InvalidAction(usize),
    #[error("action kind does not match the environment's action space")]
    ActionKind,
    #[error("non-finite action")]
    NonFiniteAction,
    #[error("invalid environment state")]
    InvalidState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Pendulum,
    Cartpole,
    Chain,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Pendulum => "pendulum",
            EnvName::Cartpole => "cartpole",
            EnvName::Chain => "chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Symmetric box `[-high, high]^dim`.
    Box {
        dim: usize,
        high: f64,
    },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Width of an action once encoded as network input (one-hot for
    /// discrete spaces).
    pub fn encoded_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    pub fn encode_into(&self, action: &Action, out: &mut Vec<f64>) {
        match (*self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => {
                out.extend((0..n).map(|i| if i == *a { 1.0 } else { 0.0 }));
            }
            (ActionSpace::Box { .. }, Action::Continuous(u)) => out.extend_from_slice(u),
            _ => panic!("action {action:?} does not belong to {self:?}"),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (*self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => *a < n,
            (ActionSpace::Box { dim, high }, Action::Continuous(u)) => {
                u.len() == dim && u.iter().all(|x| x.is_finite() && x.abs() <= high)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Terminal dynamics reached; no bootstrapping past this step.
    pub done: bool,
    /// Time limit hit without termination.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

/// One live environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Env {
    Pendulum(PendulumState),
    Cartpole(CartPoleState),
    Chain(ChainState),
}

impl Env {
    /// A fresh instance already reset with `seed`.
    pub fn new(name: EnvName, seed: u64) -> Self {
        let mut env = match name {
            EnvName::Pendulum => Env::Pendulum(PendulumState::reset(0)),
            EnvName::Cartpole => Env::Cartpole(CartPoleState::reset(0)),
            EnvName::Chain => Env::Chain(ChainState::reset()),
        };
        env.reset(seed);
        env
    }

    pub fn name(&self) -> EnvName {
        match self {
            Env::Pendulum(_) => EnvName::Pendulum,
            Env::Cartpole(_) => EnvName::Cartpole,
            Env::Chain(_) => EnvName::Chain,
        }
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(self.name())
    }

    pub fn action_space(&self) -> ActionSpace {
        action_space(self.name())
    }

    /// Redraws the initial state from the given seed alone.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        *self = match self {
            Env::Pendulum(_) => Env::Pendulum(PendulumState::reset(seed)),
            Env::Cartpole(_) => Env::Cartpole(CartPoleState::reset(seed)),
            Env::Chain(_) => Env::Chain(ChainState::reset()),
        };
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::Pendulum(s) => s.observation(),
            Env::Cartpole(s) => s.observation(),
            Env::Chain(s) => s.observation(),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let result = match (&*self, action) {
            (Env::Pendulum(s), Action::Continuous(u)) => {
                if u.len() != 1 {
                    return Err(EnvError::ActionKind);
                }
                let (n, r) = s.step(u[0])?;
                *self = Env::Pendulum(n);
                r
            }
            (Env::Cartpole(s), Action::Discrete(a)) => {
                let (n, r) = s.step(*a)?;
                *self = Env::Cartpole(n);
                r
            }
            (Env::Chain(s), Action::Discrete(a)) => {
                let (n, r) = s.step(*a)?;
                *self = Env::Chain(n);
                r
            }
            _ => return Err(EnvError::ActionKind),
        };
        Ok(result)
    }
}

pub fn obs_dim(name: EnvName) -> usize {
    match name {
        EnvName::Pendulum => 3,
        EnvName::Cartpole => 4,
        EnvName::Chain => chain::NUM_STATES,
    }
}

pub fn action_space(name: EnvName) -> ActionSpace {
    match name {
        EnvName::Pendulum => ActionSpace::Box {
            dim: 1,
            high: pendulum::MAX_TORQUE,
        },
        EnvName::Cartpole | EnvName::Chain => ActionSpace::Discrete(2),
    }
}
