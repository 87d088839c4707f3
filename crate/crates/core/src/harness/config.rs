use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::{AgentConfig, AlgoName};
use crate::envs::{self, EnvName};
use crate::imagination::ImaginationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    pub capacity: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self { capacity: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Uniform random actions, no gradient steps.
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Fill `wall_ms` with measured time. Off by default so that runs are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            warmup_steps: 1_000,
            eval_every: 5_000,
            eval_episodes: 10,
            record_wall_time: false,
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub algo: AgentConfig,
    #[serde(default)]
    pub im: ImaginationConfig,
    #[serde(default)]
    pub buffer: BufferConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(env: EnvName, algo: AlgoName) -> Self {
        Self {
            env: EnvConfig { name: env },
            algo: AgentConfig {
                name: algo,
                ..AgentConfig::default()
            },
            im: ImaginationConfig::default(),
            buffer: BufferConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let t = &self.train;
        if t.eval_every == 0 || t.eval_every > t.total_steps.max(1) {
            return bad(format!(
                "train.eval_every must satisfy 1 <= eval_every <= total_steps (got {} and {})",
                t.eval_every, t.total_steps
            ));
        }
        if t.eval_episodes == 0 {
            return bad("train.eval_episodes must be at least 1".into());
        }
        if self.buffer.capacity == 0 {
            return bad("buffer.capacity must be positive".into());
        }
        self.algo
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.im
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let discrete = envs::action_space(self.env.name).is_discrete();
        let ok = match self.algo.name {
            AlgoName::Dqn => discrete,
            AlgoName::Ddpg | AlgoName::Sac => !discrete,
        };
        if !ok {
            return bad(format!(
                "algo.name = {} cannot act in env {}",
                self.algo.name.as_str(),
                self.env.name.as_str()
            ));
        }
        Ok(())
    }
}
