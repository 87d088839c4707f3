use rand::Rng as _;

use super::{
    check_finite, mse, sizes, ActMode, Agent, AgentConfig, AgentError, AlgoName, Critic,
    CriticKind, UpdateStats,
};
use crate::envs::{Action, ActionSpace};
use crate::nn::{AdamConfig, Mlp, NnError};
use crate::replay::Batch;
use crate::rng::Rng;
use crate::state::StateDict;

/// `y_i = r_i + gamma * max_a' Q_target(s'_i, a') * (1 - done_i)`.
/// Truncated transitions are not `done` and still bootstrap.
pub fn dqn_td_target(batch: &Batch, gamma: f64, target: &Mlp) -> Result<Vec<f64>, NnError> {
    let next = target.forward_batch(batch.next_obs.view())?;
    Ok(next
        .rows()
        .into_iter()
        .zip(&batch.rewards)
        .zip(&batch.done)
        .map(|((row, &r), &done)| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if done {
                r
            } else {
                r + gamma * best
            }
        })
        .collect())
}

/// Deep Q-learning with a hard-copied target network and linearly decayed
/// epsilon-greedy exploration.
#[derive(Debug, Clone)]
pub struct Dqn {
    cfg: AgentConfig,
    critic: Critic,
    n_actions: usize,
    updates: u64,
}

impl Dqn {
    pub fn new<R: rand::Rng + ?Sized>(
        cfg: AgentConfig,
        obs_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let net = Mlp::new(&sizes(obs_dim, hidden, n_actions), cfg.activation, rng)?;
        Ok(Self::from_network(cfg, net))
    }

    /// Wraps an existing Q-network (observation in, one value per action out).
    pub fn from_network(cfg: AgentConfig, net: Mlp) -> Self {
        let n_actions = net.out_dim();
        let obs_dim = net.in_dim();
        let critic = Critic::new(
            net,
            CriticKind::ActionHead,
            obs_dim,
            AdamConfig::with_lr(cfg.lr_critic),
        );
        Self {
            cfg,
            critic,
            n_actions,
            updates: 0,
        }
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Critic {
        &mut self.critic
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self, env_step: u64) -> f64 {
        let c = &self.cfg;
        if c.eps_decay_steps == 0 || env_step >= c.eps_decay_steps {
            return c.eps_end;
        }
        let frac = env_step as f64 / c.eps_decay_steps as f64;
        c.eps_start + frac * (c.eps_end - c.eps_start)
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.critic.net.forward(obs)
    }

    fn greedy(&self, obs: &[f64]) -> usize {
        let q = self
            .q_values(obs)
            .expect("observation width checked by caller");
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        best
    }

    /// Action-selection with an explicit epsilon, bypassing the schedule.
    pub fn act_epsilon(&self, obs: &[f64], epsilon: f64, rng: &mut Rng) -> usize {
        if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..self.n_actions)
        } else {
            self.greedy(obs)
        }
    }
}

impl Agent for Dqn {
    fn algo(&self) -> AlgoName {
        AlgoName::Dqn
    }

    fn act(&self, obs: &[f64], mode: ActMode, env_step: u64, rng: &mut Rng) -> Action {
        Action::Discrete(match mode {
            ActMode::Eval => self.greedy(obs),
            ActMode::Explore => self.act_epsilon(obs, self.epsilon(env_step), rng),
        })
    }

    fn update(&mut self, batch: &Batch, _rng: &mut Rng) -> Result<UpdateStats, AgentError> {
        let y = dqn_td_target(batch, self.cfg.gamma, &self.critic.target)?;
        let (q, cache) = self
            .critic
            .q_cached(batch.obs.view(), batch.encoded_actions.view())?;
        let (loss, dq) = mse(&q, &y);
        check_finite("dqn loss", loss)?;
        let (grads, _) = self.critic.backward(&cache, &dq)?;
        let Critic { net, opt, .. } = &mut self.critic;
        opt.step(net, &grads)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_update_period) {
            let online = self.critic.net.clone();
            self.critic.target.copy_from(&online);
        }
        Ok(UpdateStats {
            critic_loss: loss,
            ..UpdateStats::default()
        })
    }

    fn critics(&self) -> Vec<&Critic> {
        vec![&self.critic]
    }

    fn critics_mut(&mut self) -> Vec<&mut Critic> {
        vec![&mut self.critic]
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.n_actions)
    }

    fn obs_dim(&self) -> usize {
        self.critic.obs_dim()
    }

    fn save_state(&self, dict: &mut StateDict) {
        dict.put_mlp("dqn.q", &self.critic.net);
        dict.put_mlp("dqn.q_target", &self.critic.target);
        dict.put_adam("dqn.q.opt", &self.critic.opt);
        dict.insert("dqn.updates", vec![self.updates as f64]);
    }

    fn load_state(&mut self, dict: &StateDict) -> Result<(), AgentError> {
        dict.load_mlp("dqn.q", &mut self.critic.net)?;
        dict.load_mlp("dqn.q_target", &mut self.critic.target)?;
        dict.load_adam("dqn.q.opt", &mut self.critic.opt)?;
        self.updates = dict.scalar("dqn.updates")? as u64;
        Ok(())
    }
}
