use ndarray::{Array2, ArrayView2};

use super::{
    check_finite, mse, sizes, ActMode, Agent, AgentConfig, AgentError, AlgoName, Critic,
    CriticKind, GaussianActor, UpdateStats,
};
use crate::envs::{Action, ActionSpace};
use crate::nn::{ema_update, AdamConfig, Mlp};
use crate::replay::Batch;
use crate::rng::Rng;
use crate::state::StateDict;

/// Soft actor-critic with twin critics, Polyak targets and a fixed entropy
/// coefficient.
#[derive(Debug, Clone)]
pub struct Sac {
    cfg: AgentConfig,
    actor: GaussianActor,
    critics: [Critic; 2],
    obs_dim: usize,
}

impl Sac {
    pub fn new<R: rand::Rng + ?Sized>(
        cfg: AgentConfig,
        obs_dim: usize,
        act_dim: usize,
        high: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let actor = Mlp::new(&sizes(obs_dim, hidden, 2 * act_dim), cfg.activation, rng)?;
        let q1 = Mlp::new(&sizes(obs_dim + act_dim, hidden, 1), cfg.activation, rng)?;
        let q2 = Mlp::new(&sizes(obs_dim + act_dim, hidden, 1), cfg.activation, rng)?;
        Ok(Self::from_networks(cfg, actor, [q1, q2], high))
    }

    /// `actor` must emit `[mean | log_std]`, i.e. twice the action width.
    pub fn from_networks(cfg: AgentConfig, actor: Mlp, critics: [Mlp; 2], high: f64) -> Self {
        let obs_dim = actor.in_dim();
        let act_dim = actor.out_dim() / 2;
        let critic = |net| {
            Critic::new(
                net,
                CriticKind::StateAction,
                obs_dim,
                AdamConfig::with_lr(cfg.lr_critic),
            )
        };
        let [q1, q2] = critics;
        Self {
            actor: GaussianActor::new(actor, act_dim, high, AdamConfig::with_lr(cfg.lr_actor)),
            critics: [critic(q1), critic(q2)],
            cfg,
            obs_dim,
        }
    }

    pub fn actor(&self) -> &GaussianActor {
        &self.actor
    }

    pub fn twin(&self) -> &[Critic; 2] {
        &self.critics
    }

    pub fn twin_mut(&mut self) -> &mut [Critic; 2] {
        &mut self.critics
    }

    /// Soft TD target with externally supplied next-state noise.
    pub fn td_target(
        &self,
        batch: &Batch,
        next_noise: Array2<f64>,
    ) -> Result<Vec<f64>, AgentError> {
        let sample = self.actor.sample(batch.next_obs.view(), next_noise)?;
        let q1 = self.critics[0].q_target(batch.next_obs.view(), sample.actions.view())?;
        let q2 = self.critics[1].q_target(batch.next_obs.view(), sample.actions.view())?;
        let (gamma, alpha) = (self.cfg.gamma, self.cfg.alpha);
        Ok((0..batch.len())
            .map(|i| {
                let soft = q1[i].min(q2[i]) - alpha * sample.log_prob[i];
                batch.rewards[i] + if batch.done[i] { 0.0 } else { gamma * soft }
            })
            .collect())
    }
}

impl Agent for Sac {
    fn algo(&self) -> AlgoName {
        AlgoName::Sac
    }

    fn act(&self, obs: &[f64], mode: ActMode, _env_step: u64, rng: &mut Rng) -> Action {
        let row = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
        let a = match mode {
            ActMode::Eval => self.actor.mean_action(row),
            ActMode::Explore => {
                let noise = self.actor.draw_noise(1, rng);
                self.actor.sample(row, noise).map(|s| s.actions)
            }
        }
        .expect("observation width checked by caller");
        let high = self.actor.high;
        Action::Continuous(a.iter().map(|x| x.clamp(-high, high)).collect())
    }

    fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats, AgentError> {
        let n = batch.len();
        let alpha = self.cfg.alpha;
        let next_noise = self.actor.draw_noise(n, rng);
        let y = self.td_target(batch, next_noise)?;

        let mut critic_loss = 0.0;
        for critic in &mut self.critics {
            let (q, cache) = critic.q_cached(batch.obs.view(), batch.encoded_actions.view())?;
            let (loss, dq) = mse(&q, &y);
            check_finite("sac critic loss", loss)?;
            let (g, _) = critic.backward(&cache, &dq)?;
            critic.opt.step(&mut critic.net, &g)?;
            critic_loss += loss / 2.0;
        }

        let noise = self.actor.draw_noise(n, rng);
        let sample = self.actor.sample(batch.obs.view(), noise)?;
        let (q1, c1) = self.critics[0].q_cached(batch.obs.view(), sample.actions.view())?;
        let (q2, c2) = self.critics[1].q_cached(batch.obs.view(), sample.actions.view())?;
        let inv_n = 1.0 / n as f64;
        let actor_loss = (0..n)
            .map(|i| alpha * sample.log_prob[i] - q1[i].min(q2[i]))
            .sum::<f64>()
            * inv_n;
        check_finite("sac actor loss", actor_loss)?;
        // The gradient of min(Q1, Q2) flows through whichever twin is smaller.
        let dq1: Vec<f64> = (0..n)
            .map(|i| if q1[i] <= q2[i] { -inv_n } else { 0.0 })
            .collect();
        let dq2: Vec<f64> = (0..n)
            .map(|i| if q1[i] <= q2[i] { 0.0 } else { -inv_n })
            .collect();
        let (_, da1) = self.critics[0].backward(&c1, &dq1)?;
        let (_, da2) = self.critics[1].backward(&c2, &dq2)?;
        let d_action = da1 + da2;
        let g = self
            .actor
            .backward(&sample, d_action.view(), &vec![alpha * inv_n; n])?;
        self.actor.opt.step(&mut self.actor.net, &g)?;

        let m = 1.0 - self.cfg.polyak;
        for critic in &mut self.critics {
            ema_update(&mut critic.target, &critic.net, m)?;
        }
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha,
        })
    }

    fn critics(&self) -> Vec<&Critic> {
        self.critics.iter().collect()
    }

    fn critics_mut(&mut self) -> Vec<&mut Critic> {
        self.critics.iter_mut().collect()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            dim: self.actor.dim(),
            high: self.actor.high,
        }
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn save_state(&self, dict: &mut StateDict) {
        dict.put_mlp("sac.actor", &self.actor.net);
        dict.put_adam("sac.actor.opt", &self.actor.opt);
        for (i, c) in self.critics.iter().enumerate() {
            dict.put_mlp(&format!("sac.q{i}"), &c.net);
            dict.put_mlp(&format!("sac.q{i}_target"), &c.target);
            dict.put_adam(&format!("sac.q{i}.opt"), &c.opt);
        }
    }

    fn load_state(&mut self, dict: &StateDict) -> Result<(), AgentError> {
        dict.load_mlp("sac.actor", &mut self.actor.net)?;
        dict.load_adam("sac.actor.opt", &mut self.actor.opt)?;
        for (i, c) in self.critics.iter_mut().enumerate() {
            dict.load_mlp(&format!("sac.q{i}"), &mut c.net)?;
            dict.load_mlp(&format!("sac.q{i}_target"), &mut c.target)?;
            dict.load_adam(&format!("sac.q{i}.opt"), &mut c.opt)?;
        }
        Ok(())
    }
}
