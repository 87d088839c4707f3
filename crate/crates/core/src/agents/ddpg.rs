use ndarray::ArrayView2;
use rand_distr::{Distribution, StandardNormal};

use super::{
    check_finite, mse, sizes, ActMode, Agent, AgentConfig, AgentError, AlgoName, Critic,
    CriticKind, DeterministicActor, UpdateStats,
};
use crate::envs::{Action, ActionSpace};
use crate::nn::{ema_update, AdamConfig, Mlp};
use crate::replay::Batch;
use crate::rng::Rng;
use crate::state::StateDict;

#[derive(Debug, Clone)]
pub struct Ddpg {
    cfg: AgentConfig,
    actor: DeterministicActor,
    critic: Critic,
    obs_dim: usize,
    act_dim: usize,
}

impl Ddpg {
    pub fn new<R: rand::Rng + ?Sized>(
        cfg: AgentConfig,
        obs_dim: usize,
        act_dim: usize,
        high: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let actor = Mlp::new(&sizes(obs_dim, hidden, act_dim), cfg.activation, rng)?;
        let critic = Mlp::new(&sizes(obs_dim + act_dim, hidden, 1), cfg.activation, rng)?;
        Ok(Self::from_networks(cfg, actor, critic, high))
    }

    pub fn from_networks(cfg: AgentConfig, actor: Mlp, critic: Mlp, high: f64) -> Self {
        let obs_dim = actor.in_dim();
        let act_dim = actor.out_dim();
        Self {
            actor: DeterministicActor::new(actor, high, AdamConfig::with_lr(cfg.lr_actor)),
            critic: Critic::new(
                critic,
                CriticKind::StateAction,
                obs_dim,
                AdamConfig::with_lr(cfg.lr_critic),
            ),
            cfg,
            obs_dim,
            act_dim,
        }
    }

    pub fn actor(&self) -> &DeterministicActor {
        &self.actor
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    fn row<'a>(&self, obs: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((1, obs.len()), obs).expect("row")
    }
}

impl Agent for Ddpg {
    fn algo(&self) -> AlgoName {
        AlgoName::Ddpg
    }

    fn act(&self, obs: &[f64], mode: ActMode, _env_step: u64, rng: &mut Rng) -> Action {
        let mu = self
            .actor
            .act(self.row(obs))
            .expect("observation width checked by caller");
        let high = self.actor.high;
        let sigma = self.cfg.exploration_noise * high;
        Action::Continuous(
            mu.iter()
                .map(|&m| match mode {
                    ActMode::Eval => m,
                    ActMode::Explore => {
                        let n: f64 = StandardNormal.sample(rng);
                        (m + sigma * n).clamp(-high, high)
                    }
                })
                .collect(),
        )
    }

    fn update(&mut self, batch: &Batch, _rng: &mut Rng) -> Result<UpdateStats, AgentError> {
        let gamma = self.cfg.gamma;
        let next_a = self
            .actor
            .act_with(&self.actor.target, batch.next_obs.view())?;
        let next_q = self.critic.q_target(batch.next_obs.view(), next_a.view())?;
        let y: Vec<f64> = (0..batch.len())
            .map(|i| {
                batch.rewards[i]
                    + if batch.done[i] {
                        0.0
                    } else {
                        gamma * next_q[i]
                    }
            })
            .collect();

        let (q, cache) = self
            .critic
            .q_cached(batch.obs.view(), batch.encoded_actions.view())?;
        let (critic_loss, dq) = mse(&q, &y);
        check_finite("ddpg critic loss", critic_loss)?;
        let (cg, _) = self.critic.backward(&cache, &dq)?;
        self.critic.opt.step(&mut self.critic.net, &cg)?;

        // Actor ascends Q(s, mu(s)) through the freshly updated critic.
        let (a, actor_cache) = self.actor.act_cached(batch.obs.view())?;
        let (qa, qcache) = self.critic.q_cached(batch.obs.view(), a.view())?;
        let n = batch.len() as f64;
        let actor_loss = check_finite("ddpg actor loss", -qa.iter().sum::<f64>() / n)?;
        let (_, da) = self
            .critic
            .backward(&qcache, &vec![-1.0 / n; batch.len()])?;
        let ag = self.actor.backward(&actor_cache, da.view())?;
        self.actor.opt.step(&mut self.actor.net, &ag)?;

        let m = 1.0 - self.cfg.polyak;
        ema_update(&mut self.critic.target, &self.critic.net, m)?;
        ema_update(&mut self.actor.target, &self.actor.net, m)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha: 0.0,
        })
    }

    fn critics(&self) -> Vec<&Critic> {
        vec![&self.critic]
    }

    fn critics_mut(&mut self) -> Vec<&mut Critic> {
        vec![&mut self.critic]
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            dim: self.act_dim,
            high: self.actor.high,
        }
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn save_state(&self, dict: &mut StateDict) {
        dict.put_mlp("ddpg.actor", &self.actor.net);
        dict.put_mlp("ddpg.actor_target", &self.actor.target);
        dict.put_adam("ddpg.actor.opt", &self.actor.opt);
        dict.put_mlp("ddpg.critic", &self.critic.net);
        dict.put_mlp("ddpg.critic_target", &self.critic.target);
        dict.put_adam("ddpg.critic.opt", &self.critic.opt);
    }

    fn load_state(&mut self, dict: &StateDict) -> Result<(), AgentError> {
        dict.load_mlp("ddpg.actor", &mut self.actor.net)?;
        dict.load_mlp("ddpg.actor_target", &mut self.actor.target)?;
        dict.load_adam("ddpg.actor.opt", &mut self.actor.opt)?;
        dict.load_mlp("ddpg.critic", &mut self.critic.net)?;
        dict.load_mlp("ddpg.critic_target", &mut self.critic.target)?;
        dict.load_adam("ddpg.critic.opt", &mut self.critic.opt)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use crate::replay::Transition;
    use crate::rng::{stream, Stream};
    use ndarray::{array, Array1};

    fn transitions() -> Vec<Transition> {
        vec![
            Transition {
                obs: vec![0.2, -0.5],
                action: Action::Continuous(vec![0.7]),
                reward: -1.3,
                next_obs: vec![0.25, -0.4],
                done: false,
                truncated: false,
                episode: 0,
            },
            Transition {
                obs: vec![-0.9, 0.1],
                action: Action::Continuous(vec![-1.5]),
                reward: 0.4,
                next_obs: vec![-0.8, 0.3],
                done: true,
                truncated: false,
                episode: 0,
            },
        ]
    }

    fn batch() -> Batch {
        Batch::from_transitions(&transitions(), 2, ActionSpace::Box { dim: 1, high: 2.0 })
    }

    fn tiny(seed: u64, cfg: AgentConfig) -> Ddpg {
        let mut rng = stream(seed, Stream::AgentInit);
        Ddpg::new(cfg, 2, 1, 2.0, &[3], &mut rng).unwrap()
    }

    fn cfg() -> AgentConfig {
        AgentConfig {
            name: AlgoName::Ddpg,
            gamma: 0.9,
            lr_actor: 1e-2,
            lr_critic: 1e-2,
            polyak: 0.1,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn losses_match_transcription() {
        let mut agent = tiny(1, cfg());
        let (actor, actor_t) = (agent.actor.net.clone(), agent.actor.target.clone());
        let (critic, critic_t) = (agent.critic.net.clone(), agent.critic.target.clone());
        let ts = transitions();

        let q_of = |net: &Mlp, s: &[f64], a: f64| net.forward(&[s[0], s[1], a]).unwrap()[0];
        let mu_of = |net: &Mlp, s: &[f64]| 2.0 * net.forward(s).unwrap()[0].tanh();
        let mut expected_critic = 0.0;
        for t in &ts {
            let y = t.reward
                + if t.done {
                    0.0
                } else {
                    0.9 * q_of(&critic_t, &t.next_obs, mu_of(&actor_t, &t.next_obs))
                };
            let a = match &t.action {
                Action::Continuous(u) => u[0],
                _ => unreachable!(),
            };
            expected_critic += (q_of(&critic, &t.obs, a) - y).powi(2) / 2.0;
        }
        let stats = agent
            .update(&batch(), &mut stream(0, Stream::Update))
            .unwrap();
        assert!((stats.critic_loss - expected_critic).abs() < 1e-14);

        // Actor loss uses the critic after its step and the actor before its step.
        let updated_critic = agent.critic.net.clone();
        let expected_actor = -ts
            .iter()
            .map(|t| q_of(&updated_critic, &t.obs, mu_of(&actor, &t.obs)))
            .sum::<f64>()
            / 2.0;
        assert!((stats.actor_loss - expected_actor).abs() < 1e-14);
    }

    #[test]
    fn zero_polyak_freezes_targets() {
        let mut agent = tiny(
            2,
            AgentConfig {
                polyak: 0.0,
                ..cfg()
            },
        );
        let (at, ct) = (agent.actor.target.clone(), agent.critic.target.clone());
        for _ in 0..3 {
            agent
                .update(&batch(), &mut stream(0, Stream::Update))
                .unwrap();
        }
        assert_eq!(agent.actor.target, at);
        assert_eq!(agent.critic.target, ct);
        assert_ne!(agent.critic.net, ct);
    }

    #[test]
    fn zero_discount_critic_fitting_reward_has_zero_loss() {
        // Critic Q(s, a) = a exactly; rewards equal the actions.
        let critic = Mlp::from_layers(vec![Layer::new(
            array![[0.0, 0.0, 1.0]],
            Array1::zeros(1),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let mut rng = stream(3, Stream::AgentInit);
        let actor = Mlp::new(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        let mut agent = Ddpg::from_networks(
            AgentConfig {
                gamma: 0.0,
                ..cfg()
            },
            actor,
            critic,
            2.0,
        );
        let mut ts = transitions();
        for t in &mut ts {
            if let Action::Continuous(u) = &t.action {
                t.reward = u[0];
            }
        }
        let b = Batch::from_transitions(&ts, 2, ActionSpace::Box { dim: 1, high: 2.0 });
        let stats = agent.update(&b, &mut stream(0, Stream::Update)).unwrap();
        assert_eq!(stats.critic_loss, 0.0);
    }

    #[test]
    fn actions_respect_the_box() {
        let agent = tiny(4, cfg());
        let mut rng = stream(0, Stream::Action);
        for i in 0..200 {
            let obs = [i as f64 * 0.37 - 30.0, 5.0];
            for mode in [ActMode::Explore, ActMode::Eval] {
                let a = agent.act(&obs, mode, 0, &mut rng);
                assert!(agent.action_space().contains(&a), "{a:?}");
            }
        }
        let e1 = agent.act(&[0.1, 0.2], ActMode::Eval, 0, &mut rng);
        let e2 = agent.act(&[0.1, 0.2], ActMode::Eval, 0, &mut rng);
        assert_eq!(e1, e2);
    }
}
