use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::checkpoint;
use super::metrics::{mean_std, write_eval_csv, write_train_csv, EvalRow, RunMetrics, TrainRow};
use super::{ExperimentConfig, HarnessError};
use crate::agents::{build_agent, ActMode, Agent, AlgoName};
use crate::envs::{Action, ActionSpace, Env, EnvName};
use crate::imagination::Imagination;
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{stream, Rng, RngSnapshot, Stream};
use crate::state::StateDict;

/// Runs `episodes` eval-mode episodes on fresh environments seeded from
/// `rng`; returns the sample mean and std of undiscounted returns.
pub fn evaluate(
    agent: &dyn Agent,
    env: EnvName,
    episodes: usize,
    rng: &mut Rng,
) -> Result<(f64, f64), HarnessError> {
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut e = Env::new(env, rng.gen());
        let mut obs = e.observation();
        let mut total = 0.0;
        loop {
            let a = agent.act(&obs, ActMode::Eval, 0, rng);
            let r = e.step(&a)?;
            total += r.reward;
            if r.episode_over() {
                break;
            }
            obs = r.observation;
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}

pub fn random_action(space: ActionSpace, rng: &mut Rng) -> Action {
    match space {
        ActionSpace::Discrete(n) => Action::Discrete(rng.gen_range(0..n)),
        ActionSpace::Box { dim, high } => {
            Action::Continuous((0..dim).map(|_| rng.gen_range(-high..=high)).collect())
        }
    }
}

#[derive(Debug, Clone)]
struct Streams {
    env: Rng,
    action: Rng,
    replay: Rng,
    pairs: Rng,
    eval: Rng,
    update: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, Stream::Env),
            action: stream(seed, Stream::Action),
            replay: stream(seed, Stream::Replay),
            pairs: stream(seed, Stream::ImaginationPairs),
            eval: stream(seed, Stream::Eval),
            update: stream(seed, Stream::Update),
        }
    }

    fn snapshot(&self) -> Snapshots {
        Snapshots {
            env: RngSnapshot::capture(&self.env),
            action: RngSnapshot::capture(&self.action),
            replay: RngSnapshot::capture(&self.replay),
            pairs: RngSnapshot::capture(&self.pairs),
            eval: RngSnapshot::capture(&self.eval),
            update: RngSnapshot::capture(&self.update),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshots {
    env: RngSnapshot,
    action: RngSnapshot,
    replay: RngSnapshot,
    pairs: RngSnapshot,
    eval: RngSnapshot,
    update: RngSnapshot,
}

impl Snapshots {
    fn restore(&self) -> Result<Streams, HarnessError> {
        let r = |s: &RngSnapshot| {
            s.restore()
                .ok_or_else(|| HarnessError::Checkpoint("bad rng word position".into()))
        };
        Ok(Streams {
            env: r(&self.env)?,
            action: r(&self.action)?,
            replay: r(&self.replay)?,
            pairs: r(&self.pairs)?,
            eval: r(&self.eval)?,
            update: r(&self.update)?,
        })
    }
}

/// Loop counters and the live episode, stored in checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    step: u64,
    episode: u64,
    running_return: f64,
    last_return: Option<f64>,
    obs: Vec<f64>,
    env: Env,
    buffer_cursor: usize,
}

/// One training run, steppable and resumable.
pub struct Trainer {
    cfg: ExperimentConfig,
    agent: Box<dyn Agent>,
    im: Option<Imagination>,
    buffer: ReplayBuffer,
    rngs: Streams,
    progress: Progress,
    metrics: RunMetrics,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let agent = build_agent(
            &cfg.algo,
            cfg.env.name,
            &mut stream(seed, Stream::AgentInit),
        )?;
        let im = if cfg.im.enabled {
            Some(Imagination::attach(
                agent.as_ref(),
                &cfg.im,
                cfg.algo.lr_critic,
                cfg.algo.batch_size,
                &mut stream(seed, Stream::ImaginationInit),
            )?)
        } else {
            None
        };
        let mut rngs = Streams::new(seed);
        let env = Env::new(cfg.env.name, rngs.env.gen());
        let buffer = ReplayBuffer::new(cfg.buffer.capacity, env.obs_dim(), env.action_space())?;
        Ok(Self {
            progress: Progress {
                step: 0,
                episode: 0,
                running_return: 0.0,
                last_return: None,
                obs: env.observation(),
                env,
                buffer_cursor: 0,
            },
            cfg,
            agent,
            im,
            buffer,
            rngs,
            metrics: RunMetrics::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    pub fn imagination(&self) -> Option<&Imagination> {
        self.im.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Environment steps taken so far.
    pub fn step(&self) -> u64 {
        self.progress.step
    }

    pub fn episode(&self) -> u64 {
        self.progress.episode
    }

    pub fn finished(&self) -> bool {
        self.metrics.failed() || self.progress.step >= self.cfg.train.total_steps
    }

    /// Advances training to env step `target` (capped at the budget) or
    /// until a failure is recorded. The final evaluation is added once the
    /// budget is reached.
    pub fn run_until(&mut self, target: u64) -> Result<(), HarnessError> {
        if self.metrics.eval.is_empty() {
            self.eval_now()?;
        }
        let target = target.min(self.cfg.train.total_steps);
        while self.progress.step < target && !self.metrics.failed() {
            self.env_step()?;
        }
        let total = self.cfg.train.total_steps;
        if self.progress.step == total && self.metrics.eval.last().map(|r| r.step) != Some(total) {
            self.eval_now()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), HarnessError> {
        self.run_until(self.cfg.train.total_steps)
    }

    fn eval_now(&mut self) -> Result<(), HarnessError> {
        let (mean_return, std_return) = evaluate(
            self.agent.as_ref(),
            self.cfg.env.name,
            self.cfg.train.eval_episodes,
            &mut self.rngs.eval,
        )?;
        log::info!(
            "seed {} step {}: eval return {mean_return:.2} +/- {std_return:.2}",
            self.cfg.seed,
            self.progress.step
        );
        self.metrics.eval.push(EvalRow {
            step: self.progress.step,
            mean_return,
            std_return,
        });
        Ok(())
    }

    fn env_step(&mut self) -> Result<(), HarnessError> {
        let train = &self.cfg.train;
        let p = &mut self.progress;
        let t = p.step + 1;
        let action = if t <= train.warmup_steps {
            random_action(self.buffer.action_space(), &mut self.rngs.action)
        } else {
            self.agent
                .act(&p.obs, ActMode::Explore, p.step, &mut self.rngs.action)
        };
        let res = p.env.step(&action)?;
        self.buffer.push(Transition {
            obs: std::mem::take(&mut p.obs),
            action,
            reward: res.reward,
            next_obs: res.observation.clone(),
            done: res.done,
            truncated: res.truncated,
            episode: p.episode,
        })?;
        p.step = t;
        p.running_return += res.reward;
        if res.episode_over() {
            p.last_return = Some(p.running_return);
            p.running_return = 0.0;
            p.episode += 1;
            p.obs = p.env.reset(self.rngs.env.gen());
        } else {
            p.obs = res.observation;
        }

        if t > train.warmup_steps && self.buffer.len() >= self.cfg.algo.batch_size {
            if let Err(e) = self.gradient_step() {
                log::warn!("seed {} failed at step {t}: {e}", self.cfg.seed);
                self.metrics.failure = Some(format!("step {t}: {e}"));
                return Ok(());
            }
        }
        if t.is_multiple_of(self.cfg.train.eval_every) {
            self.eval_now()?;
        }
        Ok(())
    }

    fn gradient_step(&mut self) -> Result<(), HarnessError> {
        let indices = self
            .buffer
            .sample_indices(self.cfg.algo.batch_size, &mut self.rngs.replay)?;
        let batch = self.buffer.batch(&indices);
        let stats = self.agent.update(&batch, &mut self.rngs.update)?;
        let im_loss = match &mut self.im {
            Some(im) => Some(im.update_agent(
                self.agent.as_mut(),
                &self.buffer,
                &indices,
                &mut self.rngs.pairs,
            )?),
            None => None,
        };
        let p = &self.progress;
        self.metrics.train.push(TrainRow {
            step: p.step,
            episode: p.episode,
            episode_return: p.last_return.unwrap_or(p.running_return),
            critic_loss: stats.critic_loss,
            actor_loss: (self.agent.algo() != AlgoName::Dqn).then_some(stats.actor_loss),
            im_loss,
            wall_ms: if self.cfg.train.record_wall_time {
                self.started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        Ok(())
    }

    fn state_arrays(&self) -> StateDict {
        let mut dict = StateDict::new();
        self.agent.save_state(&mut dict);
        if let Some(im) = &self.im {
            im.save_state(&mut dict);
        }
        let items: Vec<&Transition> = self.buffer.iter().collect();
        let cat = |f: &dyn Fn(&Transition) -> Vec<f64>| {
            items.iter().flat_map(|t| f(t)).collect::<Vec<f64>>()
        };
        dict.insert("replay.obs", cat(&|t| t.obs.clone()));
        dict.insert("replay.next_obs", cat(&|t| t.next_obs.clone()));
        dict.insert(
            "replay.action",
            cat(&|t| match &t.action {
                Action::Discrete(a) => vec![*a as f64],
                Action::Continuous(u) => u.clone(),
            }),
        );
        dict.insert("replay.reward", cat(&|t| vec![t.reward]));
        dict.insert("replay.done", cat(&|t| vec![t.done as u8 as f64]));
        dict.insert("replay.truncated", cat(&|t| vec![t.truncated as u8 as f64]));
        dict.insert("replay.episode", cat(&|t| vec![t.episode as f64]));
        dict
    }

    fn restore_buffer(
        &mut self,
        dict: &StateDict,
        len: usize,
        cursor: usize,
    ) -> Result<(), HarnessError> {
        let od = self.buffer.obs_dim();
        let space = self.buffer.action_space();
        let ad = match space {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { dim, .. } => dim,
        };
        let obs = dict.get_exact("replay.obs", len * od)?;
        let next = dict.get_exact("replay.next_obs", len * od)?;
        let act = dict.get_exact("replay.action", len * ad)?;
        let rew = dict.get_exact("replay.reward", len)?;
        let done = dict.get_exact("replay.done", len)?;
        let trunc = dict.get_exact("replay.truncated", len)?;
        let ep = dict.get_exact("replay.episode", len)?;
        let items = (0..len)
            .map(|i| Transition {
                obs: obs[i * od..(i + 1) * od].to_vec(),
                action: match space {
                    ActionSpace::Discrete(_) => Action::Discrete(act[i] as usize),
                    ActionSpace::Box { .. } => {
                        Action::Continuous(act[i * ad..(i + 1) * ad].to_vec())
                    }
                },
                reward: rew[i],
                next_obs: next[i * od..(i + 1) * od].to_vec(),
                done: done[i] != 0.0,
                truncated: trunc[i] != 0.0,
                episode: ep[i] as u64,
            })
            .collect();
        self.buffer.restore(items, cursor)?;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), HarnessError> {
        let mut progress = self.progress.clone();
        progress.buffer_cursor = self.buffer.cursor();
        let meta = json!({
            "config": self.cfg,
            "progress": progress,
            "buffer_len": self.buffer.len(),
            "rngs": self.rngs.snapshot(),
            "metrics": self.metrics,
        });
        checkpoint::save(path, &meta, &self.state_arrays())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, HarnessError> {
        let (meta, dict) = checkpoint::load(path)?;
        let field = |name: &str| meta.get(name).cloned().unwrap_or(Value::Null);
        let parse_err = |e: serde_json::Error| HarnessError::Checkpoint(e.to_string());
        let cfg: ExperimentConfig = serde_json::from_value(field("config")).map_err(parse_err)?;
        let progress: Progress = serde_json::from_value(field("progress")).map_err(parse_err)?;
        let buffer_len: usize = serde_json::from_value(field("buffer_len")).map_err(parse_err)?;
        let snaps: Snapshots = serde_json::from_value(field("rngs")).map_err(parse_err)?;
        let metrics: RunMetrics = serde_json::from_value(field("metrics")).map_err(parse_err)?;

        let mut t = Trainer::new(cfg)?;
        t.agent.load_state(&dict)?;
        if let Some(im) = &mut t.im {
            im.load_state(&dict)?;
        }
        t.restore_buffer(&dict, buffer_len, progress.buffer_cursor)?;
        t.rngs = snaps.restore()?;
        t.progress = progress;
        t.metrics = metrics;
        Ok(t)
    }

    /// Writes `train.csv`, `eval.csv`, `final.ckpt` and `config.echo.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_train_csv(
            &self.metrics.train,
            BufWriter::new(File::create(dir.join("train.csv"))?),
        )?;
        write_eval_csv(
            &self.metrics.eval,
            BufWriter::new(File::create(dir.join("eval.csv"))?),
        )?;
        self.save_checkpoint(&dir.join("final.ckpt"))?;
        std::fs::write(dir.join("config.echo.json"), self.cfg.to_json() + "\n")?;
        Ok(())
    }
}

/// Trains one configuration to its budget, writing outputs to `out` when
/// given. A failed run still returns its partial metrics.
pub fn run_training(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunMetrics, HarnessError> {
    let mut t = Trainer::new(cfg.clone())?;
    t.run()?;
    if let Some(dir) = out {
        t.write_outputs(dir)?;
    }
    Ok(t.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::chain;

    fn chain_cfg(total: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(EnvName::Chain, AlgoName::Dqn);
        cfg.algo.batch_size = 16;
        cfg.train.total_steps = total;
        cfg.train.warmup_steps = 50;
        cfg.train.eval_every = 100.min(total.max(1));
        cfg.train.eval_episodes = 2;
        cfg
    }

    #[test]
    fn zero_budget_has_one_eval_row_and_no_training() {
        let m = run_training(&chain_cfg(0), None).unwrap();
        assert!(m.train.is_empty());
        assert_eq!(m.eval.len(), 1);
        assert_eq!(m.eval[0].step, 0);
    }

    #[test]
    fn rows_start_after_warmup_and_steps_increase() {
        let m = run_training(&chain_cfg(300), None).unwrap();
        assert_eq!(m.train.len(), 250);
        assert_eq!(m.train[0].step, 51);
        assert!(m.train.windows(2).all(|w| w[0].step < w[1].step));
        let steps: Vec<u64> = m.eval.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 100, 200, 300]);
        assert!(m
            .train
            .iter()
            .all(|r| r.actor_loss.is_none() && r.im_loss.is_none()));
    }

    #[test]
    fn eval_of_deterministic_chain_policy_has_zero_spread() {
        let t = Trainer::new(chain_cfg(10)).unwrap();
        let (_, std) =
            evaluate(t.agent(), EnvName::Chain, 4, &mut stream(0, Stream::Eval)).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn random_actions_lie_in_space() {
        let mut rng = stream(0, Stream::Action);
        for _ in 0..500 {
            let a = random_action(ActionSpace::Box { dim: 2, high: 2.0 }, &mut rng);
            assert!(ActionSpace::Box { dim: 2, high: 2.0 }.contains(&a));
            let d = random_action(ActionSpace::Discrete(chain::NUM_STATES), &mut rng);
            assert!(ActionSpace::Discrete(chain::NUM_STATES).contains(&d));
        }
    }
}
