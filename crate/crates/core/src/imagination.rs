//! Similarity-based critic propagation.
//!
//! Two state-action pairs are embedded by a multi-head encoder: the online
//! encoder `f_c` embeds the anchor pair and its momentum copy `f_d` embeds
//! the partner pair, with no gradient through the partner's features. Each
//! head is compared separately, giving a similarity vector `v` of length
//! `k`. A small difference network maps `v` to a scalar `d`, and the critic
//! is regressed so that `Q(s, a) + d` matches `Q(s_n, a_n)`. `f_c`, the
//! difference network and the critic take Adam steps on that loss; `f_d`
//! only ever follows `f_c` by exponential moving average.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{hcat, Agent, Critic};
use crate::envs::ActionSpace;
use crate::nn::{
    cosine_with_grad, ema_update, Activation, Adam, AdamConfig, Gradients, Layer, Mlp, NnError,
};
use crate::replay::{Batch, ReplayBuffer, ReplayError};
use crate::rng::Rng;
use crate::state::{StateDict, StateError};

#[derive(Debug, Error, PartialEq)]
pub enum ImError {
    #[error("agent exposes no critic to propagate into")]
    NoCritic,
    #[error("invalid imagination configuration: {0}")]
    Config(String),
    #[error("non-finite imagination loss {loss} over {pairs} pairs (critic {critic})")]
    NonFiniteLoss {
        loss: f64,
        pairs: usize,
        critic: usize,
    },
    #[error("critic index {0} out of range")]
    CriticIndex(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Cosine,
    /// `v_i = q_i^T W_i q'_i` with a learned square `W_i` per head.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImaginationConfig {
    pub enabled: bool,
    /// Number of encoder heads.
    pub k: usize,
    /// Width of each head's feature slice.
    pub feature_dim: usize,
    /// EMA coefficient for the momentum encoder.
    pub momentum: f64,
    /// Scale on the critic's share of the propagation gradient.
    pub loss_weight: f64,
    /// Defaults to the agent's batch size.
    pub pairs_per_step: Option<usize>,
    pub detach_target_critic: bool,
    pub sim: Similarity,
    /// Defaults to the agent's critic learning rate.
    pub lr: Option<f64>,
    pub cross_episode_only: bool,
    pub encoder_hidden: Vec<usize>,
    pub din_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ImaginationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 4,
            feature_dim: 32,
            momentum: 0.95,
            loss_weight: 1.0,
            pairs_per_step: None,
            detach_target_critic: false,
            sim: Similarity::Cosine,
            lr: None,
            cross_episode_only: false,
            encoder_hidden: vec![64, 64],
            din_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

impl ImaginationConfig {
    pub fn validate(&self) -> Result<(), ImError> {
        let bad = |m: &str| Err(ImError::Config(m.to_string()));
        if self.k == 0 || self.feature_dim == 0 {
            return bad("k and feature_dim must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]");
        }
        if !(self.loss_weight >= 0.0) {
            return bad("loss_weight must be non-negative");
        }
        if self.pairs_per_step == Some(0) {
            return bad("pairs_per_step must be at least 1");
        }
        if self.lr.is_some_and(|lr| !(lr >= 0.0)) {
            return bad("lr must be non-negative");
        }
        if self
            .encoder_hidden
            .iter()
            .chain(&self.din_hidden)
            .any(|&w| w == 0)
        {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Encoder features for one pair: `enc([s | a])`, where `a` is already
/// encoded (one-hot for discrete actions).
pub fn scn_features(enc: &Mlp, obs: &[f64], action: &[f64]) -> Result<Vec<f64>, NnError> {
    let mut x = obs.to_vec();
    x.extend_from_slice(action);
    enc.forward(&x)
}

fn check_heads(q: &[f64], q_n: &[f64], k: usize, feature_dim: usize) -> Result<(), NnError> {
    for len in [q.len(), q_n.len()] {
        if len != k * feature_dim {
            return Err(NnError::Shape {
                what: "head features",
                expected: k * feature_dim,
                got: len,
            });
        }
    }
    Ok(())
}

/// Per-head cosine similarity of two feature vectors.
pub fn similarity_vector(
    q: &[f64],
    q_n: &[f64],
    k: usize,
    feature_dim: usize,
) -> Result<Vec<f64>, NnError> {
    check_heads(q, q_n, k, feature_dim)?;
    q.chunks(feature_dim)
        .zip(q_n.chunks(feature_dim))
        .map(|(a, b)| Ok(cosine_with_grad(a, b)?.0))
        .collect()
}

/// Per-head bilinear similarity `q_i^T W_i q_n_i`.
pub fn bilinear_similarity_vector(
    q: &[f64],
    q_n: &[f64],
    weights: &[Array2<f64>],
    feature_dim: usize,
) -> Result<Vec<f64>, NnError> {
    check_heads(q, q_n, weights.len(), feature_dim)?;
    Ok(q.chunks(feature_dim)
        .zip(q_n.chunks(feature_dim))
        .zip(weights)
        .map(|((a, b), w)| bilinear(a, b, w))
        .collect())
}

fn bilinear(a: &[f64], b: &[f64], w: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            acc += ai * w[[i, j]] * bj;
        }
    }
    acc
}

/// Scalar critic difference inferred from a similarity vector.
pub fn din_difference(din: &Mlp, v: &[f64]) -> Result<f64, NnError> {
    Ok(din.forward(v)?[0])
}

/// Per-critic difference network and its optimizer. Propagation steps on
/// the critic itself go through the critic's own optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DinHead {
    pub din: Mlp,
    pub din_opt: Adam,
}

/// Learned per-head bilinear forms, stored as a chain of square layers so
/// the optimizer and checkpoints treat them like any network. The chain is
/// never evaluated as a network.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearForms {
    pub forms: Mlp,
    pub opt: Adam,
}

impl BilinearForms {
    fn new(k: usize, feature_dim: usize, lr: f64) -> Self {
        let layers = (0..k)
            .map(|_| {
                Layer::new(
                    Array2::eye(feature_dim),
                    ndarray::Array1::zeros(feature_dim),
                    Activation::Identity,
                )
                .expect("square layer")
            })
            .collect();
        let forms = Mlp::from_layers(layers).expect("square layers chain");
        Self {
            opt: Adam::new(&forms, AdamConfig::with_lr(lr)),
            forms,
        }
    }

    pub fn weights(&self) -> Vec<Array2<f64>> {
        self.forms
            .layers()
            .iter()
            .map(|l| l.weight.clone())
            .collect()
    }
}

/// Everything the propagation update owns for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Imagination {
    cfg: ImaginationConfig,
    lr: f64,
    pairs_per_step: usize,
    obs_dim: usize,
    space: ActionSpace,
    /// Online encoder (Adam).
    pub f_c: Mlp,
    /// Momentum encoder (EMA of `f_c` only).
    pub f_d: Mlp,
    pub f_c_opt: Adam,
    pub bilinear: Option<BilinearForms>,
    pub heads: Vec<DinHead>,
}

/// Diagnostics from one propagation update.
#[derive(Debug, Clone, PartialEq)]
pub struct ImStep {
    pub loss: f64,
    /// Similarity vectors, one row per pair.
    pub similarities: Array2<f64>,
    /// Inferred differences, one per pair.
    pub differences: Vec<f64>,
}

impl Imagination {
    /// Builds the module for `agent`, one difference head per critic and a
    /// single shared encoder pair. `f_d` starts as an exact copy of `f_c`.
    pub fn attach(
        agent: &dyn Agent,
        cfg: &ImaginationConfig,
        critic_lr: f64,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<Self, ImError> {
        cfg.validate()?;
        let n_critics = agent.critics().len();
        if n_critics == 0 {
            return Err(ImError::NoCritic);
        }
        let obs_dim = agent.obs_dim();
        let space = agent.action_space();
        let mut enc_sizes = vec![obs_dim + space.encoded_dim()];
        enc_sizes.extend(&cfg.encoder_hidden);
        enc_sizes.push(cfg.k * cfg.feature_dim);
        let f_c = Mlp::new(&enc_sizes, cfg.activation, rng)?;
        let mut din_sizes = vec![cfg.k];
        din_sizes.extend(&cfg.din_hidden);
        din_sizes.push(1);
        let dins = (0..n_critics)
            .map(|_| Mlp::new(&din_sizes, cfg.activation, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let critics: Vec<&Critic> = agent.critics();
        Self::from_parts(
            cfg.clone(),
            obs_dim,
            space,
            f_c,
            dins,
            &critics,
            critic_lr,
            batch_size,
        )
    }

    /// Assembles the module from explicit networks.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        cfg: ImaginationConfig,
        obs_dim: usize,
        space: ActionSpace,
        f_c: Mlp,
        dins: Vec<Mlp>,
        critics: &[&Critic],
        critic_lr: f64,
        batch_size: usize,
    ) -> Result<Self, ImError> {
        cfg.validate()?;
        if critics.is_empty() || dins.len() != critics.len() {
            return Err(ImError::NoCritic);
        }
        if f_c.in_dim() != obs_dim + space.encoded_dim() || f_c.out_dim() != cfg.k * cfg.feature_dim
        {
            return Err(ImError::Config(
                "encoder shape does not match k * feature_dim".into(),
            ));
        }
        if dins.iter().any(|d| d.in_dim() != cfg.k || d.out_dim() != 1) {
            return Err(ImError::Config(
                "difference network must map k inputs to one output".into(),
            ));
        }
        let lr = cfg.lr.unwrap_or(critic_lr);
        let adam = AdamConfig::with_lr(lr);
        let heads = dins
            .into_iter()
            .map(|din| DinHead {
                din_opt: Adam::new(&din, adam),
                din,
            })
            .collect();
        let bilinear = match cfg.sim {
            Similarity::Cosine => None,
            Similarity::Bilinear => Some(BilinearForms::new(cfg.k, cfg.feature_dim, lr)),
        };
        Ok(Self {
            pairs_per_step: cfg.pairs_per_step.unwrap_or(batch_size),
            lr,
            obs_dim,
            space,
            f_d: f_c.clone(),
            f_c_opt: Adam::new(&f_c, adam),
            f_c,
            bilinear,
            heads,
            cfg,
        })
    }

    pub fn config(&self) -> &ImaginationConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn pairs_per_step(&self) -> usize {
        self.pairs_per_step
    }

    fn inputs(&self, batch: &Batch) -> Array2<f64> {
        hcat(batch.obs.view(), batch.encoded_actions.view())
    }

    /// Similarity rows and their gradients w.r.t. the anchor features.
    fn similarities(
        &self,
        q: ArrayView2<f64>,
        q_n: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), NnError> {
        let (k, fd) = (self.cfg.k, self.cfg.feature_dim);
        let rows = q.nrows();
        let mut v = Array2::zeros((rows, k));
        let mut dv_dq = Array2::zeros((rows, k * fd));
        let weights = self.bilinear.as_ref().map(BilinearForms::weights);
        for p in 0..rows {
            for i in 0..k {
                let a = q.slice(s![p, i * fd..(i + 1) * fd]).to_vec();
                let b = q_n.slice(s![p, i * fd..(i + 1) * fd]).to_vec();
                let (val, grad) = match &weights {
                    None => cosine_with_grad(&a, &b)?,
                    Some(w) => (
                        bilinear(&a, &b, &w[i]),
                        w[i].dot(&ndarray::Array1::from(b)).to_vec(),
                    ),
                };
                v[[p, i]] = val;
                dv_dq
                    .slice_mut(s![p, i * fd..(i + 1) * fd])
                    .assign(&ndarray::Array1::from(grad));
            }
        }
        Ok((v, dv_dq))
    }

    /// One propagation update of critic `index` over the given pairs.
    ///
    /// Loss is `mean_p (Q(s_p, a_p) + d_p - Q(s_n_p, a_n_p))^2`. Nothing is
    /// modified unless the loss and every gradient are finite; `f_d` takes
    /// its EMA step last.
    pub fn update_critic(
        &mut self,
        index: usize,
        critic: &mut Critic,
        anchors: &Batch,
        partners: &Batch,
    ) -> Result<ImStep, ImError> {
        if index >= self.heads.len() {
            return Err(ImError::CriticIndex(index));
        }
        let pairs = anchors.len();
        if pairs == 0 || partners.len() != pairs {
            return Err(ImError::Replay(ReplayError::Empty));
        }
        let (k, fd) = (self.cfg.k, self.cfg.feature_dim);

        let enc_cache = self.f_c.forward_batch_cached(self.inputs(anchors).view())?;
        // Partner features come from the momentum encoder and are constants.
        let q_n = self.f_d.forward_batch(self.inputs(partners).view())?;
        let (v, dv_dq) = self.similarities(enc_cache.output().view(), q_n.view())?;

        let head = &self.heads[index];
        let din_cache = head.din.forward_batch_cached(v.view())?;
        let d: Vec<f64> = din_cache.output().column(0).to_vec();

        let (q_a, cache_a) = critic.q_cached(anchors.obs.view(), anchors.encoded_actions.view())?;
        let (q_b, cache_b) =
            critic.q_cached(partners.obs.view(), partners.encoded_actions.view())?;
        let err: Vec<f64> = (0..pairs).map(|p| q_a[p] + d[p] - q_b[p]).collect();
        let loss = err.iter().map(|e| e * e).sum::<f64>() / pairs as f64;
        if !loss.is_finite() {
            return Err(ImError::NonFiniteLoss {
                loss,
                pairs,
                critic: index,
            });
        }
        let de: Vec<f64> = err.iter().map(|e| 2.0 * e / pairs as f64).collect();

        let de_col = Array2::from_shape_vec((pairs, 1), de.clone()).expect("column");
        let (din_grads, dv) = head.din.backward_batch(&din_cache, de_col.view())?;

        let mut dq = dv_dq;
        for p in 0..pairs {
            for i in 0..k {
                let scale = dv[[p, i]];
                dq.slice_mut(s![p, i * fd..(i + 1) * fd])
                    .mapv_inplace(|g| g * scale);
            }
        }
        let (enc_grads, _) = self.f_c.backward_batch(&enc_cache, dq.view())?;

        let forms_grads = self.bilinear.as_ref().map(|b| {
            let mut g = Gradients::zeros_like(&b.forms);
            let q = enc_cache.output();
            for p in 0..pairs {
                for i in 0..k {
                    let a = q.slice(s![p, i * fd..(i + 1) * fd]);
                    let bn = q_n.slice(s![p, i * fd..(i + 1) * fd]);
                    let w = &mut g.layers[i].0;
                    for r in 0..fd {
                        for c in 0..fd {
                            w[[r, c]] += dv[[p, i]] * a[r] * bn[c];
                        }
                    }
                }
            }
            g
        });

        let lambda = self.cfg.loss_weight;
        let (mut critic_grads, _) = critic.backward(&cache_a, &de)?;
        if !self.cfg.detach_target_critic {
            let neg: Vec<f64> = de.iter().map(|x| -x).collect();
            let (gb, _) = critic.backward(&cache_b, &neg)?;
            critic_grads.add_assign(&gb);
        }
        critic_grads.scale(lambda);

        let all_finite = din_grads.is_finite()
            && enc_grads.is_finite()
            && critic_grads.is_finite()
            && forms_grads.as_ref().is_none_or(Gradients::is_finite);
        if !all_finite {
            return Err(ImError::NonFiniteLoss {
                loss: f64::NAN,
                pairs,
                critic: index,
            });
        }

        self.f_c_opt.step(&mut self.f_c, &enc_grads)?;
        let head = &mut self.heads[index];
        head.din_opt.step(&mut head.din, &din_grads)?;
        if lambda > 0.0 {
            critic.opt.step(&mut critic.net, &critic_grads)?;
        }
        if let (Some(b), Some(g)) = (self.bilinear.as_mut(), forms_grads) {
            b.opt.step(&mut b.forms, &g)?;
        }
        ema_update(&mut self.f_d, &self.f_c, self.cfg.momentum)?;

        Ok(ImStep {
            loss,
            similarities: v,
            differences: d,
        })
    }

    /// Runs one propagation update per critic of `agent`, pairing each
    /// minibatch index with an independent draw from the buffer. Returns
    /// the mean loss over critics.
    pub fn update_agent(
        &mut self,
        agent: &mut dyn Agent,
        buffer: &ReplayBuffer,
        minibatch: &[usize],
        rng: &mut Rng,
    ) -> Result<f64, ImError> {
        let pairs = buffer.sample_pairs(
            minibatch,
            self.pairs_per_step,
            self.cfg.cross_episode_only,
            rng,
        )?;
        let (first, second): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let anchors = buffer.batch(&first);
        let partners = buffer.batch(&second);
        let mut critics = agent.critics_mut();
        if critics.len() != self.heads.len() {
            return Err(ImError::NoCritic);
        }
        let mut total = 0.0;
        for (i, critic) in critics.iter_mut().enumerate() {
            total += self.update_critic(i, critic, &anchors, &partners)?.loss;
        }
        Ok(total / self.heads.len() as f64)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn save_state(&self, dict: &mut StateDict) {
        dict.put_mlp("im.f_c", &self.f_c);
        dict.put_mlp("im.f_d", &self.f_d);
        dict.put_adam("im.f_c.opt", &self.f_c_opt);
        if let Some(b) = &self.bilinear {
            dict.put_mlp("im.bilinear", &b.forms);
            dict.put_adam("im.bilinear.opt", &b.opt);
        }
        for (i, h) in self.heads.iter().enumerate() {
            dict.put_mlp(&format!("im.din{i}"), &h.din);
            dict.put_adam(&format!("im.din{i}.opt"), &h.din_opt);
        }
    }

    pub fn load_state(&mut self, dict: &StateDict) -> Result<(), ImError> {
        dict.load_mlp("im.f_c", &mut self.f_c)?;
        dict.load_mlp("im.f_d", &mut self.f_d)?;
        dict.load_adam("im.f_c.opt", &mut self.f_c_opt)?;
        if let Some(b) = &mut self.bilinear {
            dict.load_mlp("im.bilinear", &mut b.forms)?;
            dict.load_adam("im.bilinear.opt", &mut b.opt)?;
        }
        for (i, h) in self.heads.iter_mut().enumerate() {
            dict.load_mlp(&format!("im.din{i}"), &mut h.din)?;
            dict.load_adam(&format!("im.din{i}.opt"), &mut h.din_opt)?;
        }
        Ok(())
    }
}
