use std::f64::consts::{LN_2, PI};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{Adam, AdamConfig, ForwardCache, Gradients, Mlp, NnError};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `mu(s) = high * tanh(net(s))`, with a Polyak-averaged target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicActor {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: Adam,
    pub high: f64,
}

impl DeterministicActor {
    pub fn new(net: Mlp, high: f64, opt: AdamConfig) -> Self {
        Self {
            target: net.clone(),
            opt: Adam::new(&net, opt),
            net,
            high,
        }
    }

    pub fn act_with(&self, net: &Mlp, obs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let z = net.forward_batch(obs)?;
        Ok(z.mapv(|v| self.high * v.tanh()))
    }

    pub fn act(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.act_with(&self.net, obs)
    }

    pub fn act_cached(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let cache = self.net.forward_batch_cached(obs)?;
        let a = cache.output().mapv(|v| self.high * v.tanh());
        Ok((a, cache))
    }

    /// Parameter gradient given `dL/da` for each row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_action: ArrayView2<f64>,
    ) -> Result<Gradients, NnError> {
        let mut dz = d_action.to_owned();
        dz.zip_mut_with(cache.output(), |d, &z| {
            let t = z.tanh();
            *d *= self.high * (1.0 - t * t);
        });
        Ok(self.net.backward_batch(cache, dz.view())?.0)
    }
}

/// Tanh-squashed diagonal Gaussian policy. The network emits
/// `[mean | log_std]`; actions are `high * tanh(mean + std * eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianActor {
    pub net: Mlp,
    pub opt: Adam,
    pub high: f64,
    dim: usize,
}

/// A reparameterized draw, holding what the backward pass needs.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub actions: Array2<f64>,
    pub log_prob: Vec<f64>,
    cache: ForwardCache,
    noise: Array2<f64>,
    /// `tanh(u)` per component.
    squashed: Array2<f64>,
    std: Array2<f64>,
    /// 1 where the raw log-std lies inside the clamp range, else 0.
    ls_pass: Array2<f64>,
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (LN_2 - u - softplus)
}

impl GaussianActor {
    pub fn new(net: Mlp, dim: usize, high: f64, opt: AdamConfig) -> Self {
        Self {
            opt: Adam::new(&net, opt),
            net,
            high,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw_noise(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.dim), || StandardNormal.sample(rng))
    }

    /// Deterministic action `high * tanh(mean)`.
    pub fn mean_action(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let out = self.net.forward_batch(obs)?;
        Ok(out.slice(s![.., ..self.dim]).mapv(|m| self.high * m.tanh()))
    }

    /// Samples actions with the given standard-normal `noise` and returns
    /// their log-density, including the tanh and scale Jacobian.
    pub fn sample(
        &self,
        obs: ArrayView2<f64>,
        noise: Array2<f64>,
    ) -> Result<GaussianSample, NnError> {
        let cache = self.net.forward_batch_cached(obs)?;
        let out = cache.output();
        let d = self.dim;
        let mean = out.slice(s![.., ..d]);
        let raw_ls = out.slice(s![.., d..]);
        let ls = raw_ls.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let ls_pass = raw_ls.mapv(|v| {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) {
                1.0
            } else {
                0.0
            }
        });
        let std = ls.mapv(f64::exp);
        let u = &mean + &(&std * &noise);
        let squashed = u.mapv(f64::tanh);
        let actions = squashed.mapv(|t| self.high * t);

        let const_term = 0.5 * (2.0 * PI).ln() + self.high.ln();
        let log_prob = (0..u.nrows())
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let e = noise[[i, j]];
                        -0.5 * e * e - ls[[i, j]] - const_term - log_one_minus_tanh_sq(u[[i, j]])
                    })
                    .sum()
            })
            .collect();
        Ok(GaussianSample {
            actions,
            log_prob,
            cache,
            noise,
            squashed,
            std,
            ls_pass,
        })
    }

    /// Parameter gradient of a loss given `dL/da` per action component and
    /// `dL/dlog_pi` per row, through the reparameterized sample.
    pub fn backward(
        &self,
        sample: &GaussianSample,
        d_action: ArrayView2<f64>,
        d_log_prob: &[f64],
    ) -> Result<Gradients, NnError> {
        let (rows, d) = sample.actions.dim();
        let mut d_mean = Array2::zeros((rows, d));
        let mut d_ls = Array2::zeros((rows, d));
        for i in 0..rows {
            for j in 0..d {
                let t = sample.squashed[[i, j]];
                // d log pi / du = 2 tanh(u); d log pi / d log_std (direct) = -1.
                let du = d_action[[i, j]] * self.high * (1.0 - t * t) + d_log_prob[i] * 2.0 * t;
                d_mean[[i, j]] = du;
                d_ls[[i, j]] = (du * sample.std[[i, j]] * sample.noise[[i, j]] - d_log_prob[i])
                    * sample.ls_pass[[i, j]];
            }
        }
        let upstream = concatenate![Axis(1), d_mean, d_ls];
        Ok(self.net.backward_batch(&sample.cache, upstream.view())?.0)
    }
}
