use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::nn::{Adam, AdamConfig, ForwardCache, Gradients, Mlp, NnError};

/// How a critic network consumes an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    /// Input is the observation; one output per discrete action.
    ActionHead,
    /// Input is `[observation | action]`; scalar output.
    StateAction,
}

/// A Q-function with its target copy and optimizer.
///
/// Actions are always passed encoded (one-hot for discrete spaces), which
/// lets both kinds share one code path: an action-head critic's `Q(s, a)`
/// is the dot product of its output row with the one-hot action.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: Adam,
    kind: CriticKind,
    obs_dim: usize,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    fwd: ForwardCache,
    actions: Array2<f64>,
}

pub(crate) fn hcat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), a, b]
}

impl Critic {
    pub fn new(net: Mlp, kind: CriticKind, obs_dim: usize, opt: AdamConfig) -> Self {
        Self {
            target: net.clone(),
            opt: Adam::new(&net, opt),
            net,
            kind,
            obs_dim,
        }
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn input(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        match self.kind {
            CriticKind::ActionHead => obs.to_owned(),
            CriticKind::StateAction => hcat(obs, actions),
        }
    }

    fn reduce(&self, out: &Array2<f64>, actions: ArrayView2<f64>) -> Vec<f64> {
        match self.kind {
            CriticKind::ActionHead => (out * &actions).sum_axis(Axis(1)).to_vec(),
            CriticKind::StateAction => out.column(0).to_vec(),
        }
    }

    /// `Q(s_i, a_i)` for every row using `net`.
    pub fn q_with(
        &self,
        net: &Mlp,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Vec<f64>, NnError> {
        let out = net.forward_batch(self.input(obs, actions).view())?;
        Ok(self.reduce(&out, actions))
    }

    pub fn q(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        self.q_with(&self.net, obs, actions)
    }

    pub fn q_target(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Vec<f64>, NnError> {
        self.q_with(&self.target, obs, actions)
    }

    /// Single-pair evaluation.
    pub fn evaluate(&self, obs: &[f64], action: &[f64]) -> Result<f64, NnError> {
        let o = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row");
        Ok(self.q(o, a)?[0])
    }

    pub fn q_cached(
        &self,
        obs: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, CriticCache), NnError> {
        let fwd = self
            .net
            .forward_batch_cached(self.input(obs, actions).view())?;
        let q = self.reduce(fwd.output(), actions);
        Ok((
            q,
            CriticCache {
                fwd,
                actions: actions.to_owned(),
            },
        ))
    }

    /// Gradient of `sum_i dq_i * Q(s_i, a_i)` w.r.t. the online parameters,
    /// plus the gradient w.r.t. the (encoded) action inputs. The latter is
    /// zero for action-head critics.
    pub fn backward(
        &self,
        cache: &CriticCache,
        dq: &[f64],
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        let n = dq.len();
        let upstream = match self.kind {
            CriticKind::ActionHead => {
                let mut up = cache.actions.clone();
                for (mut row, &d) in up.rows_mut().into_iter().zip(dq) {
                    row *= d;
                }
                up
            }
            CriticKind::StateAction => Array2::from_shape_vec((n, 1), dq.to_vec()).expect("column"),
        };
        let (g, dx) = self.net.backward_batch(&cache.fwd, upstream.view())?;
        let da = match self.kind {
            CriticKind::ActionHead => Array2::zeros(cache.actions.raw_dim()),
            CriticKind::StateAction => dx.slice(s![.., self.obs_dim..]).to_owned(),
        };
        Ok((g, da))
    }

    /// Per-row maximum over actions of the target network (action-head only).
    pub fn max_target(&self, obs: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        debug_assert_eq!(self.kind, CriticKind::ActionHead);
        let out = self.target.forward_batch(obs)?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }
}
