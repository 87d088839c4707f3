//! Bounded uniform replay of transitions.

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::envs::{Action, ActionSpace};

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("transition {what} has width {got}, buffer expects {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("transition contains non-finite values")]
    NonFinite,
    #[error("action outside the buffer's action space")]
    Action,
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub truncated: bool,
    /// Index of the training episode the step came from.
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    space: ActionSpace,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, space: ActionSpace) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            obs_dim,
            space,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }

    /// Storage slots in index order (not insertion order once wrapped).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        for (what, v) in [("observation", &t.obs), ("next observation", &t.next_obs)] {
            if v.len() != self.obs_dim {
                return Err(ReplayError::Dimension {
                    what,
                    expected: self.obs_dim,
                    got: v.len(),
                });
            }
        }
        if !self.space.contains(&t.action) {
            return Err(ReplayError::Action);
        }
        if !t.reward.is_finite() || t.obs.iter().chain(&t.next_obs).any(|x| !x.is_finite()) {
            return Err(ReplayError::NonFinite);
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Restores raw storage; used when loading checkpoints.
    pub(crate) fn restore(
        &mut self,
        items: Vec<Transition>,
        cursor: usize,
    ) -> Result<(), ReplayError> {
        if items.len() > self.capacity || cursor >= self.capacity {
            return Err(ReplayError::Dimension {
                what: "restored storage",
                expected: self.capacity,
                got: items.len().max(cursor),
            });
        }
        self.items.clear();
        self.cursor = 0;
        for t in items {
            self.push(t)?;
        }
        self.cursor = cursor;
        Ok(())
    }

    /// `n` uniform draws with replacement over the filled slots.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Builds `n` index pairs for the imagination update. First elements
    /// cycle through `anchors` (the current minibatch); second elements are
    /// independent uniform draws over the buffer. With `cross_episode_only`
    /// a second element from the anchor's own episode is redrawn, up to a
    /// fixed number of attempts.
    pub fn sample_pairs<R: Rng + ?Sized>(
        &self,
        anchors: &[usize],
        n: usize,
        cross_episode_only: bool,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>, ReplayError> {
        const REDRAWS: usize = 16;
        if self.items.is_empty() || anchors.is_empty() {
            return Err(ReplayError::Empty);
        }
        let len = self.items.len();
        Ok((0..n)
            .map(|i| {
                let first = anchors[i % anchors.len()];
                let mut second = rng.gen_range(0..len);
                if cross_episode_only {
                    let ep = self.items[first].episode;
                    for _ in 0..REDRAWS {
                        if self.items[second].episode != ep {
                            break;
                        }
                        second = rng.gen_range(0..len);
                    }
                }
                (first, second)
            })
            .collect())
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch::from_transitions(
            indices.iter().map(|&i| &self.items[i]),
            self.obs_dim,
            self.space,
        )
    }
}

/// Column-major view of a minibatch, ready for batched network passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Vec<Action>,
    /// Actions encoded as network input (one-hot for discrete spaces).
    pub encoded_actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Array2<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a>(
        items: impl IntoIterator<Item = &'a Transition>,
        obs_dim: usize,
        space: ActionSpace,
    ) -> Self {
        let mut obs = Vec::new();
        let mut next_obs = Vec::new();
        let mut enc = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut done = Vec::new();
        for t in items {
            obs.extend_from_slice(&t.obs);
            next_obs.extend_from_slice(&t.next_obs);
            space.encode_into(&t.action, &mut enc);
            actions.push(t.action.clone());
            rewards.push(t.reward);
            done.push(t.done);
        }
        let n = rewards.len();
        Self {
            obs: Array2::from_shape_vec((n, obs_dim), obs).expect("rows of obs_dim"),
            encoded_actions: Array2::from_shape_vec((n, space.encoded_dim()), enc)
                .expect("rows of action width"),
            next_obs: Array2::from_shape_vec((n, obs_dim), next_obs).expect("rows of obs_dim"),
            actions,
            rewards,
            done,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn discrete_actions(&self) -> Vec<usize> {
        self.actions
            .iter()
            .map(|a| match a {
                Action::Discrete(i) => *i,
                Action::Continuous(_) => panic!("continuous action in a discrete batch"),
            })
            .collect()
    }
}
