//! Named random streams derived from one master seed.
//!
//! Each concern draws from its own ChaCha stream, so switching a component
//! on or off (for example the imagination module) never shifts the numbers
//! another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Training environment reset seeds.
    Env = 1,
    /// Exploration: epsilon-greedy draws, warmup actions, policy noise.
    Action = 2,
    Replay = 3,
    ImaginationPairs = 4,
    Eval = 5,
    /// Stochasticity inside agent updates (SAC's resampled actions).
    Update = 6,
    AgentInit = 7,
    ImaginationInit = 8,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Exact position of a stream, for checkpointing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: JSON numbers cannot hold a full `u128`.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<Rng> {
        let pos: u128 = self.word_pos.parse().ok()?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Some(rng)
    }
}
