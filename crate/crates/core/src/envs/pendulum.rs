use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, StepResult};

pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const G: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_STEPS: u32 = 200;
/// Most negative per-step reward: `pi^2 + 0.1 * 8^2 + 0.001 * 2^2`.
pub const MIN_REWARD: f64 =
    -(PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE);

/// Swing-up pendulum; `theta = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: u32,
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

impl PendulumState {
    pub fn reset(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            theta: rng.gen_range(-PI..=PI),
            theta_dot: rng.gen_range(-1.0..=1.0),
            steps: 0,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// Semi-implicit Euler step under torque `u` (clamped to `±2`).
    pub fn step(&self, u: f64) -> Result<(Self, StepResult), EnvError> {
        if !u.is_finite() {
            return Err(EnvError::NonFiniteAction);
        }
        let u = u.clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);

        let acc = 3.0 * G / (2.0 * LENGTH) * self.theta.sin() + 3.0 * u / (MASS * LENGTH * LENGTH);
        let theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        let next = Self {
            theta: self.theta + theta_dot * DT,
            theta_dot,
            steps: self.steps + 1,
        };
        let result = StepResult {
            observation: next.observation(),
            reward,
            done: false,
            truncated: next.steps >= MAX_STEPS,
        };
        Ok((next, result))
    }
}
