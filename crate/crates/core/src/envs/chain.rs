use serde::{Deserialize, Serialize};

use super::{EnvError, StepResult};

pub const NUM_STATES: usize = 5;
pub const GOAL: usize = NUM_STATES - 1;
pub const MAX_STEPS: u32 = 50;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Five-state corridor; reaching the right end pays 1 and terminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub position: usize,
    pub steps: u32,
}

/// The deterministic transition table: `(next position, reward, terminal)`.
pub fn transition(position: usize, action: usize) -> Result<(usize, f64, bool), EnvError> {
    if position >= NUM_STATES {
        return Err(EnvError::InvalidState);
    }
    let next = match action {
        LEFT => position.saturating_sub(1),
        RIGHT => (position + 1).min(GOAL),
        other => return Err(EnvError::InvalidAction(other)),
    };
    let goal = next == GOAL;
    Ok((next, if goal { 1.0 } else { 0.0 }, goal))
}

pub fn one_hot(position: usize) -> Vec<f64> {
    let mut v = vec![0.0; NUM_STATES];
    v[position] = 1.0;
    v
}

impl ChainState {
    pub fn reset() -> Self {
        Self {
            position: 0,
            steps: 0,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        one_hot(self.position)
    }

    pub fn step(&self, action: usize) -> Result<(Self, StepResult), EnvError> {
        let (position, reward, done) = transition(self.position, action)?;
        let next = Self {
            position,
            steps: self.steps + 1,
        };
        let result = StepResult {
            observation: next.observation(),
            reward,
            done,
            truncated: !done && next.steps >= MAX_STEPS,
        };
        Ok((next, result))
    }
}

/// Tabular value iteration over [`transition`], iterated until the largest
/// update falls below `tol`. Returns `Q[position][action]` for the four
/// non-terminal positions.
pub fn optimal_q(gamma: f64, tol: f64) -> [[f64; 2]; GOAL] {
    let mut q = [[0.0; 2]; GOAL];
    loop {
        let v = |p: usize, q: &[[f64; 2]; GOAL]| if p == GOAL { 0.0 } else { q[p][0].max(q[p][1]) };
        let mut next = [[0.0; 2]; GOAL];
        let mut delta: f64 = 0.0;
        for (p, row) in next.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                let (n, r, done) = transition(p, a).expect("valid table entry");
                *cell = r + if done { 0.0 } else { gamma * v(n, &q) };
                delta = delta.max((*cell - q[p][a]).abs());
            }
        }
        q = next;
        if delta < tol {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stepping_right_from_three_reaches_goal() {
        let s = ChainState {
            position: 3,
            steps: 0,
        };
        let (n, r) = s.step(RIGHT).unwrap();
        assert_eq!(n.position, 4);
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
    }

    #[test]
    fn left_is_floored_at_zero() {
        let (n, r) = ChainState::reset().step(LEFT).unwrap();
        assert_eq!(n.position, 0);
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn truncates_after_fifty_steps() {
        let mut s = ChainState::reset();
        for i in 1..=MAX_STEPS {
            let (n, r) = s.step(LEFT).unwrap();
            assert_eq!(r.truncated, i == MAX_STEPS);
            s = n;
        }
    }

    #[test]
    fn value_iteration_reproduces_optimal_table() {
        let q = optimal_q(0.9, 1e-12);
        let expected_right = [0.729, 0.81, 0.9, 1.0];
        for (p, &e) in expected_right.iter().enumerate() {
            assert!(
                (q[p][RIGHT] - e).abs() < 1e-9,
                "Q*({p}, R) = {}",
                q[p][RIGHT]
            );
        }
        // Going left wastes a step: Q*(p, L) = 0.9 * V*(max(p - 1, 0)).
        assert!((q[0][LEFT] - 0.6561).abs() < 1e-9);
        assert!((q[3][LEFT] - 0.81).abs() < 1e-9);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(transition(5, RIGHT).is_err());
        assert!(transition(0, 2).is_err());
    }
}
