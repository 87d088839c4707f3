pub mod agents;
pub mod envs;
pub mod harness;
pub mod imagination;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod state;
