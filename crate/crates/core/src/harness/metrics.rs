use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One row per gradient step. Columns a run does not produce (actor loss
/// for DQN, propagation loss without imagination) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: u64,
    pub episode: u64,
    /// Return of the latest finished episode, or of the running one before
    /// any has finished.
    pub episode_return: f64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub im_loss: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub train: Vec<TrainRow>,
    pub eval: Vec<EvalRow>,
    /// Set when the run stopped early; rows up to the failure are kept.
    pub failure: Option<String>,
}

impl RunMetrics {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

pub fn write_rows<T: Serialize, W: Write>(
    rows: &[T],
    header: &[&str],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const TRAIN_HEADER: [&str; 7] = [
    "step",
    "episode",
    "episode_return",
    "critic_loss",
    "actor_loss",
    "im_loss",
    "wall_ms",
];
pub const EVAL_HEADER: [&str; 3] = ["step", "mean_return", "std_return"];

pub fn write_train_csv<W: Write>(rows: &[TrainRow], out: W) -> Result<(), HarnessError> {
    write_rows(rows, &TRAIN_HEADER, out)
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], out: W) -> Result<(), HarnessError> {
    write_rows(rows, &EVAL_HEADER, out)
}

pub fn read_eval_csv<R: Read>(input: R) -> Result<Vec<EvalRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_train_csv<R: Read>(input: R) -> Result<Vec<TrainRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
