use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, write_rows, EvalRow, RunMetrics};
use super::{run_training, ExperimentConfig, HarnessError};

/// Percentage change of `variant` over `base`, relative to `|base|`.
pub fn promotion(base: f64, variant: f64) -> f64 {
    (variant - base) / base.abs() * 100.0
}

/// Mean return at the last evaluation at or before `at_step`.
pub fn score_at(curve: &[EvalRow], at_step: u64) -> Option<f64> {
    curve
        .iter()
        .rev()
        .find(|r| r.step <= at_step)
        .map(|r| r.mean_return)
}

/// First evaluation step whose mean return reaches `target`; `None` if the
/// curve never does.
pub fn steps_to_match(curve: &[EvalRow], target: f64) -> Option<u64> {
    curve
        .iter()
        .find(|r| r.mean_return >= target)
        .map(|r| r.step)
}

/// Pointwise mean over runs, keeping only steps every run evaluated.
pub fn mean_curve(curves: &[&[EvalRow]]) -> Vec<EvalRow> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter_map(|row| {
            let vals: Option<Vec<f64>> = curves
                .iter()
                .map(|c| c.iter().find(|r| r.step == row.step).map(|r| r.mean_return))
                .collect();
            let (mean, std) = mean_std(&vals?);
            Some(EvalRow {
                step: row.step,
                mean_return: mean,
                std_return: std,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation over seeds.
    pub std: Option<f64>,
    pub n: usize,
    /// Per-seed score at the comparison step; `None` for failed runs.
    pub scores: Vec<Option<f64>>,
}

impl ArmSummary {
    fn from_scores(scores: Vec<Option<f64>>) -> Self {
        let ok: Vec<f64> = scores.iter().flatten().copied().collect();
        let (mean, std) = if ok.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&ok);
            (Some(m), Some(s))
        };
        Self {
            mean,
            std,
            n: ok.len(),
            scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

/// Baseline-versus-variant summary. `steps_to_match` of `None` means the
/// variant never reached the baseline's score (serialized as `null` in
/// JSON and `inf` in CSV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: String,
    pub at_step: u64,
    pub seeds: Vec<u64>,
    pub base: ArmSummary,
    pub variant: ArmSummary,
    pub promotion: Option<f64>,
    pub steps_to_match: Option<u64>,
    pub steps_to_match_per_seed: Vec<Option<u64>>,
    pub failures: Vec<RunFailure>,
    pub warnings: usize,
}

fn usable<'a>(
    arm: &str,
    runs: &'a [RunOutcome],
    seeds: &[u64],
    failures: &mut Vec<RunFailure>,
) -> Vec<Option<&'a RunMetrics>> {
    runs.iter()
        .zip(seeds)
        .map(|(r, &seed)| {
            let error = match r {
                Ok(m) if !m.failed() => return Some(m),
                Ok(m) => m.failure.clone().unwrap_or_default(),
                Err(e) => e.clone(),
            };
            failures.push(RunFailure {
                arm: arm.to_string(),
                seed,
                error,
            });
            None
        })
        .collect()
}

pub type RunOutcome = Result<RunMetrics, String>;

impl ComparisonReport {
    /// Aggregates per-seed outcomes of both arms (same order as `seeds`).
    pub fn from_runs(
        task: &str,
        at_step: u64,
        seeds: &[u64],
        base: &[RunOutcome],
        variant: &[RunOutcome],
    ) -> Self {
        let mut failures = Vec::new();
        let base_runs = usable("base", base, seeds, &mut failures);
        let variant_runs = usable("variant", variant, seeds, &mut failures);
        let scores = |runs: &[Option<&RunMetrics>]| -> Vec<Option<f64>> {
            runs.iter()
                .map(|r| r.and_then(|m| score_at(&m.eval, at_step)))
                .collect()
        };
        let base_sum = ArmSummary::from_scores(scores(&base_runs));
        let variant_sum = ArmSummary::from_scores(scores(&variant_runs));

        let curves: Vec<&[EvalRow]> = variant_runs
            .iter()
            .flatten()
            .map(|m| m.eval.as_slice())
            .collect();
        let (promotion_pct, stm, per_seed) = match base_sum.mean {
            Some(b) => {
                let per_seed = variant_runs
                    .iter()
                    .map(|r| r.and_then(|m| steps_to_match(&m.eval, b)))
                    .collect();
                let stm = steps_to_match(&mean_curve(&curves), b);
                (variant_sum.mean.map(|v| promotion(b, v)), stm, per_seed)
            }
            None => (None, None, vec![None; seeds.len()]),
        };
        let warnings = failures.len();
        Self {
            task: task.to_string(),
            at_step,
            seeds: seeds.to_vec(),
            base: base_sum,
            variant: variant_sum,
            promotion: promotion_pct,
            steps_to_match: stm,
            steps_to_match_per_seed: per_seed,
            failures,
            warnings,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(dir.join("report.json"), json + "\n")?;
        write_rows(
            &self.csv_rows(),
            &["row", "mean", "std", "n", "promotion_pct", "steps_to_match"],
            BufWriter::new(File::create(dir.join("report.csv"))?),
        )
    }

    fn csv_rows(&self) -> Vec<ReportRow> {
        let arm = |row: &str, s: &ArmSummary| ReportRow {
            row: row.to_string(),
            mean: s.mean,
            std: s.std,
            n: s.n,
            promotion_pct: None,
            steps_to_match: None,
        };
        vec![
            arm("base", &self.base),
            arm("variant", &self.variant),
            ReportRow {
                row: "aggregate".into(),
                mean: None,
                std: None,
                n: self.base.n.min(self.variant.n),
                promotion_pct: self.promotion,
                steps_to_match: Some(
                    self.steps_to_match
                        .map_or_else(|| "inf".to_string(), |s| s.to_string()),
                ),
            },
        ]
    }
}

#[derive(Serialize)]
struct ReportRow {
    row: String,
    mean: Option<f64>,
    std: Option<f64>,
    n: usize,
    promotion_pct: Option<f64>,
    steps_to_match: Option<String>,
}

/// Trains both arms on every seed (in parallel up to the core count), each
/// run in `out/<arm>/seed-<s>`, then writes `report.json` and `report.csv`.
pub fn compare(
    base: &ExperimentConfig,
    variant: &ExperimentConfig,
    seeds: &[u64],
    at_step: u64,
    out: &Path,
) -> Result<ComparisonReport, HarnessError> {
    if seeds.len() < 2 {
        return Err(HarnessError::Config(
            "compare needs at least two seeds".into(),
        ));
    }
    base.validate()?;
    variant.validate()?;
    if base.env.name != variant.env.name {
        return Err(HarnessError::Config(
            "arms must use the same environment".into(),
        ));
    }

    let jobs: Vec<(usize, &str, ExperimentConfig, PathBuf)> =
        [("base", base), ("variant", variant)]
            .into_iter()
            .flat_map(|(arm, cfg)| {
                seeds.iter().map(move |&seed| {
                    let mut c = cfg.clone();
                    c.seed = seed;
                    (arm, c, out.join(arm).join(format!("seed-{seed}")))
                })
            })
            .enumerate()
            .map(|(i, (arm, c, dir))| (i, arm, c, dir))
            .collect();
    let results: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((idx, arm, cfg, dir)) = jobs.get(i) else {
                    break;
                };
                log::info!("{arm} seed {}: training", cfg.seed);
                let outcome = run_training(cfg, Some(dir)).map_err(|e| e.to_string());
                results.lock().expect("no poisoned workers")[*idx] = Some(outcome);
            });
        }
    });
    let mut results: Vec<RunOutcome> = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    let variant_runs = results.split_off(seeds.len());
    let task = format!("{}/{}", base.env.name.as_str(), base.algo.name.as_str());
    let report = ComparisonReport::from_runs(&task, at_step, seeds, &results, &variant_runs);
    if report.warnings > 0 {
        log::warn!(
            "{} run(s) failed and were excluded from the aggregates",
            report.warnings
        );
    }
    report.write(out)?;
    Ok(report)
}
