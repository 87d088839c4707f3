use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use imrl::harness::{compare, evaluate, ExperimentConfig, Trainer};
use imrl::rng::{stream, Stream};

/// Train, evaluate and compare TD agents with and without critic
/// propagation. Runs are always deterministic given config and seed.
#[derive(Parser)]
#[command(name = "imrl", version)]
struct Cli {
    /// Suppress progress lines.
    #[arg(long, global = true)]
    quiet: bool,
    /// Accepted for compatibility; runs are always deterministic.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write train.csv, eval.csv, final.ckpt
    /// and config.echo.json.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long, conflicts_with = "resume")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Train two configurations over several seeds and report scores at a
    /// given step.
    Compare {
        #[arg(long = "config-a")]
        config_a: PathBuf,
        #[arg(long = "config-b")]
        config_b: PathBuf,
        /// Number of seeds (0..S) or a comma-separated list.
        #[arg(long)]
        seeds: String,
        #[arg(long = "at-step")]
        at_step: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's greedy policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Seed for the evaluation episodes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if text.contains(',') {
        text.split(',')
            .map(|s| s.trim().parse().with_context(|| format!("bad seed {s:?}")))
            .collect::<Result<_>>()?
    } else {
        let n: u64 = text
            .trim()
            .parse()
            .with_context(|| format!("bad seed count {text:?}"))?;
        (0..n).collect()
    };
    if seeds.len() < 2 {
        bail!("compare needs at least two seeds");
    }
    Ok(seeds)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let mut trainer = match resume {
                Some(ckpt) => Trainer::load_checkpoint(&ckpt)
                    .with_context(|| format!("loading checkpoint {}", ckpt.display()))?,
                None => {
                    let config = config.context("--config is required")?;
                    let mut cfg = ExperimentConfig::from_file(&config)?;
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    Trainer::new(cfg)?
                }
            };
            trainer.run()?;
            trainer
                .write_outputs(&out)
                .with_context(|| format!("writing outputs to {}", out.display()))?;
            if let Some(f) = &trainer.metrics().failure {
                bail!(
                    "run failed at {f}; partial metrics written to {}",
                    out.display()
                );
            }
            if let Some(last) = trainer.metrics().eval.last() {
                log::info!("final eval at step {}: {:.3}", last.step, last.mean_return);
            }
        }
        Command::Compare {
            config_a,
            config_b,
            seeds,
            at_step,
            out,
        } => {
            let a = ExperimentConfig::from_file(&config_a)?;
            let b = ExperimentConfig::from_file(&config_b)?;
            let report = compare(&a, &b, &parse_seeds(&seeds)?, at_step, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            if episodes == 0 {
                bail!("--episodes must be at least 1");
            }
            let trainer = Trainer::load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let env = trainer.config().env.name;
            let (mean, std) = evaluate(
                trainer.agent(),
                env,
                episodes,
                &mut stream(seed, Stream::Eval),
            )?;
            println!(
                "{}",
                serde_json::json!({"step": trainer.step(), "episodes": episodes, "mean_return": mean, "std_return": std})
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    run(cli)
}
