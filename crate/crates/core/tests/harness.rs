use std::path::Path;

use imrl::agents::AlgoName;
use imrl::envs::EnvName;
use imrl::harness::{
    compare, evaluate, metrics, ComparisonReport, ExperimentConfig, HarnessError, Trainer,
};
use imrl::rng::{stream, Stream};

fn sac_im_cfg(total: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(EnvName::Pendulum, AlgoName::Sac);
    cfg.algo.hidden = Some(vec![16, 16]);
    cfg.algo.batch_size = 16;
    cfg.im.enabled = true;
    cfg.im.k = 2;
    cfg.im.feature_dim = 4;
    cfg.im.encoder_hidden = vec![8];
    cfg.train.total_steps = total;
    cfg.train.warmup_steps = 150;
    cfg.train.eval_every = 250;
    cfg.train.eval_episodes = 1;
    cfg.seed = 4;
    cfg
}

fn dqn_cfg(total: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(EnvName::Cartpole, AlgoName::Dqn);
    cfg.algo.hidden = Some(vec![16]);
    cfg.algo.batch_size = 16;
    cfg.algo.target_update_period = 100;
    cfg.train.total_steps = total;
    cfg.train.warmup_steps = 200;
    cfg.train.eval_every = 500;
    cfg.train.eval_episodes = 2;
    cfg.seed = 9;
    cfg
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let mut t = Trainer::new(sac_im_cfg(600)).unwrap();
        t.run().unwrap();
        t.write_outputs(dir).unwrap();
    }
    for f in ["train.csv", "eval.csv", "final.ckpt", "config.echo.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let rows = metrics::read_train_csv(&read(a.path(), "train.csv")[..]).unwrap();
    assert_eq!(rows.len(), 450);
    assert!(rows
        .iter()
        .all(|r| r.im_loss.is_some_and(f64::is_finite) && r.actor_loss.is_some()));
    let echo = ExperimentConfig::from_json(
        &String::from_utf8(read(a.path(), "config.echo.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(echo, sac_im_cfg(600));
}

fn resume_matches(cfg: ExperimentConfig, split: u64) {
    let dir = tempfile::tempdir().unwrap();
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    straight.run().unwrap();

    let mut first = Trainer::new(cfg).unwrap();
    first.run_until(split).unwrap();
    let ckpt = dir.path().join("mid.ckpt");
    first.save_checkpoint(&ckpt).unwrap();
    drop(first);
    let mut resumed = Trainer::load_checkpoint(&ckpt).unwrap();
    assert_eq!(resumed.step(), split);
    resumed.run().unwrap();

    assert_eq!(resumed.metrics(), straight.metrics());
    let (sa, sb) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    straight.write_outputs(sa.path()).unwrap();
    resumed.write_outputs(sb.path()).unwrap();
    for f in ["train.csv", "eval.csv", "final.ckpt"] {
        assert_eq!(read(sa.path(), f), read(sb.path(), f), "{f}");
    }
}

#[test]
fn resume_equals_uninterrupted_sac_with_imagination() {
    // 437 is mid-episode and not on an eval boundary.
    resume_matches(sac_im_cfg(800), 437);
}

#[test]
fn resume_equals_uninterrupted_dqn() {
    resume_matches(dqn_cfg(2000), 1000);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = dqn_cfg(300);
    cfg.train.eval_every = 300;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    let path = dir.path().join("c.ckpt");
    t.save_checkpoint(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 100;
    bytes[last] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        Trainer::load_checkpoint(&path),
        Err(HarnessError::Checkpoint(_))
    ));
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Trainer::load_checkpoint(&path).is_err());
}

#[test]
fn random_policy_pendulum_eval_is_within_reward_bounds() {
    let mut cfg = sac_im_cfg(0);
    cfg.train.eval_every = 1;
    let t = Trainer::new(cfg).unwrap();
    let (mean, _) = evaluate(
        t.agent(),
        EnvName::Pendulum,
        3,
        &mut stream(0, Stream::Eval),
    )
    .unwrap();
    assert!((-16.2736 * 200.0..=0.0).contains(&mean), "{mean}");
}

#[test]
fn eval_does_not_perturb_training() {
    let mut frequent = dqn_cfg(1000);
    frequent.train.eval_every = 100;
    let mut a = Trainer::new(frequent).unwrap();
    a.run().unwrap();
    let mut b = Trainer::new(dqn_cfg(1000)).unwrap();
    b.run().unwrap();
    assert_eq!(a.metrics().train, b.metrics().train);
}

#[test]
fn compare_writes_report_and_run_dirs() {
    let out = tempfile::tempdir().unwrap();
    let base = dqn_cfg(700);
    let mut variant = base.clone();
    variant.im.enabled = true;
    variant.im.k = 2;
    variant.im.feature_dim = 4;
    let report = compare(&base, &variant, &[1, 2], 700, out.path()).unwrap();
    assert_eq!(report.base.n, 2);
    assert_eq!(report.variant.n, 2);
    assert_eq!(report.warnings, 0);
    assert_eq!(report.task, "cartpole/dqn");
    for arm in ["base", "variant"] {
        for seed in [1, 2] {
            let d = out.path().join(arm).join(format!("seed-{seed}"));
            for f in ["train.csv", "eval.csv", "final.ckpt", "config.echo.json"] {
                assert!(d.join(f).exists(), "{}", d.join(f).display());
            }
        }
    }
    let json: ComparisonReport =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json, report);
    let b = report.base.mean.unwrap();
    let v = report.variant.mean.unwrap();
    assert!((report.promotion.unwrap() - (v - b) / b.abs() * 100.0).abs() < 1e-9);

    assert!(compare(&base, &variant, &[1], 700, out.path()).is_err());
}
