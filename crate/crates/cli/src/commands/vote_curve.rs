//! `brpolab vote-curve`: majority-voting accuracy as a function of the
//! number of votes per pair.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;

use brpolab_core::env::SynthEnv;
use brpolab_core::judges::{majority_prefers_a, SimJudge};
use brpolab_core::policy::sample_rollout;
use brpolab_core::record::read_records_file;
use brpolab_core::rng::{RngStream, StreamPurpose};
use brpolab_core::trainer::task_pool;
use brpolab_core::types::{PreferencePair, Rollout};
use brpolab_core::{PolicyParams, TaskSpec};

use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct VoteCurveArgs {
    /// Vote counts to evaluate (comma-separated). Majority voting wants odd
    /// values; even values error without --allow-even.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5, 7])]
    n: Vec<usize>,

    /// Judgment trials per vote count.
    #[arg(long, default_value_t = 2000)]
    trials: usize,

    /// Preference-pair fixture file; a synthetic fixture pair is built from
    /// the config when omitted.
    #[arg(long)]
    pairs: Option<PathBuf>,

    /// Permit even vote counts; ties then count against the chosen response.
    #[arg(long)]
    allow_even: bool,

    /// Calibrate the judge so its per-vote accuracy on the first fixture
    /// pair equals this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct VoteCurveRow {
    n: usize,
    trials: usize,
    accuracy: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn run(global: &GlobalArgs, args: &VoteCurveArgs) -> anyhow::Result<()> {
    let cfg = global.load_config()?;
    let env = SynthEnv::new(cfg.env.clone()).context("invalid environment")?;

    for &n in &args.n {
        if n == 0 {
            bail!("vote counts must be >= 1");
        }
        if n % 2 == 0 && !args.allow_even {
            bail!("even vote count {n} is tie-prone; pass --allow-even to permit it");
        }
    }

    // Fixture: (task, better, worse) triples with strictly distinct oracle
    // quality.
    let fixture = match &args.pairs {
        Some(path) => {
            let pairs: Vec<PreferencePair> =
                read_records_file(path).with_context(|| format!("reading {}", path.display()))?;
            if pairs.is_empty() {
                bail!("pair fixture {} is empty", path.display());
            }
            pairs
                .into_iter()
                .map(|p| resolve_pair(&env, &cfg, p))
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        None => vec![synthesize_pair(&env, &cfg)?],
    };

    let mut spec = cfg.judge.sim_spec();
    if let Some(target) = args.target_accuracy {
        if !(0.5..1.0).contains(&target) && target != 0.5 {
            bail!("target accuracy must lie in [0.5, 1)");
        }
        let (task, better, worse) = &fixture[0];
        let gap = env.oracle_quality(task, better).quality - env.oracle_quality(task, worse).quality;
        spec.discrimination = if target == 0.5 {
            1e-12
        } else {
            (target / (1.0 - target)).ln() / gap
        };
    }
    let judge = SimJudge::new(spec, env.clone());

    let mut rows = Vec::new();
    for &n in &args.n {
        let mut correct = 0usize;
        for trial in 0..args.trials {
            let (task, better, worse) = &fixture[trial % fixture.len()];
            let mut rng = RngStream::for_purpose(
                cfg.seed,
                StreamPurpose::Experiment,
                n as u64,
                trial as u64,
            );
            if majority_prefers_a(&judge, task, better, worse, n as u32, &mut rng)? {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / args.trials as f64;
        let (ci_low, ci_high) = wilson_interval(correct, args.trials);
        rows.push(VoteCurveRow {
            n,
            trials: args.trials,
            accuracy,
            ci_low,
            ci_high,
        });
        println!("voting@{n}: accuracy {accuracy:.4} [{ci_low:.4}, {ci_high:.4}]");
    }

    let out = global.ensure_out()?;
    let path = out.join("vote_curve.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    println!("curve: {}", path.display());
    Ok(())
}

/// Map a recorded pair back onto its task (query ids index the config's task
/// stream) and order it by true quality.
fn resolve_pair(
    env: &SynthEnv,
    cfg: &brpolab_core::ExperimentConfig,
    pair: PreferencePair,
) -> anyhow::Result<(TaskSpec, Rollout, Rollout)> {
    let index: u64 = pair
        .query_id
        .strip_prefix('q')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| anyhow::anyhow!("query id {:?} does not index a task", pair.query_id))?;
    let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::TaskGen, index, 0);
    let task = env.make_task(&mut rng, index);
    Ok((task, pair.chosen, pair.rejected))
}

/// Build one pair with strictly distinct quality by sampling the untrained
/// policy.
fn synthesize_pair(
    env: &SynthEnv,
    cfg: &brpolab_core::ExperimentConfig,
) -> anyhow::Result<(TaskSpec, Rollout, Rollout)> {
    let tasks = task_pool(env, cfg.seed, 1);
    let task = tasks.into_iter().next().expect("pool of one");
    let policy = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
    let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Pipeline, 0, 0);
    for _ in 0..1000 {
        let a = sample_rollout(
            &policy,
            &task,
            env.params().max_len,
            env.params().end_token,
            &mut rng,
            1.0,
            1.0,
        );
        let b = sample_rollout(
            &policy,
            &task,
            env.params().max_len,
            env.params().end_token,
            &mut rng,
            1.0,
            1.0,
        );
        let qa = env.oracle_quality(&task, &a).quality;
        let qb = env.oracle_quality(&task, &b).quality;
        if qa > qb {
            return Ok((task, a, b));
        }
        if qb > qa {
            return Ok((task, b, a));
        }
    }
    bail!("could not synthesize a quality-distinct fixture pair");
}

/// Wilson score interval at 95%.
fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let z = 1.959964;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z2 / (4.0 * n)) / n).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}
