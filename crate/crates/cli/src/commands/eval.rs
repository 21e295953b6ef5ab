//! `brpolab eval`: score a policy checkpoint on the task suite.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use brpolab_core::env::SynthEnv;
use brpolab_core::trainer::{evaluate, load_checkpoint, task_pool};
use brpolab_core::PolicyParams;

use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Policy checkpoint; the untrained policy when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Rollouts per task, overriding the config.
    #[arg(long)]
    n_samples: Option<usize>,
}

pub fn run(global: &GlobalArgs, args: &EvalArgs) -> anyhow::Result<()> {
    let cfg = global.load_config()?;
    let env = SynthEnv::new(cfg.env.clone()).context("invalid environment")?;
    let tasks = task_pool(&env, cfg.seed, cfg.train.task_pool);
    let policy = match &args.checkpoint {
        Some(path) => load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?,
        None => PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order),
    };
    let n_samples = args.n_samples.unwrap_or(cfg.eval.n_samples);
    let report = evaluate(
        &env,
        &policy,
        &tasks,
        n_samples,
        cfg.eval.temperature,
        cfg.eval.top_p,
        cfg.seed,
    );
    println!(
        "tasks {} x samples {}: quality {:.4} +/- {:.4}, length {:.3}, filler {:.3}",
        report.tasks,
        n_samples,
        report.mean_quality,
        report.std_quality,
        report.mean_length,
        report.mean_filler
    );

    let out = global.ensure_out()?;
    let path = out.join("eval_report.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record([
        "tasks",
        "rollouts",
        "mean_quality",
        "std_quality",
        "mean_length",
        "mean_filler",
    ])?;
    writer.write_record([
        report.tasks.to_string(),
        report.rollouts.to_string(),
        report.mean_quality.to_string(),
        report.std_quality.to_string(),
        report.mean_length.to_string(),
        report.mean_filler.to_string(),
    ])?;
    writer.flush()?;
    println!("report: {}", path.display());
    Ok(())
}
