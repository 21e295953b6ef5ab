//! `brpolab datapipe`: the preference-data pipeline.
//!
//! Stages: `filter` applies the reward thresholds; `swap` judges every pair
//! in both presentations and keeps order-consistent ones (doubling them);
//! `genrm` runs the dynamic-sampling pass, scoring each kept prompt with a
//! group of judgments and dropping prompts the judge gets uniformly right or
//! wrong. `all` chains the three.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::Serialize;

use brpolab_core::config::RewardSource;
use brpolab_core::env::SynthEnv;
use brpolab_core::genrm::{
    filter_preferences, genrm_dynamic_filter, swap_and_rejection_filter, ChosenOrder,
    DropRateTracker, FilterDecision, JudgedExample, JudgePromptRecord,
};
use brpolab_core::judges::{judge_with_order, PairJudge, RemoteJudge, ScalarRm, SimJudge};
use brpolab_core::policy::sample_rollout;
use brpolab_core::record::{read_records_file, write_records_file};
use brpolab_core::rng::{RngStream, StreamPurpose};
use brpolab_core::types::{PreferencePair, PresentationOrder};
use brpolab_core::{ExperimentConfig, PolicyParams, TaskSpec};

use crate::GlobalArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Filter,
    Swap,
    Genrm,
    All,
}

#[derive(Debug, Args)]
pub struct DatapipeArgs {
    /// Input preference pairs (record file). Mutually exclusive with
    /// --generate.
    #[arg(long, conflicts_with = "generate")]
    pairs: Option<PathBuf>,

    /// Generate this many synthetic pairs from the config instead of
    /// reading a file.
    #[arg(long)]
    generate: Option<usize>,

    #[arg(long, value_enum, default_value_t = Stage::All)]
    stage: Stage,

    /// Judgments per prompt in the genrm stage (defaults to the training
    /// group size).
    #[arg(long)]
    group: Option<usize>,
}

#[derive(Debug, Serialize)]
struct StepValue {
    step: usize,
    value: f64,
}

pub fn run(global: &GlobalArgs, args: &DatapipeArgs) -> anyhow::Result<()> {
    let cfg = global.load_config()?;
    let env = SynthEnv::new(cfg.env.clone()).context("invalid environment")?;
    let out = global.ensure_out()?;

    let pairs: Vec<PreferencePair> = match (&args.pairs, args.generate) {
        (Some(path), None) => {
            read_records_file(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(n)) => {
            let generated = generate_pairs(&cfg, &env, n)?;
            let path = out.join("pairs_raw.jsonl");
            write_records_file(&path, &generated)?;
            println!("generated {} pairs -> {}", generated.len(), path.display());
            generated
        }
        (None, None) => bail!("datapipe needs --pairs FILE or --generate N"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    println!("pairs in: {}", pairs.len());

    // Stage 1: reward thresholds.
    let filtered = if matches!(args.stage, Stage::Filter | Stage::All) {
        let outcome = filter_preferences(&pairs, cfg.datapipe.min_chosen_reward, cfg.datapipe.min_gap);
        if outcome.skipped_missing > 0 {
            eprintln!(
                "warning: {} pairs skipped for missing reward fields",
                outcome.skipped_missing
            );
        }
        let path = out.join("pairs_filtered.jsonl");
        write_records_file(&path, &outcome.kept)?;
        println!(
            "filter: kept {}/{} (min_chosen_reward {}, min_gap {}) -> {}",
            outcome.kept.len(),
            pairs.len(),
            cfg.datapipe.min_chosen_reward,
            cfg.datapipe.min_gap,
            path.display()
        );
        outcome.kept
    } else {
        pairs
    };
    if args.stage == Stage::Filter {
        return Ok(());
    }

    let judge = build_judge(&cfg, &env)?;

    // Stage 2: order-swap consistency with doubling.
    let swapped = if matches!(args.stage, Stage::Swap | Stage::All) {
        let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Pipeline, 1, 0);
        let outcome = swap_and_rejection_filter(&filtered, |pair, order| {
            let (task, order) = pair_presentation(&cfg, &env, pair, order)?;
            judge_with_order(
                judge.as_ref(),
                &task,
                &pair.chosen,
                &pair.rejected,
                order,
                &mut rng,
                0,
            )
        });
        let records: Vec<JudgePromptRecord> = outcome.kept.iter().map(JudgePromptRecord::from).collect();
        let path = out.join("judge_prompts.jsonl");
        write_records_file(&path, &records)?;
        println!(
            "swap: kept {}/{} pairs (judge failures {}), doubled to {} prompts -> {}",
            outcome.pairs_kept,
            outcome.pairs_in,
            outcome.judge_failures,
            records.len(),
            path.display()
        );
        outcome.kept.into_iter().map(|o| o.pair).collect::<Vec<_>>()
    } else {
        filtered
    };
    if args.stage == Stage::Swap {
        return Ok(());
    }

    // Stage 3: GenRM dynamic-sampling pass with drop-rate and
    // preference-ratio series.
    let group_size = args.group.unwrap_or(cfg.train.group_size);
    let mut tracker = DropRateTracker::default();
    let mut drop_series: Vec<StepValue> = Vec::new();
    let mut ratio_series: Vec<StepValue> = Vec::new();
    let mut kept_prompts = 0usize;
    for (step, pair) in swapped.iter().step_by(2).enumerate() {
        let mut rng =
            RngStream::for_purpose(cfg.seed, StreamPurpose::Pipeline, 2, step as u64);
        let mut examples: Vec<JudgedExample> = Vec::with_capacity(group_size);
        for vote in 0..group_size {
            let chosen_order = if vote % 2 == 0 {
                ChosenOrder::FirstIsChosen
            } else {
                ChosenOrder::FirstIsRejected
            };
            let (task, order) = pair_presentation(&cfg, &env, pair, chosen_order)?;
            let judgment = judge_with_order(
                judge.as_ref(),
                &task,
                &pair.chosen,
                &pair.rejected,
                order,
                &mut rng,
                vote as u32,
            )?;
            examples.push(JudgedExample::new(
                pair.query_id.clone(),
                chosen_order,
                Ok(judgment),
            ));
        }
        let decision = genrm_dynamic_filter(&examples);
        tracker.record(decision);
        if decision == FilterDecision::Keep {
            kept_prompts += 1;
        }
        drop_series.push(StepValue {
            step,
            value: tracker.rate(),
        });
        let former = examples
            .iter()
            .filter(|e| e.prefers_former() == Some(true))
            .count();
        ratio_series.push(StepValue {
            step,
            value: former as f64 / examples.len() as f64,
        });
    }

    write_series(&out.join("drop_rate.csv"), &drop_series)?;
    write_series(&out.join("pref_ratio.csv"), &ratio_series)?;
    println!(
        "genrm: kept {kept_prompts}/{} prompts, final drop rate {:.3}",
        tracker.attempted,
        tracker.rate()
    );
    println!("series: {} and {}", out.join("drop_rate.csv").display(), out.join("pref_ratio.csv").display());
    Ok(())
}

fn write_series(path: &PathBuf, rows: &[StepValue]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record(["step", "value"])?;
    }
    writer.flush()?;
    Ok(())
}

fn build_judge(
    cfg: &ExperimentConfig,
    env: &SynthEnv,
) -> anyhow::Result<Box<dyn PairJudge>> {
    match cfg.reward.source {
        RewardSource::Remote => {
            let mut remote_cfg = cfg.judge.remote_config();
            remote_cfg.endpoint = cfg.judge_endpoint();
            if remote_cfg.endpoint.is_empty() {
                bail!("remote judge requires judge.endpoint or BRPOLAB_JUDGE_URL");
            }
            Ok(Box::new(RemoteJudge::new(remote_cfg)))
        }
        _ => Ok(Box::new(SimJudge::new(cfg.judge.sim_spec(), env.clone()))),
    }
}

/// Reconstruct the pair's task from its query id and translate the pipeline
/// order into the judge-level presentation order.
fn pair_presentation(
    cfg: &ExperimentConfig,
    env: &SynthEnv,
    pair: &PreferencePair,
    order: ChosenOrder,
) -> Result<(TaskSpec, PresentationOrder), brpolab_core::judges::JudgeError> {
    let index: u64 = pair
        .query_id
        .strip_prefix('q')
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::TaskGen, index, 0);
    let task = env.make_task(&mut rng, index);
    let presentation = match order {
        ChosenOrder::FirstIsChosen => PresentationOrder::FirstIsA,
        ChosenOrder::FirstIsRejected => PresentationOrder::FirstIsB,
    };
    Ok((task, presentation))
}

/// Synthesize preference pairs: two untrained-policy rollouts per task,
/// chosen by the oracle, rewards from the scalar reward model.
fn generate_pairs(
    cfg: &ExperimentConfig,
    env: &SynthEnv,
    n: usize,
) -> anyhow::Result<Vec<PreferencePair>> {
    let policy = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
    let rm = ScalarRm::new(cfg.scalar_rm, env.clone());
    let mut pairs = Vec::with_capacity(n);
    let pool = cfg.train.task_pool.max(1) as u64;
    for i in 0..n as u64 {
        let task_index = i % pool;
        let mut task_rng =
            RngStream::for_purpose(cfg.seed, StreamPurpose::TaskGen, task_index, 0);
        let task = env.make_task(&mut task_rng, task_index);
        let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Pipeline, 0, i);
        let mut noise = RngStream::for_purpose(cfg.seed, StreamPurpose::ScalarNoise, 0, i);
        // Retry until the two rollouts differ in true quality.
        for _ in 0..100 {
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
            if qa == qb {
                continue;
            }
            let (chosen, rejected) = if qa > qb { (a, b) } else { (b, a) };
            let chosen_reward = rm.reward(&task, &chosen, &mut noise);
            let rejected_reward = rm.reward(&task, &rejected, &mut noise);
            pairs.push(PreferencePair {
                query_id: task.query_id.clone(),
                chosen,
                rejected,
                chosen_reward: Some(chosen_reward),
                rejected_reward: Some(rejected_reward),
            });
            break;
        }
    }
    if pairs.len() < n {
        eprintln!(
            "warning: generated {}/{} pairs (quality ties retried out)",
            pairs.len(),
            n
        );
    }
    Ok(pairs)
}
