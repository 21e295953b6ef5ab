//! Wave-based RL training loop.
//!
//! Each iteration samples rollout groups for tasks drawn from a fixed pool,
//! scores them through the configured reward source, assembles a batch under
//! the mode's dynamic-sampling filter (over-sampling up to the configured
//! budget), takes one surrogate-ascent step per inner epoch, and appends one
//! metrics row. The behavior snapshot refreshes every wave; the reference
//! policy is frozen at initialization. Runs are bit-reproducible per seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AdvantageMode, ExperimentConfig, RewardSource};
use crate::env::{SynthEnv, TaskSpec};
use crate::judges::{PairJudge, RemoteJudge, ScalarRm, SimJudge};
use crate::optim::{
    brpo_advantages, dapo_keep, grpo_advantages, AdvantageError, AdvantageSet, KeepDecision,
};
use crate::policy::{
    apply_grad, sample_group, sample_rollout, surrogate_grad, GradientTable, PolicyParams,
    SurrogateConfig,
};
use crate::record::{read_records_file, write_records_file, RecordError};
use crate::rng::{RngStream, StreamPurpose};
use crate::types::RolloutGroup;

#[derive(Debug, Error)]
pub enum TrainError {
    /// Dynamic sampling rejected every group in the oversampling budget.
    #[error("batch starvation at iteration {iteration}: drop rate {drop_rate:.3}")]
    BatchStarvation { iteration: usize, drop_rate: f64 },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("metrics io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
}

/// One metrics line per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    /// Oracle quality averaged over every rollout sampled this wave,
    /// including rollouts of dropped groups.
    pub mean_oracle_quality: f64,
    /// Scalar mode: mean reward. BRPO mode: mean preference score over
    /// non-reference rollouts, before filtering.
    pub mean_reward: f64,
    pub mean_length: f64,
    pub mean_filler: f64,
    pub drop_rate: f64,
    pub clip_fraction: f64,
    pub kl_estimate: f64,
    /// Fraction of judgments preferring the first-presented response;
    /// empty outside judge-driven modes.
    pub pref_former_ratio: Option<f64>,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    // Header-only files still need the header line.
    if rows.is_empty() {
        writer.write_record([
            "iteration",
            "mean_oracle_quality",
            "mean_reward",
            "mean_length",
            "mean_filler",
            "drop_rate",
            "clip_fraction",
            "kl_estimate",
            "pref_former_ratio",
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TrainError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Final-window means used by reports and acceptance checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMeans {
    pub rows: usize,
    pub mean_oracle_quality: f64,
    pub mean_length: f64,
    pub mean_filler: f64,
}

pub fn final_window_means(rows: &[MetricsRow], window: usize) -> Option<WindowMeans> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    Some(WindowMeans {
        rows: tail.len(),
        mean_oracle_quality: tail.iter().map(|r| r.mean_oracle_quality).sum::<f64>() / n,
        mean_length: tail.iter().map(|r| r.mean_length).sum::<f64>() / n,
        mean_filler: tail.iter().map(|r| r.mean_filler).sum::<f64>() / n,
    })
}

/// Evaluation report over a task suite (the Eval-RM analog is the oracle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: usize,
    pub rollouts: usize,
    pub mean_quality: f64,
    pub std_quality: f64,
    pub mean_length: f64,
    pub mean_filler: f64,
}

/// Sample `n_samples` rollouts per task at the evaluation decoding settings
/// and score them with the oracle.
pub fn evaluate(
    env: &SynthEnv,
    policy: &PolicyParams,
    tasks: &[TaskSpec],
    n_samples: usize,
    temperature: f64,
    top_p: f64,
    seed: u64,
) -> EvalReport {
    assert!(!tasks.is_empty(), "task suite must be nonempty");
    assert!(n_samples >= 1);
    let mut qualities = Vec::with_capacity(tasks.len() * n_samples);
    let mut lengths = Vec::new();
    let mut fillers = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let mut rng = RngStream::for_purpose(seed, StreamPurpose::Eval, i as u64, 0);
        for _ in 0..n_samples {
            let rollout = sample_rollout(
                policy,
                task,
                env.params().max_len,
                env.params().end_token,
                &mut rng,
                temperature,
                top_p,
            );
            let report = env.oracle_quality(task, &rollout);
            qualities.push(report.quality);
            lengths.push(report.length as f64);
            fillers.push(report.filler_count as f64);
        }
    }
    let n = qualities.len() as f64;
    let mean_quality = qualities.iter().sum::<f64>() / n;
    let var = qualities
        .iter()
        .map(|q| (q - mean_quality).powi(2))
        .sum::<f64>()
        / n;
    EvalReport {
        tasks: tasks.len(),
        rollouts: qualities.len(),
        mean_quality,
        std_quality: var.sqrt(),
        mean_length: lengths.iter().sum::<f64>() / n,
        mean_filler: fillers.iter().sum::<f64>() / n,
    }
}

/// The fixed task pool a run trains and evaluates on.
pub fn task_pool(env: &SynthEnv, seed: u64, size: usize) -> Vec<TaskSpec> {
    (0..size)
        .map(|i| {
            let mut rng = RngStream::for_purpose(seed, StreamPurpose::TaskGen, i as u64, 0);
            env.make_task(&mut rng, i as u64)
        })
        .collect()
}

/// Supervised imitation of oracle-optimal sequences, used as a warm start.
/// Counts context transitions along each task's best sequence and writes
/// `sharpness * count` into the logits.
pub fn imitation_policy(
    env: &SynthEnv,
    tasks: &[TaskSpec],
    context_order: usize,
    sharpness: f64,
) -> PolicyParams {
    let mut policy = PolicyParams::untrained(env.params().vocab_size, context_order);
    let vocab = env.params().vocab_size as usize;
    for task in tasks {
        let (seq, _) = env.best_sequence(task);
        for (t, tok) in seq.iter().enumerate() {
            let ctx = policy.context_at(&seq, t);
            let mut row = policy
                .logits(&ctx)
                .map(|r| r.to_vec())
                .unwrap_or_else(|| vec![0.0; vocab]);
            row[*tok as usize] += sharpness;
            policy.set_logits(ctx, row);
        }
    }
    policy
}

/// Reward machinery resolved from the config.
pub enum RewardEngine {
    Scalar(ScalarRm),
    Judge(Box<dyn PairJudge>),
}

pub fn build_reward_engine(cfg: &ExperimentConfig, env: &SynthEnv) -> Result<RewardEngine, TrainError> {
    match (cfg.advantage.mode, cfg.reward.source) {
        (AdvantageMode::Grpo, RewardSource::Scalar) => Ok(RewardEngine::Scalar(ScalarRm::new(
            cfg.scalar_rm,
            env.clone(),
        ))),
        (AdvantageMode::Brpo, RewardSource::GenrmSim) => Ok(RewardEngine::Judge(Box::new(
            SimJudge::new(cfg.judge.sim_spec(), env.clone()),
        ))),
        (AdvantageMode::Brpo, RewardSource::Remote) => {
            let mut remote_cfg = cfg.judge.remote_config();
            remote_cfg.endpoint = cfg.judge_endpoint();
            if remote_cfg.endpoint.is_empty() {
                return Err(TrainError::Config(
                    "remote reward source requires judge.endpoint or BRPOLAB_JUDGE_URL".into(),
                ));
            }
            Ok(RewardEngine::Judge(Box::new(RemoteJudge::new(remote_cfg))))
        }
        (mode, source) => Err(TrainError::Config(format!(
            "advantage mode {mode:?} does not pair with reward source {source:?}; \
             grpo takes scalar, brpo takes genrm_sim or remote"
        ))),
    }
}

/// One kept group ready for a gradient step.
pub struct PreparedGroup {
    pub group: RolloutGroup,
    pub advantages: AdvantageSet,
}

/// Wave-level statistics from batch assembly.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaveStats {
    pub attempted: usize,
    pub kept: usize,
    pub mean_oracle_quality: f64,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub mean_filler: f64,
    pub former_ratio: Option<f64>,
}

impl WaveStats {
    pub fn drop_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            (self.attempted - self.kept) as f64 / self.attempted as f64
        }
    }
}

/// Draw tasks, sample groups, compute advantages, and apply the mode's
/// filter, oversampling until `batch_groups` groups are kept or the budget
/// runs out. Returns fewer groups on a shortfall; zero kept groups is a
/// starvation error carrying the observed drop rate.
#[allow(clippy::too_many_arguments)]
pub fn assemble_batch(
    cfg: &ExperimentConfig,
    env: &SynthEnv,
    tasks: &[TaskSpec],
    policy: &PolicyParams,
    engine: &RewardEngine,
    iteration: usize,
    stats: &mut WaveStats,
) -> Result<Vec<PreparedGroup>, TrainError> {
    let budget = (cfg.train.oversample_factor * cfg.train.batch_groups as f64).ceil() as usize;
    let mut kept: Vec<PreparedGroup> = Vec::with_capacity(cfg.train.batch_groups);
    let mut attempt = 0usize;

    let mut quality_sum = 0.0;
    let mut length_sum = 0.0;
    let mut filler_sum = 0.0;
    let mut rollouts_seen = 0usize;
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    let mut former = 0usize;
    let mut judgments = 0usize;

    while kept.len() < cfg.train.batch_groups && attempt < budget {
        let it = iteration as u64;
        let at = attempt as u64;
        let mut pick_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::TaskPick, it, at);
        let task = &tasks[pick_rng.below(tasks.len())];
        let mut rollout_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Rollout, it, at);
        let group = sample_group(
            policy,
            task,
            cfg.train.group_size,
            env.params().max_len,
            env.params().end_token,
            &mut rollout_rng,
            cfg.policy.temperature,
            cfg.policy.top_p,
        );
        for r in &group.rollouts {
            let report = env.oracle_quality(task, r);
            quality_sum += report.quality;
            length_sum += report.length as f64;
            filler_sum += report.filler_count as f64;
            rollouts_seen += 1;
        }

        let (advantages, keep) = match engine {
            RewardEngine::Scalar(rm) => {
                let mut noise_rng =
                    RngStream::for_purpose(cfg.seed, StreamPurpose::ScalarNoise, it, at);
                let rewards: Vec<f64> = group
                    .rollouts
                    .iter()
                    .map(|r| rm.reward(task, r, &mut noise_rng))
                    .collect();
                reward_sum += rewards.iter().sum::<f64>();
                reward_count += rewards.len();
                let keep = if cfg.dapo.enabled {
                    let correct: Vec<bool> = rewards
                        .iter()
                        .map(|r| *r > cfg.dapo.correct_threshold)
                        .collect();
                    dapo_keep(&correct) == KeepDecision::Keep
                } else {
                    true
                };
                (grpo_advantages(&rewards, cfg.grpo.eps_std), keep)
            }
            RewardEngine::Judge(judge) => {
                let mut ref_rng =
                    RngStream::for_purpose(cfg.seed, StreamPurpose::RefSelect, it, at);
                let mut judge_rng =
                    RngStream::for_purpose(cfg.seed, StreamPurpose::JudgeNoise, it, at);
                let outcome = brpo_advantages(
                    &group,
                    task,
                    judge.as_ref(),
                    &mut ref_rng,
                    &mut judge_rng,
                    &cfg.brpo,
                )?;
                former += outcome.former_preferred;
                judgments += outcome.judgments;
                reward_sum += outcome.advantages.preference_sum();
                reward_count += outcome.advantages.len() - 1;
                let keep = !outcome.advantages.filtered();
                (outcome.advantages, keep)
            }
        };

        if keep {
            kept.push(PreparedGroup { group, advantages });
        }
        attempt += 1;
    }

    stats.attempted = attempt;
    stats.kept = kept.len();
    if rollouts_seen > 0 {
        stats.mean_oracle_quality = quality_sum / rollouts_seen as f64;
        stats.mean_length = length_sum / rollouts_seen as f64;
        stats.mean_filler = filler_sum / rollouts_seen as f64;
    }
    if reward_count > 0 {
        stats.mean_reward = reward_sum / reward_count as f64;
    }
    stats.former_ratio = if judgments > 0 {
        Some(former as f64 / judgments as f64)
    } else {
        None
    };

    if kept.is_empty() {
        return Err(TrainError::BatchStarvation {
            iteration,
            drop_rate: stats.drop_rate(),
        });
    }
    Ok(kept)
}

/// Output paths of a training run.
#[derive(Debug, Clone)]
pub struct TrainPaths {
    pub metrics: PathBuf,
    pub eval: PathBuf,
    pub checkpoint: PathBuf,
}

impl TrainPaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            eval: dir.join("eval.csv"),
            checkpoint: dir.join("checkpoint.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub mean_quality: f64,
    pub std_quality: f64,
    pub mean_length: f64,
    pub mean_filler: f64,
}

/// Result of a training run.
pub struct TrainSummary {
    pub iterations_run: usize,
    pub metrics: Vec<MetricsRow>,
    pub eval_rows: Vec<EvalRow>,
    pub policy: PolicyParams,
    pub final_eval: EvalReport,
    pub tasks: Vec<TaskSpec>,
}

/// Run the full training loop. `initial` defaults to the untrained policy
/// (all-zero logits); outputs are written when `paths` is given.
pub fn train(
    cfg: &ExperimentConfig,
    initial: Option<PolicyParams>,
    paths: Option<&TrainPaths>,
) -> Result<TrainSummary, TrainError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let env = SynthEnv::new(cfg.env.clone()).map_err(|e| TrainError::Config(e.to_string()))?;
    let tasks = task_pool(&env, cfg.seed, cfg.train.task_pool);
    let engine = build_reward_engine(cfg, &env)?;

    let mut policy = initial
        .unwrap_or_else(|| PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order));
    if policy.context_order() != cfg.policy.context_order
        || policy.vocab_size() != cfg.env.vocab_size
    {
        return Err(TrainError::Config(format!(
            "initial policy shape (V={}, c={}) does not match config (V={}, c={})",
            policy.vocab_size(),
            policy.context_order(),
            cfg.env.vocab_size,
            cfg.policy.context_order
        )));
    }
    let reference = policy.clone();
    let surrogate_cfg = SurrogateConfig {
        eps_low: cfg.policy.eps_low,
        eps_high: cfg.policy.eps_high,
        beta: cfg.policy.beta,
        agg: cfg.policy.agg_mode,
    };

    let mut metrics: Vec<MetricsRow> = Vec::with_capacity(cfg.train.max_iterations);
    let mut eval_rows: Vec<EvalRow> = Vec::new();

    for iteration in 0..cfg.train.max_iterations {
        let behavior = policy.clone();
        let mut stats = WaveStats::default();
        let batch = assemble_batch(cfg, &env, &tasks, &behavior, &engine, iteration, &mut stats)?;
        if batch.len() < cfg.train.batch_groups {
            eprintln!(
                "iteration {iteration}: batch shortfall, {} of {} groups kept (drop rate {:.3})",
                batch.len(),
                cfg.train.batch_groups,
                stats.drop_rate()
            );
        }

        let mut clip_sum = 0.0;
        let mut kl_sum = 0.0;
        for _epoch in 0..cfg.train.inner_epochs {
            let mut grad = GradientTable::default();
            let mut batch_clip = 0.0;
            let mut batch_kl = 0.0;
            for prepared in &batch {
                let (g, s) = surrogate_grad(
                    &policy,
                    &prepared.group,
                    &prepared.advantages,
                    &behavior,
                    &reference,
                    &surrogate_cfg,
                )
                .map_err(|e| TrainError::Numeric {
                    iteration,
                    detail: e.to_string(),
                })?;
                if !s.objective.is_finite() {
                    return Err(TrainError::Numeric {
                        iteration,
                        detail: format!("objective = {}", s.objective),
                    });
                }
                grad = grad.merged(&g);
                batch_clip += s.clip_fraction;
                batch_kl += s.kl_estimate;
            }
            let scale = cfg.policy.learning_rate / batch.len() as f64;
            policy = apply_grad(policy, &grad, scale).map_err(|e| TrainError::Numeric {
                iteration,
                detail: e.to_string(),
            })?;
            clip_sum = batch_clip / batch.len() as f64;
            kl_sum = batch_kl / batch.len() as f64;
        }

        metrics.push(MetricsRow {
            iteration,
            mean_oracle_quality: stats.mean_oracle_quality,
            mean_reward: stats.mean_reward,
            mean_length: stats.mean_length,
            mean_filler: stats.mean_filler,
            drop_rate: stats.drop_rate(),
            clip_fraction: clip_sum,
            kl_estimate: kl_sum,
            pref_former_ratio: stats.former_ratio,
        });

        if cfg.train.eval_every > 0 && (iteration + 1) % cfg.train.eval_every == 0 {
            let report = evaluate(
                &env,
                &policy,
                &tasks,
                cfg.eval.n_samples,
                cfg.eval.temperature,
                cfg.eval.top_p,
                cfg.seed,
            );
            eval_rows.push(EvalRow {
                iteration,
                mean_quality: report.mean_quality,
                std_quality: report.std_quality,
                mean_length: report.mean_length,
                mean_filler: report.mean_filler,
            });
        }
    }

    let final_eval = evaluate(
        &env,
        &policy,
        &tasks,
        cfg.eval.n_samples,
        cfg.eval.temperature,
        cfg.eval.top_p,
        cfg.seed,
    );

    if let Some(paths) = paths {
        write_metrics(&paths.metrics, &metrics)?;
        write_eval_rows(&paths.eval, &eval_rows)?;
        write_records_file(&paths.checkpoint, [&policy])?;
    }

    Ok(TrainSummary {
        iterations_run: cfg.train.max_iterations,
        metrics,
        eval_rows,
        policy,
        final_eval,
        tasks,
    })
}

pub fn write_eval_rows(path: &Path, rows: &[EvalRow]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record([
            "iteration",
            "mean_quality",
            "std_quality",
            "mean_length",
            "mean_filler",
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, TrainError> {
    let mut policies: Vec<PolicyParams> = read_records_file(path)?;
    policies
        .pop()
        .ok_or_else(|| TrainError::Config(format!("checkpoint {} is empty", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 7;
        cfg.train.max_iterations = 3;
        cfg.train.batch_groups = 2;
        cfg.train.group_size = 4;
        cfg.train.eval_every = 0;
        cfg.train.task_pool = 1;
        cfg.eval.n_samples = 4;
        cfg
    }

    #[test]
    fn zero_iterations_returns_initial_policy() {
        let mut cfg = small_config();
        cfg.train.max_iterations = 0;
        let summary = train(&cfg, None, None).unwrap();
        assert_eq!(
            summary.policy,
            PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order)
        );
        assert!(summary.metrics.is_empty());
    }

    #[test]
    fn same_seed_same_metrics() {
        let cfg = small_config();
        let a = train(&cfg, None, None).unwrap();
        let b = train(&cfg, None, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn metrics_files_byte_identical_across_runs() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let p1 = TrainPaths::under(&dir.path().join("a"));
        let p2 = TrainPaths::under(&dir.path().join("b"));
        std::fs::create_dir_all(dir.path().join("a")).unwrap();
        std::fs::create_dir_all(dir.path().join("b")).unwrap();
        train(&cfg, None, Some(&p1)).unwrap();
        train(&cfg, None, Some(&p2)).unwrap();
        let a = std::fs::read(&p1.metrics).unwrap();
        let b = std::fs::read(&p2.metrics).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        let ca = std::fs::read(&p1.checkpoint).unwrap();
        let cb = std::fs::read(&p2.checkpoint).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn first_step_after_snapshot_never_clips() {
        let mut cfg = small_config();
        cfg.train.max_iterations = 2;
        let summary = train(&cfg, None, None).unwrap();
        for row in &summary.metrics {
            assert_eq!(row.clip_fraction, 0.0, "iteration {}", row.iteration);
        }
    }

    #[test]
    fn filter_off_visits_exactly_batch_groups() {
        let mut cfg = small_config();
        cfg.advantage.mode = AdvantageMode::Grpo;
        cfg.reward.source = RewardSource::Scalar;
        let summary = train(&cfg, None, None).unwrap();
        for row in &summary.metrics {
            assert_eq!(row.drop_rate, 0.0);
        }
    }

    #[test]
    fn degenerate_judge_starves_batch() {
        let mut cfg = small_config();
        // A judge that always prefers the second-presented response prefers
        // the reference on every single vote (n_votes = 1 presents the
        // candidate first), so every group is maximally skewed and dropped.
        cfg.judge.delta_pos = -50.0;
        cfg.judge.sigma_score = 0.0;
        match train(&cfg, None, None) {
            Err(TrainError::BatchStarvation { drop_rate, .. }) => {
                assert_eq!(drop_rate, 1.0);
            }
            other => panic!("expected starvation, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn tau_one_matches_filter_disabled_batches() {
        let mut cfg_tau = small_config();
        cfg_tau.brpo.tau_filter = 1.0;
        let mut cfg_off = small_config();
        cfg_off.brpo.filter_enabled = false;
        let a = train(&cfg_tau, None, None).unwrap();
        let b = train(&cfg_off, None, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn mismatched_initial_policy_rejected() {
        let cfg = small_config();
        let wrong = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order + 1);
        assert!(matches!(
            train(&cfg, Some(wrong), None),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn filtered_groups_never_reach_the_gradient() {
        // Dynamic-sampling soundness: whatever comes back from batch
        // assembly is unfiltered by construction.
        let mut cfg = small_config();
        // At G = 4 the non-reference sum is odd (1 or 3); tau = 0.5 drops
        // exactly the all-agree groups.
        cfg.brpo.tau_filter = 0.5;
        cfg.train.batch_groups = 8;
        let env = SynthEnv::new(cfg.env.clone()).unwrap();
        let tasks = task_pool(&env, cfg.seed, cfg.train.task_pool);
        let engine = build_reward_engine(&cfg, &env).unwrap();
        let policy = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
        let mut stats = WaveStats::default();
        let batch =
            assemble_batch(&cfg, &env, &tasks, &policy, &engine, 0, &mut stats).unwrap();
        assert!(stats.attempted > stats.kept, "filter should have fired");
        for prepared in &batch {
            assert!(!prepared.advantages.filtered());
        }
    }

    #[test]
    fn metrics_round_trip_through_csv() {
        let cfg = small_config();
        let summary = train(&cfg, None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics(&path, &summary.metrics).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, summary.metrics);
    }

    #[test]
    fn eval_deterministic_and_optimal_policy_hits_optimum() {
        let cfg = small_config();
        let env = SynthEnv::new(cfg.env.clone()).unwrap();
        let tasks = task_pool(&env, cfg.seed, 1);
        let untrained = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
        let a = evaluate(&env, &untrained, &tasks, 16, 1.0, 1.0, 3);
        let b = evaluate(&env, &untrained, &tasks, 16, 1.0, 1.0, 3);
        assert_eq!(a, b);

        // A policy hard-wired to the optimal sequence reproduces the oracle
        // optimum. Full-prefix contexts make every step of the sequence its
        // own table row, so the sharp table emits it verbatim.
        let (seq, best_quality) = env.best_sequence(&tasks[0]);
        let sharp = imitation_policy(&env, &tasks, env.params().max_len, 200.0);
        let report = evaluate(&env, &sharp, &tasks, 8, 1.0, 1.0, 3);
        assert!(
            (report.mean_quality - best_quality).abs() < 1e-9,
            "imitation policy reached {} vs optimum {best_quality} (seq {seq:?})",
            report.mean_quality
        );
    }

    #[test]
    fn eval_mc_error_shrinks_with_samples() {
        let cfg = small_config();
        let env = SynthEnv::new(cfg.env.clone()).unwrap();
        let tasks = task_pool(&env, cfg.seed, 1);
        let untrained = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
        let big = evaluate(&env, &untrained, &tasks, 2000, 1.0, 1.0, 11);
        let small_est: Vec<f64> = (0..8)
            .map(|s| evaluate(&env, &untrained, &tasks, 1, 1.0, 1.0, 100 + s).mean_quality)
            .collect();
        let large_est: Vec<f64> = (0..8)
            .map(|s| evaluate(&env, &untrained, &tasks, 100, 1.0, 1.0, 100 + s).mean_quality)
            .collect();
        let err = |xs: &[f64]| {
            xs.iter()
                .map(|x| (x - big.mean_quality).abs())
                .sum::<f64>()
                / xs.len() as f64
        };
        assert!(
            err(&large_est) < err(&small_est),
            "more samples should track the asymptote better"
        );
    }

    #[test]
    fn imitation_policy_counts_transitions() {
        let cfg = small_config();
        let env = SynthEnv::new(cfg.env.clone()).unwrap();
        let tasks = task_pool(&env, cfg.seed, 1);
        let policy = imitation_policy(&env, &tasks, 2, 2.0);
        assert!(policy.num_contexts() > 0);
    }
}

#[cfg(test)]
mod experiments {
    use super::*;
    use crate::config::{AdvantageMode, ExperimentConfig, RewardSource};

    fn arm_a_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.advantage.mode = AdvantageMode::Grpo;
        cfg.reward.source = RewardSource::Scalar;
        cfg.scalar_rm.lambda_len = 0.2;
        cfg.scalar_rm.lambda_filler = 0.2;
        cfg
    }

    fn arm_b_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg
    }

    /// Slow robustness probe for the hacking-separation experiment beyond
    /// the three seeds the acceptance suite pins.
    #[test]
    #[ignore]
    fn hacking_separation_probe() {
        let mut ok = 0;
        for seed in 1u64..=10 {
            let a = train(&arm_a_config(seed), None, None).unwrap();
            let b = train(&arm_b_config(seed), None, None).unwrap();
            let wa = final_window_means(&a.metrics, 10).unwrap();
            let wb = final_window_means(&b.metrics, 10).unwrap();

            let cfgb = arm_b_config(seed);
            let env = SynthEnv::new(cfgb.env.clone()).unwrap();
            let untrained = evaluate(
                &env,
                &PolicyParams::untrained(cfgb.env.vocab_size, cfgb.policy.context_order),
                &b.tasks,
                cfgb.eval.n_samples,
                1.0,
                1.0,
                cfgb.seed,
            );
            let optimum: f64 = b.tasks.iter().map(|t| env.best_sequence(t).1).sum::<f64>()
                / b.tasks.len() as f64;
            let gain = b.final_eval.mean_quality - untrained.mean_quality;
            let gap = optimum - untrained.mean_quality;

            let pass = wa.mean_length >= 1.5 * wb.mean_length
                && wa.mean_filler > 5.0 * wb.mean_filler
                && wb.mean_oracle_quality > wa.mean_oracle_quality
                && gain >= 0.5 * gap;
            println!(
                "seed {seed}: len {:.1}/{:.1} filler {:.2}/{:.2} qual {:.2}/{:.2} learn {:.0}% -> {}",
                wa.mean_length,
                wb.mean_length,
                wa.mean_filler,
                wb.mean_filler,
                wa.mean_oracle_quality,
                wb.mean_oracle_quality,
                100.0 * gain / gap,
                if pass { "pass" } else { "FAIL" }
            );
            if pass {
                ok += 1;
            }
        }
        assert!(ok >= 9, "separation held on only {ok}/10 seeds");
    }
}
