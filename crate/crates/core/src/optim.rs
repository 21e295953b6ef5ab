//! Advantage estimators and group filters.
//!
//! GRPO normalizes scalar group rewards to zero mean and unit (population)
//! standard deviation. BRPO replaces the scalar path entirely: one rollout is
//! bootstrapped as a temporary reference, every other rollout earns +1 only
//! by beating it in all votes, and groups whose preference sums are too
//! skewed are filtered out. DAPO's dynamic-sampling constraint keeps only
//! groups with mixed binary outcomes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::TaskSpec;
use crate::judges::{JudgeError, JudgeFailurePolicy, PairJudge};
use crate::rng::RngStream;
use crate::types::RolloutGroup;

#[derive(Debug, Error)]
pub enum AdvantageError {
    #[error("group too small: need G >= 2, got {0}")]
    GroupTooSmall(usize),
    #[error("judge failed and failure policy is abort: {0}")]
    Judge(#[from] JudgeError),
}

/// Per-rollout advantages, broadcast to every token of the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    values: Vec<f64>,
    /// BRPO's bootstrapped reference, excluded from the loss.
    ref_index: Option<usize>,
    /// Set when the group's filter said to drop it.
    filtered: bool,
}

impl AdvantageSet {
    /// Plain advantage vector with no reference rollout.
    pub fn dense(values: Vec<f64>) -> Self {
        Self {
            values,
            ref_index: None,
            filtered: false,
        }
    }

    /// Preference advantages with an explicit bootstrapped reference.
    pub fn bootstrapped(values: Vec<f64>, ref_index: usize) -> Self {
        assert!(ref_index < values.len());
        assert_eq!(values[ref_index], 0.0, "reference advantage must be 0");
        Self {
            values,
            ref_index: Some(ref_index),
            filtered: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ref_index(&self) -> Option<usize> {
        self.ref_index
    }

    pub fn filtered(&self) -> bool {
        self.filtered
    }

    /// Sum of preference scores over non-reference rollouts.
    pub fn preference_sum(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.ref_index)
            .map(|(_, v)| v)
            .sum()
    }
}

/// GRPO group normalization with population standard deviation. Degenerate
/// groups (std below `eps_std`) get all-zero advantages.
pub fn grpo_advantages(rewards: &[f64], eps_std: f64) -> AdvantageSet {
    assert!(rewards.len() >= 2, "GRPO needs a group of at least 2");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std < eps_std {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    AdvantageSet::dense(values)
}

/// Rule-based verifiable reward: +1 on equivalence, -1 otherwise.
pub fn rule_reward<T: ?Sized>(pred: &T, truth: &T, is_equivalent: impl Fn(&T, &T) -> bool) -> f64 {
    if is_equivalent(pred, truth) {
        1.0
    } else {
        -1.0
    }
}

/// Keep/resample decision for a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeepDecision {
    Keep,
    Resample,
}

/// DAPO dynamic-sampling constraint: keep only groups whose correct count is
/// strictly between 0 and G.
pub fn dapo_keep(correct: &[bool]) -> KeepDecision {
    let hits = correct.iter().filter(|c| **c).count();
    if hits == 0 || hits == correct.len() {
        KeepDecision::Resample
    } else {
        KeepDecision::Keep
    }
}

/// How BRPO treats an `S_i == S_ref` vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// A tie loses the vote (the literal "otherwise" branch).
    Negative,
    /// A tied or inconsistent verdict zeroes the advantage instead.
    Neutral,
}

/// Presentation-order schedule for BRPO votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteOrderMode {
    /// Candidate first on even votes, reference first on odd votes.
    Alternate,
    /// Coin flip per vote from the reference-selection stream.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrpoConfig {
    /// Skew threshold: drop the group when |sum of preference scores| / G
    /// exceeds this.
    pub tau_filter: f64,
    /// Votes per pairwise comparison; +1 requires winning all of them.
    pub n_votes: u32,
    pub tie_mode: TieMode,
    pub order_mode: VoteOrderMode,
    /// Disable to keep every group regardless of skew.
    pub filter_enabled: bool,
    pub failure_policy: JudgeFailurePolicy,
}

impl Default for BrpoConfig {
    fn default() -> Self {
        Self {
            tau_filter: 0.6,
            n_votes: 1,
            tie_mode: TieMode::Negative,
            order_mode: VoteOrderMode::Alternate,
            filter_enabled: true,
            failure_policy: JudgeFailurePolicy::Skip,
        }
    }
}

impl BrpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_filter > 0.0 && self.tau_filter <= 1.0) {
            return Err(format!(
                "brpo.tau_filter must lie in (0, 1], got {}",
                self.tau_filter
            ));
        }
        if self.n_votes < 1 {
            return Err("brpo.n_votes must be >= 1".into());
        }
        Ok(())
    }
}

/// Outcome of BRPO advantage estimation for one group, including the raw
/// judgment tallies used for metrics.
#[derive(Debug, Clone)]
pub struct BrpoOutcome {
    pub advantages: AdvantageSet,
    /// Judgments where the first-presented response scored strictly higher.
    pub former_preferred: usize,
    /// Total judgments issued.
    pub judgments: usize,
    /// Judge failures absorbed under the skip policy.
    pub judge_failures: usize,
}

/// Bootstrapped preference advantages.
///
/// A reference rollout is drawn uniformly from the group using `ref_rng`
/// (its own stream, so toggling judge features never moves the reference).
/// Every other rollout is compared against it `n_votes` times with
/// presentation order per `cfg.order_mode`; it earns +1 only by scoring
/// strictly higher in every vote. The reference itself gets advantage 0 and
/// is excluded from the loss downstream.
pub fn brpo_advantages(
    group: &RolloutGroup,
    task: &TaskSpec,
    judge: &dyn PairJudge,
    ref_rng: &mut RngStream,
    judge_rng: &mut RngStream,
    cfg: &BrpoConfig,
) -> Result<BrpoOutcome, AdvantageError> {
    cfg.validate().expect("valid BRPO config");
    let g = group.rollouts.len();
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g));
    }
    let ref_index = ref_rng.below(g);
    let reference = &group.rollouts[ref_index];

    let mut values = vec![0.0; g];
    let mut former_preferred = 0usize;
    let mut judgments = 0usize;
    let mut judge_failures = 0usize;

    for (i, candidate) in group.rollouts.iter().enumerate() {
        if i == ref_index {
            continue;
        }
        let mut wins = 0u32;
        let mut strict_losses = 0u32;
        let mut failures_here = 0u32;
        for vote in 0..cfg.n_votes {
            let candidate_first = match cfg.order_mode {
                VoteOrderMode::Alternate => vote % 2 == 0,
                VoteOrderMode::Random => judge_rng.below(2) == 0,
            };
            let (first, second) = if candidate_first {
                (candidate, reference)
            } else {
                (reference, candidate)
            };
            match judge.judge(task, first, second, judge_rng, vote) {
                Ok(judgment) => {
                    judgments += 1;
                    if judgment.prefers_former() {
                        former_preferred += 1;
                    }
                    let (s_cand, s_ref) = if candidate_first {
                        (judgment.scores.s_first, judgment.scores.s_second)
                    } else {
                        (judgment.scores.s_second, judgment.scores.s_first)
                    };
                    if s_cand > s_ref {
                        wins += 1;
                    } else if s_cand < s_ref {
                        strict_losses += 1;
                    }
                }
                Err(e) => match cfg.failure_policy {
                    JudgeFailurePolicy::Abort => return Err(AdvantageError::Judge(e)),
                    JudgeFailurePolicy::Skip => {
                        judge_failures += 1;
                        failures_here += 1;
                    }
                },
            }
        }
        values[i] = if wins == cfg.n_votes {
            1.0
        } else if cfg.tie_mode == TieMode::Neutral
            && failures_here == 0
            && strict_losses < cfg.n_votes
        {
            // Tied or inconsistent verdicts neutralize; a candidate that
            // strictly lost every vote stays at -1 even in neutral mode.
            0.0
        } else {
            -1.0
        };
    }

    let mut advantages = AdvantageSet {
        values,
        ref_index: Some(ref_index),
        filtered: false,
    };
    advantages.filtered = cfg.filter_enabled && brpo_filter(&advantages, cfg) == KeepDecision::Resample;

    Ok(BrpoOutcome {
        advantages,
        former_preferred,
        judgments,
        judge_failures,
    })
}

/// Skew filter: drop when `|sum of non-reference preference scores| / G`
/// exceeds `tau_filter`. At G = 16 and tau = 0.6 this drops exactly the
/// groups whose sum is 10 or more in magnitude.
pub fn brpo_filter(advantages: &AdvantageSet, cfg: &BrpoConfig) -> KeepDecision {
    let g = advantages.len() as f64;
    if advantages.preference_sum().abs() / g > cfg.tau_filter {
        KeepDecision::Resample
    } else {
        KeepDecision::Keep
    }
}
