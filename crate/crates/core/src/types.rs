//! Shared domain types: rollouts, rollout groups, pair judgments, and
//! preference pairs.
//!
//! All types here are immutable value types, safe to share across threads.
//! They serialize through the line-delimited record format in [`crate::record`];
//! the exact field names are the serde names below.

use serde::{Deserialize, Serialize};

use crate::record::{InvariantError, Record};

/// Token symbol. Valid ids lie in `[0, V)` for the environment's vocabulary
/// size `V`; the id `V` itself is reserved as the BOS padding symbol used in
/// policy contexts and never appears in a rollout.
pub type TokenId = u16;

/// One sampled token sequence together with the behavior-policy
/// log-probability of each sampled token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rollout {
    pub query_id: String,
    pub tokens: Vec<TokenId>,
    /// `log p(token_t | prefix)` under the policy that sampled the rollout,
    /// bookkept at temperature 1 regardless of decoding settings.
    pub behavior_logprobs: Vec<f64>,
    /// Whether the sequence ended with the END token within the length cap.
    pub complete: bool,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Record for Rollout {
    fn validate(&self) -> Result<(), InvariantError> {
        if self.tokens.len() != self.behavior_logprobs.len() {
            return Err(InvariantError::new(format!(
                "rollout has {} tokens but {} logprobs",
                self.tokens.len(),
                self.behavior_logprobs.len()
            )));
        }
        for (t, lp) in self.behavior_logprobs.iter().enumerate() {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(InvariantError::new(format!(
                    "logprob at position {t} is {lp}; log-probabilities must be finite and <= 0"
                )));
            }
        }
        Ok(())
    }
}

/// A group of `G` rollouts sampled for the same query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }
}

impl Record for RolloutGroup {
    fn validate(&self) -> Result<(), InvariantError> {
        if self.rollouts.len() < 2 {
            return Err(InvariantError::new(format!(
                "group size must be >= 2, got {}",
                self.rollouts.len()
            )));
        }
        for r in &self.rollouts {
            if r.query_id != self.query_id {
                return Err(InvariantError::new(format!(
                    "rollout query_id {:?} differs from group query_id {:?}",
                    r.query_id, self.query_id
                )));
            }
            r.validate()?;
        }
        Ok(())
    }
}

/// Which member of a logical response pair `(a, b)` was shown to the judge
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    FirstIsA,
    FirstIsB,
}

impl PresentationOrder {
    pub fn swapped(self) -> Self {
        match self {
            PresentationOrder::FirstIsA => PresentationOrder::FirstIsB,
            PresentationOrder::FirstIsB => PresentationOrder::FirstIsA,
        }
    }
}

/// The score pair extracted from a critique, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractedScores {
    pub s_first: f64,
    pub s_second: f64,
}

impl ExtractedScores {
    pub fn new(s_first: f64, s_second: f64) -> Self {
        Self { s_first, s_second }
    }

    pub fn swapped(self) -> Self {
        Self {
            s_first: self.s_second,
            s_second: self.s_first,
        }
    }
}

/// One judge verdict on an ordered response pair: the generated principles,
/// the critique text terminating in a boxed score pair, and the scores parsed
/// from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairJudgment {
    /// How the logical pair `(a, b)` was presented.
    pub order: PresentationOrder,
    pub principles: Vec<String>,
    pub critique: String,
    /// Scores in presentation order: `scores.s_first` belongs to whichever
    /// response was shown first.
    pub scores: ExtractedScores,
    pub vote_index: u32,
}

impl PairJudgment {
    /// Score of logical response `a`, undoing the presentation order.
    pub fn score_of_a(&self) -> f64 {
        match self.order {
            PresentationOrder::FirstIsA => self.scores.s_first,
            PresentationOrder::FirstIsB => self.scores.s_second,
        }
    }

    /// Score of logical response `b`.
    pub fn score_of_b(&self) -> f64 {
        match self.order {
            PresentationOrder::FirstIsA => self.scores.s_second,
            PresentationOrder::FirstIsB => self.scores.s_first,
        }
    }

    /// Whether the first-presented response got the strictly higher score.
    pub fn prefers_former(&self) -> bool {
        self.scores.s_first > self.scores.s_second
    }
}

impl Record for PairJudgment {
    fn validate(&self) -> Result<(), InvariantError> {
        if !self.scores.s_first.is_finite() || !self.scores.s_second.is_finite() {
            return Err(InvariantError::new(format!(
                "judgment scores must be finite, got ({}, {})",
                self.scores.s_first, self.scores.s_second
            )));
        }
        Ok(())
    }
}

/// A chosen/rejected response pair for one query, optionally carrying scalar
/// rewards assigned by an upstream reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub query_id: String,
    pub chosen: Rollout,
    pub rejected: Rollout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_reward: Option<f64>,
}

impl PreferencePair {
    pub fn reward_gap(&self) -> Option<f64> {
        Some(self.chosen_reward? - self.rejected_reward?)
    }
}

impl Record for PreferencePair {
    fn validate(&self) -> Result<(), InvariantError> {
        self.chosen.validate()?;
        self.rejected.validate()?;
        if self.chosen == self.rejected {
            return Err(InvariantError::new(
                "chosen and rejected responses must differ".to_string(),
            ));
        }
        for (name, r) in [
            ("chosen_reward", self.chosen_reward),
            ("rejected_reward", self.rejected_reward),
        ] {
            if let Some(v) = r {
                if !v.is_finite() {
                    return Err(InvariantError::new(format!("{name} is not finite: {v}")));
                }
            }
        }
        Ok(())
    }
}
