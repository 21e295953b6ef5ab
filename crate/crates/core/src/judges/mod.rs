//! Reward sources: the boxed-score parser, a biased scalar reward-model
//! simulator, a pairwise generative-judge simulator, and an HTTP client for
//! an external judge honoring the same contract.

mod parse;
mod remote;
mod sim;

pub use parse::{extract_scores, ParseScoreError};
pub use remote::{RemoteJudge, RemoteJudgeConfig, RemoteStats, JUDGE_URL_ENV};
pub use sim::{JudgeSpec, ScalarRm, ScalarRmSpec, SimJudge};

use thiserror::Error;

use crate::env::TaskSpec;
use crate::rng::RngStream;
use crate::types::{PairJudgment, PresentationOrder, Rollout};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge request timed out")]
    Timeout,
    #[error("judge returned status {0}")]
    BadStatus(u16),
    #[error("judge critique failed to parse: {0}")]
    ParseFailure(#[from] ParseScoreError),
    #[error("judge transport error: {0}")]
    Transport(String),
}

/// What the trainer does when a judge call fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeFailurePolicy {
    /// Treat the pair as lost / inconsistent and continue.
    Skip,
    /// Abort the run.
    Abort,
}

/// A pairwise judge: scores an ordered response pair for one task.
///
/// `first` is the first-presented response. The returned judgment has
/// `order == FirstIsA` with "a" meaning `first`. Judgments for distinct
/// `vote_index` values are independent.
pub trait PairJudge {
    fn judge(
        &self,
        task: &TaskSpec,
        first: &Rollout,
        second: &Rollout,
        rng: &mut RngStream,
        vote_index: u32,
    ) -> Result<PairJudgment, JudgeError>;
}

/// Judge a logical pair `(a, b)` under an explicit presentation order,
/// relabeling the judgment so `score_of_a`/`score_of_b` map back to the
/// caller's pair.
pub fn judge_with_order(
    judge: &dyn PairJudge,
    task: &TaskSpec,
    a: &Rollout,
    b: &Rollout,
    order: PresentationOrder,
    rng: &mut RngStream,
    vote_index: u32,
) -> Result<PairJudgment, JudgeError> {
    let mut judgment = match order {
        PresentationOrder::FirstIsA => judge.judge(task, a, b, rng, vote_index)?,
        PresentationOrder::FirstIsB => judge.judge(task, b, a, rng, vote_index)?,
    };
    judgment.order = order;
    Ok(judgment)
}

/// Majority vote over `n` independent judgments of the same pair; returns
/// whether `a` wins. Tied tallies (possible for even `n`) count against `a`.
pub fn majority_prefers_a(
    judge: &dyn PairJudge,
    task: &TaskSpec,
    a: &Rollout,
    b: &Rollout,
    n: u32,
    rng: &mut RngStream,
) -> Result<bool, JudgeError> {
    let mut wins = 0u32;
    let mut losses = 0u32;
    for vote in 0..n {
        // Alternate presentation order so position bias cancels across votes.
        let order = if vote % 2 == 0 {
            PresentationOrder::FirstIsA
        } else {
            PresentationOrder::FirstIsB
        };
        let j = judge_with_order(judge, task, a, b, order, rng, vote)?;
        if j.score_of_a() > j.score_of_b() {
            wins += 1;
        } else if j.score_of_a() < j.score_of_b() {
            losses += 1;
        }
    }
    Ok(wins > losses)
}
