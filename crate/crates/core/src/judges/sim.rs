//! Simulated reward sources with controllable biases.
//!
//! The scalar simulator reproduces the failure mode of pointwise reward
//! models: it leaks length and filler ("explanation") preferences on top of
//! true quality. The pairwise judge simulator writes a critique ending in a
//! boxed score pair; its discrimination follows a logistic race on the
//! perceived quality gap, so the probability that the truly better response
//! scores strictly higher is exactly `sigmoid(discrimination * |gap|)` when
//! position bias is off.
//!
//! The perception noise is attached to the unordered pair (canonical token
//! order), not to the presentation: replaying the same rng stream on the
//! swapped presentation yields exactly mirrored scores. Sequential calls use
//! fresh draws, so repeated votes stay independent.

use serde::{Deserialize, Serialize};

use crate::env::{SynthEnv, TaskSpec};
use crate::rng::RngStream;
use crate::types::{ExtractedScores, PairJudgment, PresentationOrder, Rollout};

use super::{JudgeError, PairJudge};

/// Biased scalar reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarRmSpec {
    /// Reward bonus per token of length.
    pub lambda_len: f64,
    /// Reward bonus per filler token.
    pub lambda_filler: f64,
    pub sigma_noise: f64,
    pub scale: f64,
    pub offset: f64,
}

impl Default for ScalarRmSpec {
    fn default() -> Self {
        Self {
            lambda_len: 0.0,
            lambda_filler: 0.0,
            sigma_noise: 0.0,
            scale: 1.0,
            offset: 0.0,
        }
    }
}

/// Scalar reward source bound to an environment.
#[derive(Debug, Clone)]
pub struct ScalarRm {
    spec: ScalarRmSpec,
    env: SynthEnv,
}

impl ScalarRm {
    pub fn new(spec: ScalarRmSpec, env: SynthEnv) -> Self {
        assert!(spec.sigma_noise >= 0.0, "sigma_noise must be >= 0");
        Self { spec, env }
    }

    /// `scale * (quality + lambda_len*length + lambda_filler*filler) + noise + offset`.
    pub fn reward(&self, task: &TaskSpec, rollout: &Rollout, rng: &mut RngStream) -> f64 {
        let report = self.env.oracle_quality(task, rollout);
        let noise = self.spec.sigma_noise * rng.normal();
        self.spec.scale
            * (report.quality
                + self.spec.lambda_len * report.length as f64
                + self.spec.lambda_filler * report.filler_count as f64)
            + noise
            + self.spec.offset
    }
}

/// Pairwise generative-judge simulator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSpec {
    /// Discrimination `beta_j > 0`: P(correct side scores higher) =
    /// `sigmoid(beta_j * |quality gap|)` at zero position bias.
    pub discrimination: f64,
    /// Additive score bonus for the first-presented response.
    pub delta_pos: f64,
    /// Judge-side length bias on perceived quality.
    pub lambda_len: f64,
    /// Scale mapping perceived quality gap to score gap on the 0-10 scale.
    pub score_spread: f64,
    /// Jitter of the pair's shared score level.
    pub sigma_score: f64,
    /// Number of specific principles the critique cites.
    pub num_principles: usize,
}

impl Default for JudgeSpec {
    fn default() -> Self {
        Self {
            discrimination: 4.0,
            delta_pos: 0.0,
            lambda_len: 0.0,
            score_spread: 1.0,
            sigma_score: 0.25,
            num_principles: 3,
        }
    }
}

impl JudgeSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.discrimination > 0.0) {
            return Err(format!(
                "discrimination must be > 0, got {}",
                self.discrimination
            ));
        }
        if !(self.score_spread > 0.0) {
            return Err(format!("score_spread must be > 0, got {}", self.score_spread));
        }
        if self.sigma_score < 0.0 {
            return Err(format!("sigma_score must be >= 0, got {}", self.sigma_score));
        }
        Ok(())
    }
}

const PRINCIPLE_FRAGMENTS: [&str; 6] = [
    "coverage of the task's target phrasing patterns",
    "economy relative to the ideal length",
    "absence of filler and padding",
    "avoidance of repeated constructions",
    "clean termination of the piece",
    "overall balance between content and brevity",
];

/// Pairwise judge simulator bound to an environment.
#[derive(Debug, Clone)]
pub struct SimJudge {
    spec: JudgeSpec,
    env: SynthEnv,
}

impl SimJudge {
    pub fn new(spec: JudgeSpec, env: SynthEnv) -> Self {
        spec.validate().expect("valid judge spec");
        Self { spec, env }
    }

    pub fn spec(&self) -> &JudgeSpec {
        &self.spec
    }

    fn perceived(&self, task: &TaskSpec, rollout: &Rollout) -> f64 {
        let report = self.env.oracle_quality(task, rollout);
        report.quality + self.spec.lambda_len * report.length as f64
    }
}

impl PairJudge for SimJudge {
    fn judge(
        &self,
        task: &TaskSpec,
        first: &Rollout,
        second: &Rollout,
        rng: &mut RngStream,
        vote_index: u32,
    ) -> Result<PairJudgment, JudgeError> {
        let spec = &self.spec;
        // Fixed draw count per call, independent of inputs.
        let eps = rng.logistic(1.0 / spec.discrimination);
        let level_jitter = rng.normal();

        // Perception noise rides on the canonical orientation of the pair so
        // a swapped presentation sees the exact mirrored gap.
        let presented_gap = if first.tokens == second.tokens {
            0.0
        } else {
            let first_is_canonical = first.tokens <= second.tokens;
            let (lo, hi) = if first_is_canonical {
                (first, second)
            } else {
                (second, first)
            };
            let canonical = self.perceived(task, lo) - self.perceived(task, hi) + eps;
            if first_is_canonical {
                canonical
            } else {
                -canonical
            }
        };

        let half_gap = spec.score_spread * presented_gap / 2.0;
        let mid = 5.0 + spec.sigma_score * level_jitter;
        let raw_first = mid + half_gap + spec.delta_pos;
        let raw_second = mid - half_gap;
        let intended = (raw_first - raw_second).partial_cmp(&0.0);

        // Tenths of a point on the clamped 0-10 scale.
        let mut q_first = (raw_first.clamp(0.0, 10.0) * 10.0).round() as i64;
        let mut q_second = (raw_second.clamp(0.0, 10.0) * 10.0).round() as i64;
        // Quantization or clamping may erase an intended strict ordering;
        // restore it by one tenth so the decision stays exactly the race's.
        if q_first == q_second {
            match intended {
                Some(std::cmp::Ordering::Greater) => {
                    if q_first < 100 {
                        q_first += 1;
                    } else {
                        q_second -= 1;
                    }
                }
                Some(std::cmp::Ordering::Less) => {
                    if q_second < 100 {
                        q_second += 1;
                    } else {
                        q_first -= 1;
                    }
                }
                _ => {}
            }
        }
        let s_first = q_first as f64 / 10.0;
        let s_second = q_second as f64 / 10.0;

        let principles: Vec<String> = (0..spec.num_principles)
            .map(|i| PRINCIPLE_FRAGMENTS[i % PRINCIPLE_FRAGMENTS.len()].to_string())
            .collect();
        let comparison = if s_first > s_second {
            "the first response serves the task better"
        } else if s_first < s_second {
            "the second response serves the task better"
        } else {
            "the two responses are of comparable quality"
        };
        let critique = format!(
            "Judged on {} principles ({}), {}. \\boxed{{{:.1}, {:.1}}}",
            principles.len(),
            principles.join("; "),
            comparison,
            s_first,
            s_second
        );

        Ok(PairJudgment {
            order: PresentationOrder::FirstIsA,
            principles,
            critique,
            scores: ExtractedScores::new(s_first, s_second),
            vote_index,
        })
    }
}
