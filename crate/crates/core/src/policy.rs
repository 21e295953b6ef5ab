//! Tabular autoregressive softmax policy.
//!
//! The policy conditions on the last `context_order` tokens (BOS-padded at
//! the start of a sequence) and maps each context to a logit vector over the
//! vocabulary. The table is sparse with a zero default, so an untrained
//! policy is uniform. Log-probabilities are exact and the clipped-surrogate
//! gradient is computed analytically, which is what lets the finite-difference
//! check pin the whole objective down to 1e-5 relative error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::TaskSpec;
use crate::optim::AdvantageSet;
use crate::record::{InvariantError, Record};
use crate::rng::RngStream;
use crate::types::{Rollout, RolloutGroup, TokenId};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient for context {context:?}")]
    NonFiniteGradient { context: Vec<TokenId> },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// How per-token surrogate terms are aggregated into the scalar objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMode {
    /// `1/G * sum_i 1/|o_i| * sum_t`: every sequence weighs the same.
    SequenceMean,
    /// `1/sum|o_i| * sum_i sum_t`: every token weighs the same.
    TokenMean,
}

/// Clipping, KL, and aggregation knobs for the surrogate objective.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub agg: AggMode,
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.eps_low > 0.0 && self.eps_high > 0.0) {
            return Err(PolicyError::Invalid(format!(
                "clip ranges must be positive, got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            )));
        }
        if self.beta < 0.0 {
            return Err(PolicyError::Invalid(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Diagnostic view of one surrogate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStats {
    pub objective: f64,
    pub mean_ratio: f64,
    /// Fraction of tokens whose ratio term was clipped and dominated, i.e.
    /// contributed zero gradient through the ratio path.
    pub clip_fraction: f64,
    /// Mean of the nonnegative KL estimator `u - ln(u) - 1`, `u = pi_ref/pi`.
    pub kl_estimate: f64,
}

/// Accumulated gradient, same sparse shape as the policy table.
#[derive(Debug, Clone, Default)]
pub struct GradientTable {
    entries: BTreeMap<Vec<TokenId>, Vec<f64>>,
}

impl GradientTable {
    pub fn entries(&self) -> impl Iterator<Item = (&Vec<TokenId>, &Vec<f64>)> {
        self.entries.iter()
    }

    pub fn get(&self, context: &[TokenId]) -> Option<&Vec<f64>> {
        self.entries.get(context)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn row(&mut self, context: &[TokenId], vocab: usize) -> &mut Vec<f64> {
        self.entries
            .entry(context.to_vec())
            .or_insert_with(|| vec![0.0; vocab])
    }

    /// Entrywise sum of two gradients.
    pub fn merged(mut self, other: &GradientTable) -> GradientTable {
        for (ctx, row) in &other.entries {
            let dst = self
                .entries
                .entry(ctx.clone())
                .or_insert_with(|| vec![0.0; row.len()]);
            for (d, s) in dst.iter_mut().zip(row) {
                *d += s;
            }
        }
        self
    }
}

/// Context-conditional logit table defining the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "PolicyParamsRepr",
    into = "PolicyParamsRepr"
)]
pub struct PolicyParams {
    vocab_size: u16,
    context_order: usize,
    table: BTreeMap<Vec<TokenId>, Vec<f64>>,
}

/// Serialized layout: sorted `(context, logits)` rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyParamsRepr {
    vocab_size: u16,
    context_order: usize,
    rows: Vec<PolicyRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRow {
    context: Vec<TokenId>,
    logits: Vec<f64>,
}

impl From<PolicyParams> for PolicyParamsRepr {
    fn from(p: PolicyParams) -> Self {
        PolicyParamsRepr {
            vocab_size: p.vocab_size,
            context_order: p.context_order,
            rows: p
                .table
                .into_iter()
                .map(|(context, logits)| PolicyRow { context, logits })
                .collect(),
        }
    }
}

impl TryFrom<PolicyParamsRepr> for PolicyParams {
    type Error = String;

    fn try_from(r: PolicyParamsRepr) -> Result<Self, String> {
        let mut table = BTreeMap::new();
        for row in r.rows {
            if row.logits.len() != r.vocab_size as usize {
                return Err(format!(
                    "logit row for context {:?} has {} entries, expected {}",
                    row.context,
                    row.logits.len(),
                    r.vocab_size
                ));
            }
            if table.insert(row.context.clone(), row.logits).is_some() {
                return Err(format!("duplicate context {:?}", row.context));
            }
        }
        Ok(PolicyParams {
            vocab_size: r.vocab_size,
            context_order: r.context_order,
            table,
        })
    }
}

impl Record for PolicyParams {
    fn validate(&self) -> Result<(), InvariantError> {
        if self.context_order == 0 {
            return Err(InvariantError::new("context_order must be >= 1".into()));
        }
        for (ctx, logits) in &self.table {
            if ctx.len() != self.context_order {
                return Err(InvariantError::new(format!(
                    "context {ctx:?} length differs from context_order {}",
                    self.context_order
                )));
            }
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(InvariantError::new(format!(
                    "non-finite logit for context {ctx:?}"
                )));
            }
        }
        Ok(())
    }
}

impl PolicyParams {
    /// Fresh policy with all-zero logits (uniform next-token distribution).
    pub fn untrained(vocab_size: u16, context_order: usize) -> Self {
        assert!(context_order >= 1, "context_order must be >= 1");
        Self {
            vocab_size,
            context_order,
            table: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> u16 {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    /// The reserved BOS padding symbol (one past the vocabulary).
    pub fn bos(&self) -> TokenId {
        self.vocab_size
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    pub fn logits(&self, context: &[TokenId]) -> Option<&[f64]> {
        self.table.get(context).map(|v| v.as_slice())
    }

    pub fn set_logits(&mut self, context: Vec<TokenId>, logits: Vec<f64>) {
        assert_eq!(context.len(), self.context_order);
        assert_eq!(logits.len(), self.vocab_size as usize);
        self.table.insert(context, logits);
    }

    /// Context window for position `t` of a token sequence, BOS-padded.
    pub fn context_at(&self, tokens: &[TokenId], t: usize) -> Vec<TokenId> {
        let c = self.context_order;
        let mut ctx = Vec::with_capacity(c);
        for back in (1..=c).rev() {
            if t >= back {
                ctx.push(tokens[t - back]);
            } else {
                ctx.push(self.bos());
            }
        }
        ctx
    }

    /// Exact softmax probabilities for a context at the given temperature.
    pub fn probs(&self, context: &[TokenId], temperature: f64) -> Vec<f64> {
        let v = self.vocab_size as usize;
        let zeros;
        let logits = match self.table.get(context) {
            Some(row) => row.as_slice(),
            None => {
                zeros = vec![0.0; v];
                zeros.as_slice()
            }
        };
        softmax_scaled(logits, temperature)
    }

    /// Exact log-probability vector over the vocabulary at temperature 1.
    fn log_probs(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size as usize;
        let zeros;
        let logits = match self.table.get(context) {
            Some(row) => row.as_slice(),
            None => {
                zeros = vec![0.0; v];
                zeros.as_slice()
            }
        };
        let lse = log_sum_exp(logits);
        logits.iter().map(|l| l - lse).collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0);
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|l| (l - lse).exp()).collect()
}

/// Sample a group of `g` rollouts for one task.
///
/// Decoding follows (temperature, top_p), while `behavior_logprobs` always
/// record the exact temperature-1 log-probabilities of the sampled tokens.
/// Sampling stops at END or at the environment length cap.
pub fn sample_group(
    params: &PolicyParams,
    task: &TaskSpec,
    g: usize,
    max_len: usize,
    end_token: TokenId,
    rng: &mut RngStream,
    temperature: f64,
    top_p: f64,
) -> RolloutGroup {
    assert!(g >= 2, "group size must be >= 2");
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(top_p > 0.0 && top_p <= 1.0, "top_p must lie in (0, 1]");

    let rollouts = (0..g)
        .map(|_| sample_rollout(params, task, max_len, end_token, rng, temperature, top_p))
        .collect();
    RolloutGroup {
        query_id: task.query_id.clone(),
        rollouts,
    }
}

/// Sample a single rollout.
pub fn sample_rollout(
    params: &PolicyParams,
    task: &TaskSpec,
    max_len: usize,
    end_token: TokenId,
    rng: &mut RngStream,
    temperature: f64,
    top_p: f64,
) -> Rollout {
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut logprobs: Vec<f64> = Vec::new();
    let mut complete = false;
    while tokens.len() < max_len {
        let ctx = params.context_at(&tokens, tokens.len());
        let probs = params.probs(&ctx, temperature);
        let tok = sample_token(&probs, top_p, rng);
        let lp = params.log_probs(&ctx)[tok as usize];
        tokens.push(tok);
        logprobs.push(lp);
        if tok == end_token {
            complete = true;
            break;
        }
    }
    Rollout {
        query_id: task.query_id.clone(),
        tokens,
        behavior_logprobs: logprobs,
        complete,
    }
}

/// Nucleus sampling from a probability vector. Candidates are ranked by
/// probability (token id breaks ties) and the smallest prefix reaching
/// `top_p` is kept and renormalized.
fn sample_token(probs: &[f64], top_p: f64, rng: &mut RngStream) -> TokenId {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    if top_p < 1.0 {
        order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .expect("probabilities are finite")
                .then(a.cmp(&b))
        });
    }
    let mut kept = probs.len();
    if top_p < 1.0 {
        let mut cum = 0.0;
        for (rank, &idx) in order.iter().enumerate() {
            cum += probs[idx];
            if cum >= top_p {
                kept = rank + 1;
                break;
            }
        }
    }
    let nucleus = &order[..kept];
    let mass: f64 = nucleus.iter().map(|&i| probs[i]).sum();
    let mut u = rng.uniform() * mass;
    // Walk in ascending token id for a platform-stable draw.
    let mut ids: Vec<usize> = nucleus.to_vec();
    ids.sort_unstable();
    for &i in &ids {
        u -= probs[i];
        if u < 0.0 {
            return i as TokenId;
        }
    }
    *ids.last().expect("nucleus is nonempty") as TokenId
}

/// Exact per-token log-probabilities of an existing rollout under `params`.
pub fn logprob(params: &PolicyParams, rollout: &Rollout) -> Vec<f64> {
    let mut out = Vec::with_capacity(rollout.tokens.len());
    for (t, tok) in rollout.tokens.iter().enumerate() {
        let ctx = params.context_at(&rollout.tokens, t);
        out.push(params.log_probs(&ctx)[*tok as usize]);
    }
    out
}

/// Analytic gradient of the clipped surrogate objective with KL penalty.
///
/// Objective per token:
/// `min(r*A, clip(r, 1-eps_low, 1+eps_high)*A) - beta * k3(pi_ref/pi)` with
/// `k3(u) = u - ln(u) - 1`, aggregated per `cfg.agg`. Tokens whose clipped
/// term is active and dominated contribute no gradient through the ratio.
/// The rollout at `advantages.ref_index` (BRPO's bootstrapped reference) is
/// excluded from the objective entirely.
pub fn surrogate_grad(
    params: &PolicyParams,
    group: &RolloutGroup,
    advantages: &AdvantageSet,
    behavior: &PolicyParams,
    reference: &PolicyParams,
    cfg: &SurrogateConfig,
) -> Result<(GradientTable, SurrogateStats), PolicyError> {
    cfg.validate()?;
    let g = group.rollouts.len();
    if advantages.len() != g {
        return Err(PolicyError::Shape(format!(
            "{} advantages for a group of {g}",
            advantages.len()
        )));
    }

    let included: Vec<usize> = (0..g).filter(|i| Some(*i) != advantages.ref_index()).collect();
    let total_tokens: usize = included
        .iter()
        .map(|&i| group.rollouts[i].tokens.len())
        .sum();

    let mut grad = GradientTable::default();
    let mut objective = 0.0;
    let mut sum_ratio = 0.0;
    let mut clipped = 0usize;
    let mut sum_k3 = 0.0;
    let mut counted = 0usize;
    let vocab = params.vocab_size as usize;

    for &i in &included {
        let rollout = &group.rollouts[i];
        if rollout.tokens.is_empty() {
            continue;
        }
        let adv = advantages.values()[i];
        let weight = match cfg.agg {
            AggMode::SequenceMean => 1.0 / (included.len() as f64 * rollout.tokens.len() as f64),
            AggMode::TokenMean => 1.0 / total_tokens.max(1) as f64,
        };
        for (t, tok) in rollout.tokens.iter().enumerate() {
            let ctx = params.context_at(&rollout.tokens, t);
            let probs = params.probs(&ctx, 1.0);
            let lp = probs[*tok as usize].ln();
            let lp_old = behavior.log_probs(&ctx)[*tok as usize];
            let lp_ref = reference.log_probs(&ctx)[*tok as usize];

            let ratio = (lp - lp_old).exp();
            let u = (lp_ref - lp).exp();
            let k3 = u - u.ln() - 1.0;

            let unclipped = ratio * adv;
            let clipped_ratio = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
            let term = unclipped.min(clipped_ratio * adv);

            // Gradient through the ratio path is live iff the unclipped term
            // attains the min.
            let ratio_live = unclipped <= clipped_ratio * adv;
            if !ratio_live {
                clipped += 1;
            }

            objective += weight * (term - cfg.beta * k3);
            sum_ratio += ratio;
            sum_k3 += k3;
            counted += 1;

            let coeff = if ratio_live { adv * ratio } else { 0.0 } + cfg.beta * (u - 1.0);
            if coeff != 0.0 {
                let row = grad.row(&ctx, vocab);
                let scaled = weight * coeff;
                for (v, p) in probs.iter().enumerate() {
                    row[v] -= scaled * p;
                }
                row[*tok as usize] += scaled;
            }
        }
    }

    let stats = SurrogateStats {
        objective,
        mean_ratio: if counted > 0 {
            sum_ratio / counted as f64
        } else {
            0.0
        },
        clip_fraction: if counted > 0 {
            clipped as f64 / counted as f64
        } else {
            0.0
        },
        kl_estimate: if counted > 0 {
            sum_k3 / counted as f64
        } else {
            0.0
        },
    };
    Ok((grad, stats))
}

/// Scalar value of the same objective; used by callers that only need the
/// number (and by the finite-difference gradient check).
pub fn surrogate_objective(
    params: &PolicyParams,
    group: &RolloutGroup,
    advantages: &AdvantageSet,
    behavior: &PolicyParams,
    reference: &PolicyParams,
    cfg: &SurrogateConfig,
) -> Result<f64, PolicyError> {
    surrogate_grad(params, group, advantages, behavior, reference, cfg).map(|(_, s)| s.objective)
}

/// Plain gradient-ascent step: `logits += learning_rate * gradient`.
pub fn apply_grad(
    mut params: PolicyParams,
    grad: &GradientTable,
    learning_rate: f64,
) -> Result<PolicyParams, PolicyError> {
    assert!(learning_rate > 0.0, "learning_rate must be positive");
    let vocab = params.vocab_size as usize;
    for (ctx, row) in grad.entries() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFiniteGradient {
                context: ctx.clone(),
            });
        }
        let logits = params
            .table
            .entry(ctx.clone())
            .or_insert_with(|| vec![0.0; vocab]);
        for (l, g) in logits.iter_mut().zip(row) {
            *l += learning_rate * g;
        }
    }
    Ok(params)
}
