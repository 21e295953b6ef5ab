//! Synthetic writing environment and latent quality oracle.
//!
//! A task asks the policy to cover a set of weighted target bigrams at an
//! ideal length. True quality rewards each covered bigram, penalizes
//! repeating a target beyond its first occurrence, penalizes deviation of the
//! content length from the ideal, and charges every filler token. Filler is
//! the stand-in for redundant explanation text: it adds length, never quality.
//! The
//! oracle is the ground truth against which reward-model hacks are measured.
//!
//! Bigrams are counted over the content sequence, i.e. the token sequence
//! with filler tokens removed: a filler token neither forms a bigram nor
//! breaks the adjacency of its neighbors. The length-deviation term applies
//! to the content length, and each filler token costs `rho_len` on its own,
//! so inserting filler can never raise quality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{InvariantError, Record};
use crate::rng::RngStream;
use crate::types::{Rollout, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Environment parameters shared by task generation and the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub vocab_size: u16,
    pub max_len: usize,
    pub ideal_len: usize,
    /// Number of weighted target bigrams per task.
    pub num_bigrams: usize,
    /// Penalty per repeated occurrence of a target bigram beyond the first.
    pub rho_rep: f64,
    /// Penalty per unit of content-length deviation and per filler token.
    pub rho_len: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// Token id that terminates a sequence.
    pub end_token: TokenId,
    /// Token id that adds length but never quality.
    pub filler_token: TokenId,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            max_len: 32,
            ideal_len: 16,
            num_bigrams: 4,
            rho_rep: 0.5,
            rho_len: 0.1,
            // Keeping weights below rho_rep makes repeating a target bigram
            // strictly unprofitable, so covering each target once at the
            // ideal length is the exact optimum.
            weight_min: 0.2,
            weight_max: 0.45,
            end_token: 0,
            filler_token: 1,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.vocab_size < 4 {
            return Err(EnvError::Config(format!(
                "vocab_size must be >= 4, got {}",
                self.vocab_size
            )));
        }
        let v = self.vocab_size as usize;
        if self.num_bigrams == 0 || self.num_bigrams >= v * v {
            return Err(EnvError::Config(format!(
                "num_bigrams must lie in [1, V^2), got {} with V={}",
                self.num_bigrams, self.vocab_size
            )));
        }
        // Targets draw from tokens other than END and filler.
        let pool = (v - 2) * (v - 2);
        if self.num_bigrams > pool {
            return Err(EnvError::Config(format!(
                "num_bigrams {} exceeds the {} bigrams available over non-end, non-filler tokens",
                self.num_bigrams, pool
            )));
        }
        if self.ideal_len == 0 || self.ideal_len > self.max_len {
            return Err(EnvError::Config(format!(
                "ideal_len must lie in [1, max_len], got {} with max_len {}",
                self.ideal_len, self.max_len
            )));
        }
        if self.rho_rep < 0.0 || self.rho_len < 0.0 {
            return Err(EnvError::Config("penalties must be >= 0".into()));
        }
        if !(self.weight_min > 0.0 && self.weight_max >= self.weight_min) {
            return Err(EnvError::Config(format!(
                "weights must satisfy 0 < weight_min <= weight_max, got [{}, {}]",
                self.weight_min, self.weight_max
            )));
        }
        if self.end_token >= self.vocab_size || self.filler_token >= self.vocab_size {
            return Err(EnvError::Config(
                "end_token and filler_token must lie in the vocabulary".into(),
            ));
        }
        if self.end_token == self.filler_token {
            return Err(EnvError::Config(
                "end_token and filler_token must differ".into(),
            ));
        }
        Ok(())
    }
}

/// A weighted target bigram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedBigram {
    pub first: TokenId,
    pub second: TokenId,
    pub weight: f64,
}

/// One synthetic writing task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub query_id: String,
    pub target_bigrams: Vec<WeightedBigram>,
    pub ideal_length: usize,
    pub filler_token: TokenId,
}

impl Record for TaskSpec {
    fn validate(&self) -> Result<(), InvariantError> {
        if self.target_bigrams.is_empty() {
            return Err(InvariantError::new("task has no target bigrams".into()));
        }
        for b in &self.target_bigrams {
            if !(b.weight > 0.0) || !b.weight.is_finite() {
                return Err(InvariantError::new(format!(
                    "bigram weight must be positive and finite, got {}",
                    b.weight
                )));
            }
            if b.first == self.filler_token || b.second == self.filler_token {
                return Err(InvariantError::new(
                    "filler token may not appear in a target bigram".into(),
                ));
            }
        }
        if self.ideal_length == 0 {
            return Err(InvariantError::new("ideal_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Oracle output for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityReport {
    /// Latent true quality.
    pub quality: f64,
    /// Total token count, filler included.
    pub length: usize,
    /// Number of filler tokens (redundant-explanation analog).
    pub filler_count: usize,
}

impl Record for QualityReport {
    fn validate(&self) -> Result<(), InvariantError> {
        if self.filler_count > self.length {
            return Err(InvariantError::new(format!(
                "filler_count {} exceeds length {}",
                self.filler_count, self.length
            )));
        }
        if !self.quality.is_finite() {
            return Err(InvariantError::new(format!(
                "quality is not finite: {}",
                self.quality
            )));
        }
        Ok(())
    }
}

/// The environment: task generator plus quality oracle.
#[derive(Debug, Clone)]
pub struct SynthEnv {
    params: EnvParams,
}

impl SynthEnv {
    pub fn new(params: EnvParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Draw one task. Deterministic in the rng stream; `index` only names the
    /// query id.
    pub fn make_task(&self, rng: &mut RngStream, index: u64) -> TaskSpec {
        let p = &self.params;
        let mut chosen: Vec<(TokenId, TokenId)> = Vec::with_capacity(p.num_bigrams);
        while chosen.len() < p.num_bigrams {
            let first = self.draw_content_token(rng);
            let second = self.draw_content_token(rng);
            if !chosen.contains(&(first, second)) {
                chosen.push((first, second));
            }
        }
        let target_bigrams = chosen
            .into_iter()
            .map(|(first, second)| WeightedBigram {
                first,
                second,
                weight: quantize_weight(rng.uniform_in(p.weight_min, p.weight_max)),
            })
            .collect();
        TaskSpec {
            query_id: format!("q{index:06}"),
            target_bigrams,
            ideal_length: p.ideal_len,
            filler_token: p.filler_token,
        }
    }

    fn draw_content_token(&self, rng: &mut RngStream) -> TokenId {
        loop {
            let t = rng.below(self.params.vocab_size as usize) as TokenId;
            if t != self.params.end_token && t != self.params.filler_token {
                return t;
            }
        }
    }

    /// Score one rollout against a task. Total and deterministic.
    pub fn oracle_quality(&self, task: &TaskSpec, rollout: &Rollout) -> QualityReport {
        let p = &self.params;
        let content: Vec<TokenId> = rollout
            .tokens
            .iter()
            .copied()
            .filter(|t| *t != task.filler_token)
            .collect();
        let length = rollout.tokens.len();
        let filler_count = length - content.len();

        let mut counts: BTreeMap<(TokenId, TokenId), usize> = BTreeMap::new();
        for pair in content.windows(2) {
            *counts.entry((pair[0], pair[1])).or_insert(0) += 1;
        }

        let mut quality = 0.0;
        for b in &task.target_bigrams {
            let c = counts.get(&(b.first, b.second)).copied().unwrap_or(0);
            quality += b.weight * c as f64;
            quality -= p.rho_rep * c.saturating_sub(1) as f64;
        }
        let deviation = content.len().abs_diff(task.ideal_length);
        quality -= p.rho_len * deviation as f64;
        quality -= p.rho_len * filler_count as f64;

        QualityReport {
            quality,
            length,
            filler_count,
        }
    }

    /// Exact best achievable quality for a task, with one witness sequence.
    ///
    /// Dynamic program over (content length, last token, set of targets seen):
    /// the marginal value of a target occurrence is `weight` the first time
    /// and `weight - rho_rep` afterwards, so a seen-set suffices for
    /// exactness. Sequences either terminate with END (counted in length) or
    /// run to `max_len` incomplete; filler is never part of an optimum.
    pub fn best_sequence(&self, task: &TaskSpec) -> (Vec<TokenId>, f64) {
        let p = &self.params;
        let k = task.target_bigrams.len();
        assert!(k <= 16, "exact search supports at most 16 target bigrams");
        let v = p.vocab_size as usize;
        let masks = 1usize << k;
        let neg = f64::NEG_INFINITY;

        // value[last][mask] = best bigram score for a content prefix of the
        // current length ending at `last` having seen targets `mask`.
        let mut value = vec![vec![neg; masks]; v];
        let mut parent: Vec<Vec<Vec<(u16, usize)>>> = Vec::with_capacity(p.max_len);
        // Empty content sequence: the rollout is just END.
        let empty_quality = -p.rho_len * 1usize.abs_diff(task.ideal_length) as f64;
        let mut best: Option<(f64, usize, TokenId, usize, bool)> =
            Some((empty_quality, 0, 0, 0, true));

        // Score of stopping now given `m` content tokens and the accumulated
        // bigram score. `with_end` spends one extra slot on the END token.
        let consider = |score: f64,
                            m: usize,
                            last: TokenId,
                            mask: usize,
                            best: &mut Option<(f64, usize, TokenId, usize, bool)>| {
            if score == neg {
                return;
            }
            // Complete: content length m + END.
            if m < p.max_len {
                let total = score - p.rho_len * (m + 1).abs_diff(task.ideal_length) as f64;
                if best.is_none() || total > best.unwrap().0 {
                    *best = Some((total, m, last, mask, true));
                }
            }
            // Incomplete: only possible exactly at max_len.
            if m == p.max_len {
                let total = score - p.rho_len * m.abs_diff(task.ideal_length) as f64;
                if best.is_none() || total > best.unwrap().0 {
                    *best = Some((total, m, last, mask, false));
                }
            }
        };

        // Seed length-1 prefixes.
        for t in 0..v as u16 {
            if t == p.end_token || t == p.filler_token {
                continue;
            }
            value[t as usize][0] = 0.0;
        }
        for t in 0..v as u16 {
            if t != p.end_token && t != p.filler_token {
                consider(0.0, 1, t, 0, &mut best);
            }
        }

        for m in 2..=p.max_len {
            let mut next = vec![vec![neg; masks]; v];
            let mut par = vec![vec![(u16::MAX, 0usize); masks]; v];
            for last in 0..v {
                for mask in 0..masks {
                    let base = value[last][mask];
                    if base == neg {
                        continue;
                    }
                    for tok in 0..v as u16 {
                        if tok == p.end_token || tok == p.filler_token {
                            continue;
                        }
                        let mut gain = 0.0;
                        let mut new_mask = mask;
                        for (bit, b) in task.target_bigrams.iter().enumerate() {
                            if b.first == last as u16 && b.second == tok {
                                if mask & (1 << bit) == 0 {
                                    gain += b.weight;
                                    new_mask |= 1 << bit;
                                } else {
                                    gain += b.weight - p.rho_rep;
                                }
                            }
                        }
                        let cand = base + gain;
                        if cand > next[tok as usize][new_mask] {
                            next[tok as usize][new_mask] = cand;
                            par[tok as usize][new_mask] = (last as u16, mask);
                        }
                    }
                }
            }
            parent.push(par);
            for last in 0..v {
                for mask in 0..masks {
                    consider(next[last][mask], m, last as u16, mask, &mut best);
                }
            }
            value = next;
        }

        let (quality, m, mut last, mut mask, with_end) = best.expect("search space nonempty");
        let mut seq: Vec<TokenId> = Vec::new();
        if m > 0 {
            seq.push(last);
            // parent[i] maps prefixes of length i+2 back to length i+1.
            for i in (0..m.saturating_sub(1)).rev() {
                let (pl, pm) = parent[i][last as usize][mask];
                seq.push(pl);
                last = pl;
                mask = pm;
            }
            seq.reverse();
        }
        if with_end {
            seq.push(p.end_token);
        }
        (seq, quality)
    }
}

/// Task weights are kept on a 1e-6 grid so records round-trip through text
/// without surprising trailing digits.
fn quantize_weight(w: f64) -> f64 {
    (w * 1e6).round() / 1e6
}
