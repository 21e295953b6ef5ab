//! HTTP client for an external pairwise judge.
//!
//! Wire contract: `POST {endpoint}/judge` with body
//! `{"query": .., "response_a": .., "response_b": ..}`; the reply carries
//! `{"critique": .., "score_a": .., "score_b": ..}`. The boxed pair inside
//! `critique` is authoritative; the numeric score fields are advisory and
//! only logged. Requests are retried idempotently on timeouts and 5xx
//! responses up to the configured count.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::TaskSpec;
use crate::rng::RngStream;
use crate::types::{ExtractedScores, PairJudgment, PresentationOrder, Rollout};

use super::{extract_scores, JudgeError, PairJudge};

pub const JUDGE_URL_ENV: &str = "BRPOLAB_JUDGE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteJudgeConfig {
    /// Base URL; the client posts to `{endpoint}/judge`.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Number of retries after the first attempt.
    pub retries: u32,
    /// Optional bearer token passed through as-is.
    pub bearer_token: String,
}

impl Default for RemoteJudgeConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: 10_000,
            retries: 2,
            bearer_token: String::new(),
        }
    }
}

#[derive(Debug, Serialize)]
struct JudgeRequest<'a> {
    query: &'a str,
    response_a: &'a str,
    response_b: &'a str,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgeReply {
    critique: String,
    #[allow(dead_code)]
    score_a: f64,
    #[allow(dead_code)]
    score_b: f64,
}

/// Cumulative client counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RemoteStats {
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
}

pub struct RemoteJudge {
    config: RemoteJudgeConfig,
    agent: ureq::Agent,
    requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

impl RemoteJudge {
    pub fn new(config: RemoteJudgeConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            config,
            agent,
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> RemoteStats {
        RemoteStats {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }

    fn url(&self) -> String {
        format!("{}/judge", self.config.endpoint.trim_end_matches('/'))
    }

    fn post_once(&self, request: &JudgeRequest<'_>) -> Result<JudgeReply, JudgeError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut call = self.agent.post(self.url());
        if !self.config.bearer_token.is_empty() {
            call = call.header(
                "authorization",
                format!("Bearer {}", self.config.bearer_token),
            );
        }
        let mut response = call.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => JudgeError::Timeout,
            other => JudgeError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(JudgeError::BadStatus(status));
        }
        response
            .body_mut()
            .read_json::<JudgeReply>()
            .map_err(|e| JudgeError::Transport(format!("malformed reply body: {e}")))
    }

    /// Judge a pair of text responses, retrying transient failures.
    pub fn judge_text(
        &self,
        query: &str,
        response_a: &str,
        response_b: &str,
        vote_index: u32,
    ) -> Result<PairJudgment, JudgeError> {
        let request = JudgeRequest {
            query,
            response_a,
            response_b,
        };
        let mut attempt = 0u32;
        let reply = loop {
            match self.post_once(&request) {
                Ok(reply) => break reply,
                Err(e) => {
                    let transient = matches!(
                        e,
                        JudgeError::Timeout
                            | JudgeError::BadStatus(500..=599)
                            | JudgeError::Transport(_)
                    );
                    if transient && attempt < self.config.retries {
                        attempt += 1;
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    self.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(e);
                }
            }
        };

        let scores: ExtractedScores = match extract_scores(&reply.critique) {
            Ok(s) => s,
            Err(parse) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                return Err(JudgeError::ParseFailure(parse));
            }
        };
        Ok(PairJudgment {
            order: PresentationOrder::FirstIsA,
            principles: Vec::new(),
            critique: reply.critique,
            scores,
            vote_index,
        })
    }
}

fn render_tokens(rollout: &Rollout) -> String {
    rollout
        .tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl PairJudge for RemoteJudge {
    fn judge(
        &self,
        task: &TaskSpec,
        first: &Rollout,
        second: &Rollout,
        _rng: &mut RngStream,
        vote_index: u32,
    ) -> Result<PairJudgment, JudgeError> {
        self.judge_text(
            &task.query_id,
            &render_tokens(first),
            &render_tokens(second),
            vote_index,
        )
    }
}
