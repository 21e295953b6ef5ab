//! Experiment configuration: one TOML file with dotted keys, plus
//! `key=value` overrides.
//!
//! Unknown keys are rejected with the nearest valid key named. Override keys
//! may drop their table prefix when the leaf name is unique across the
//! schema (`max_iterations` resolves to `train.max_iterations`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvParams;
use crate::judges::{JudgeFailurePolicy, RemoteJudgeConfig, ScalarRmSpec};
use crate::optim::BrpoConfig;
use crate::policy::AggMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key {key:?}; nearest valid key is {nearest:?}")]
    UnknownKey { key: String, nearest: String },
    #[error("ambiguous config key {key:?}; candidates: {candidates}")]
    AmbiguousKey { key: String, candidates: String },
    #[error("invalid value for {key:?}: {detail}")]
    BadValue { key: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Advantage estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    Grpo,
    Brpo,
}

/// Reward source selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// Scalar reward-model simulator + group normalization.
    Scalar,
    /// Pairwise generative-judge simulator.
    GenrmSim,
    /// External judge over HTTP.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub context_order: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub learning_rate: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub agg_mode: AggMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            context_order: 2,
            temperature: 1.0,
            top_p: 1.0,
            // The surrogate is a per-token mean, so gradients scale like
            // 1/(tokens per batch); this step size moves logits O(0.5) per
            // wave on the default environment.
            learning_rate: 120.0,
            eps_low: 0.2,
            eps_high: 0.2,
            beta: 0.0,
            agg_mode: AggMode::TokenMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub eps_std: f64,
}

impl Default for GrpoSection {
    fn default() -> Self {
        Self { eps_std: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DapoSection {
    pub enabled: bool,
    /// Rewards above this count as "correct" for the dynamic-sampling
    /// constraint when the reward source is not binary by itself.
    pub correct_threshold: f64,
}

impl Default for DapoSection {
    fn default() -> Self {
        Self {
            enabled: false,
            correct_threshold: 0.0,
        }
    }
}

/// Judge section: simulator knobs plus the remote client settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeSection {
    pub discrimination: f64,
    pub delta_pos: f64,
    pub lambda_len: f64,
    pub score_spread: f64,
    pub sigma_score: f64,
    pub num_principles: usize,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub bearer_token: String,
    pub failure_policy: JudgeFailurePolicy,
}

impl Default for JudgeSection {
    fn default() -> Self {
        let sim = crate::judges::JudgeSpec::default();
        Self {
            discrimination: sim.discrimination,
            delta_pos: sim.delta_pos,
            lambda_len: sim.lambda_len,
            score_spread: sim.score_spread,
            sigma_score: sim.sigma_score,
            num_principles: sim.num_principles,
            endpoint: String::new(),
            timeout_ms: 10_000,
            retries: 2,
            bearer_token: String::new(),
            failure_policy: JudgeFailurePolicy::Skip,
        }
    }
}

impl JudgeSection {
    pub fn sim_spec(&self) -> crate::judges::JudgeSpec {
        crate::judges::JudgeSpec {
            discrimination: self.discrimination,
            delta_pos: self.delta_pos,
            lambda_len: self.lambda_len,
            score_spread: self.score_spread,
            sigma_score: self.sigma_score,
            num_principles: self.num_principles,
        }
    }

    pub fn remote_config(&self) -> RemoteJudgeConfig {
        RemoteJudgeConfig {
            endpoint: self.endpoint.clone(),
            timeout_ms: self.timeout_ms,
            retries: self.retries,
            bearer_token: self.bearer_token.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub group_size: usize,
    pub batch_groups: usize,
    pub oversample_factor: f64,
    pub max_iterations: usize,
    pub eval_every: usize,
    pub inner_epochs: usize,
    /// Number of distinct tasks the run trains on (the "default task set").
    pub task_pool: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            group_size: 16,
            batch_groups: 8,
            oversample_factor: 3.0,
            max_iterations: 200,
            eval_every: 50,
            inner_epochs: 1,
            task_pool: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 64,
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvantageSection {
    pub mode: AdvantageMode,
}

impl Default for AdvantageSection {
    fn default() -> Self {
        Self {
            mode: AdvantageMode::Brpo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub source: RewardSource,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            source: RewardSource::GenrmSim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatapipeSection {
    pub min_chosen_reward: f64,
    pub min_gap: f64,
}

impl Default for DatapipeSection {
    fn default() -> Self {
        // Calibrated to retain roughly a third of default synthetic pairs.
        Self {
            min_chosen_reward: -0.5,
            min_gap: 0.5,
        }
    }
}

/// The whole experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvParams,
    pub policy: PolicyConfig,
    pub advantage: AdvantageSection,
    pub reward: RewardSection,
    pub grpo: GrpoSection,
    pub brpo: BrpoConfig,
    pub dapo: DapoSection,
    pub scalar_rm: ScalarRmSpec,
    pub judge: JudgeSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub datapipe: DatapipeSection,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `key=value` overrides (dotted keys; unique leaf names may omit
    /// the table prefix), then re-validate.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value =
            toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (raw_key, raw_val) = item.split_once('=').ok_or_else(|| ConfigError::BadValue {
                key: item.clone(),
                detail: "expected key=value".into(),
            })?;
            let key = resolve_key(raw_key.trim())?;
            set_dotted(&mut value, &key, raw_val.trim()).map_err(|detail| {
                ConfigError::BadValue {
                    key: key.clone(),
                    detail,
                }
            })?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.brpo
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.policy.context_order == 0 {
            return Err(ConfigError::Invalid("policy.context_order must be >= 1".into()));
        }
        if !(self.policy.temperature > 0.0) {
            return Err(ConfigError::Invalid("policy.temperature must be > 0".into()));
        }
        if !(self.policy.top_p > 0.0 && self.policy.top_p <= 1.0) {
            return Err(ConfigError::Invalid("policy.top_p must lie in (0, 1]".into()));
        }
        if !(self.policy.learning_rate > 0.0) {
            return Err(ConfigError::Invalid("policy.learning_rate must be > 0".into()));
        }
        if !(self.policy.eps_low > 0.0 && self.policy.eps_high > 0.0) {
            return Err(ConfigError::Invalid("clip ranges must be > 0".into()));
        }
        if self.policy.beta < 0.0 {
            return Err(ConfigError::Invalid("policy.beta must be >= 0".into()));
        }
        if self.train.group_size < 2 {
            return Err(ConfigError::Invalid("train.group_size must be >= 2".into()));
        }
        if self.train.batch_groups < 1 {
            return Err(ConfigError::Invalid("train.batch_groups must be >= 1".into()));
        }
        if self.train.oversample_factor < 1.0 {
            return Err(ConfigError::Invalid(
                "train.oversample_factor must be >= 1".into(),
            ));
        }
        if self.train.inner_epochs < 1 {
            return Err(ConfigError::Invalid("train.inner_epochs must be >= 1".into()));
        }
        if self.train.task_pool < 1 {
            return Err(ConfigError::Invalid("train.task_pool must be >= 1".into()));
        }
        if self.eval.n_samples < 1 {
            return Err(ConfigError::Invalid("eval.n_samples must be >= 1".into()));
        }
        if self.scalar_rm.sigma_noise < 0.0 {
            return Err(ConfigError::Invalid("scalar_rm.sigma_noise must be >= 0".into()));
        }
        self.judge
            .sim_spec()
            .validate()
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// The judge endpoint, with the environment variable taking precedence.
    pub fn judge_endpoint(&self) -> String {
        std::env::var(crate::judges::JUDGE_URL_ENV).unwrap_or_else(|_| self.judge.endpoint.clone())
    }

    /// Every valid dotted key, derived from the schema itself.
    pub fn valid_keys() -> Vec<String> {
        let value = toml::Value::try_from(ExperimentConfig::default())
            .expect("default config serializes");
        let mut keys = Vec::new();
        collect_keys(&value, String::new(), &mut keys);
        keys.sort();
        keys
    }
}

fn collect_keys(value: &toml::Value, prefix: String, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_keys(v, key, out);
            }
        }
        _ => out.push(prefix),
    }
}

/// Resolve a possibly-unprefixed override key against the schema.
fn resolve_key(key: &str) -> Result<String, ConfigError> {
    let valid = ExperimentConfig::valid_keys();
    if valid.iter().any(|k| k == key) {
        return Ok(key.to_string());
    }
    // Bare leaf name: accept when unique.
    let suffix_matches: Vec<&String> = valid
        .iter()
        .filter(|k| k.rsplit('.').next() == Some(key))
        .collect();
    match suffix_matches.len() {
        1 => Ok(suffix_matches[0].clone()),
        0 => {
            let nearest = valid
                .iter()
                .min_by_key(|k| edit_distance(key, k.rsplit('.').next().unwrap_or(k)).min(edit_distance(key, k)))
                .cloned()
                .unwrap_or_default();
            Err(ConfigError::UnknownKey {
                key: key.to_string(),
                nearest,
            })
        }
        _ => Err(ConfigError::AmbiguousKey {
            key: key.to_string(),
            candidates: suffix_matches
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        }),
    }
}

fn set_dotted(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), String> {
    let mut current = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        current = current
            .get_mut(part)
            .ok_or_else(|| format!("no table {part:?}"))?;
    }
    let leaf = parts.last().expect("nonempty key");
    let table = current
        .as_table_mut()
        .ok_or_else(|| format!("{key:?} does not address a table entry"))?;
    let existing = table
        .get(*leaf)
        .ok_or_else(|| format!("no entry {leaf:?}"))?;
    let parsed = parse_as(existing, raw)?;
    table.insert((*leaf).to_string(), parsed);
    Ok(())
}

/// Parse `raw` to the same TOML type as `existing`.
fn parse_as(existing: &toml::Value, raw: &str) -> Result<toml::Value, String> {
    Ok(match existing {
        toml::Value::Integer(_) => toml::Value::Integer(
            raw.parse::<i64>().map_err(|e| format!("expected integer: {e}"))?,
        ),
        toml::Value::Float(_) => toml::Value::Float(
            raw.parse::<f64>().map_err(|e| format!("expected number: {e}"))?,
        ),
        toml::Value::Boolean(_) => toml::Value::Boolean(
            raw.parse::<bool>().map_err(|e| format!("expected bool: {e}"))?,
        ),
        toml::Value::String(_) => toml::Value::String(raw.trim_matches('"').to_string()),
        other => return Err(format!("cannot override entries of type {}", other.type_str())),
    })
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut row = vec![i + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row.push(sub.min(prev[j + 1] + 1).min(row[j] + 1));
        }
        prev = row;
    }
    prev[b.len()]
}
