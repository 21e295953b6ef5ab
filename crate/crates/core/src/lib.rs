//! Desk-scale laboratory for preference-based reinforcement learning.
//!
//! The crate wires together a synthetic writing environment with a hidden
//! quality oracle ([`mod@env`]), a tabular autoregressive policy with exact
//! log-probabilities and analytic gradients ([`policy`]), simulated and
//! remote pairwise judges ([`judges`]), the GenRM reward rules and
//! preference-data pipeline ([`genrm`]), group-relative advantage
//! estimators including BRPO's bootstrapped preference advantage
//! ([`optim`]), and a deterministic training loop ([`trainer`]).
//!
//! Everything is seeded through [`rng::RngStream`]: identical seeds produce
//! byte-identical metrics files, which is what makes paired A/B experiments
//! (common random numbers) possible.

pub mod config;
pub mod env;
pub mod genrm;
pub mod judges;
pub mod optim;
pub mod policy;
pub mod record;
pub mod rng;
pub mod trainer;
pub mod types;

pub use config::ExperimentConfig;
pub use env::{EnvParams, QualityReport, SynthEnv, TaskSpec};
pub use judges::{PairJudge, SimJudge};
pub use optim::AdvantageSet;
pub use policy::PolicyParams;
pub use record::{deserialize_record, serialize_record, Record};
pub use rng::{RngStream, StreamPurpose};
pub use types::{
    ExtractedScores, PairJudgment, PreferencePair, PresentationOrder, Rollout, RolloutGroup,
    TokenId,
};
