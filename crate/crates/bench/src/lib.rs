//! Shared fixtures for the benchmark suite.

use brpolab_core::config::ExperimentConfig;
use brpolab_core::env::SynthEnv;
use brpolab_core::policy::{sample_group, PolicyParams};
use brpolab_core::rng::{RngStream, StreamPurpose};
use brpolab_core::types::RolloutGroup;
use brpolab_core::TaskSpec;

pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub env: SynthEnv,
    pub task: TaskSpec,
    pub policy: PolicyParams,
}

impl Fixture {
    pub fn new() -> Self {
        let cfg = ExperimentConfig::default();
        let env = SynthEnv::new(cfg.env.clone()).expect("default env");
        let task = {
            let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::TaskGen, 0, 0);
            env.make_task(&mut rng, 0)
        };
        let policy = PolicyParams::untrained(cfg.env.vocab_size, cfg.policy.context_order);
        Self {
            cfg,
            env,
            task,
            policy,
        }
    }

    pub fn group(&self, g: usize, stream: u64) -> RolloutGroup {
        let mut rng = RngStream::for_purpose(self.cfg.seed, StreamPurpose::Rollout, stream, 0);
        sample_group(
            &self.policy,
            &self.task,
            g,
            self.env.params().max_len,
            self.env.params().end_token,
            &mut rng,
            1.0,
            1.0,
        )
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
