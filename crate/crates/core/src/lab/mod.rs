//! A synthetic embodied-planning microworld.
//!
//! Tasks are random action dictionaries with reference plans. The policy is
//! a logit table indexed by (task, position, token), sampled until a stop
//! token or a length cap. Every candidate is rendered through the full
//! tagged response template and scored by the real reward engine, so the
//! training loop exercises the same path as dataset scoring.

mod compare;
mod perturb;
mod policy;
mod tasks;
mod train;

pub use compare::{compare_rewards, CompareConfig, ComparisonRow, ComparisonTable};
pub use perturb::{perturbation_suite, Perturbation};
pub use policy::ToyPolicy;
pub use tasks::{generate_tasks, ToyTask};
pub use train::{render_candidate, sample_group, train, TrainOutcome, TrainRecord, TrainReport};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    /// Tasks with reference length in `min_len..=max_len`.
    pub num_tasks: usize,
    /// Long-horizon tasks added by `train`.
    pub long_horizon_tasks: usize,
    /// Long-horizon tasks added by the reward comparison.
    pub compare_long_horizon_tasks: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub long_min_len: usize,
    pub long_max_len: usize,
    /// Sampling cap per task is `ceil(max_len_factor * n)` tokens.
    pub max_len_factor: f64,
    /// The stop token is masked until this many actions were emitted.
    pub min_actions: usize,
    pub steps: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Initial logit bonus on the reference action at each position
    /// (0 starts from a uniform policy).
    pub warm_start: f64,
    /// Window used for first/last reward means in summaries.
    pub window: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            num_tasks: 8,
            long_horizon_tasks: 0,
            compare_long_horizon_tasks: 4,
            vocab_size: 6,
            min_len: 3,
            max_len: 5,
            long_min_len: 10,
            long_max_len: 20,
            max_len_factor: 2.0,
            min_actions: 1,
            steps: 5000,
            lr: 0.1,
            temperature: 1.0,
            warm_start: 0.0,
            window: 20,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.vocab_size > tasks::name_pool_size() {
            return fail(format!(
                "vocab_size {} exceeds the {} available action names",
                self.vocab_size,
                tasks::name_pool_size()
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!(
                "empty reference length range [{}, {}]",
                self.min_len, self.max_len
            ));
        }
        if self.long_min_len == 0 || self.long_min_len > self.long_max_len {
            return fail(format!(
                "empty long-horizon length range [{}, {}]",
                self.long_min_len, self.long_max_len
            ));
        }
        if !(self.max_len_factor >= 1.0 && self.max_len_factor.is_finite()) {
            return fail(format!(
                "max_len_factor must be >= 1, got {}",
                self.max_len_factor
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !self.warm_start.is_finite() {
            return fail("warm_start must be finite".into());
        }
        if self.window == 0 {
            return fail("window must be >= 1".into());
        }
        Ok(())
    }
}

/// Derives an independent RNG seed from a master seed and stream keys.
pub(crate) fn stream_seed(master: u64, keys: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    keys.iter()
        .fold(splitmix(master), |acc, &k| splitmix(acc ^ splitmix(k)))
}
