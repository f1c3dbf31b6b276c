//! Rule-based verifiable rewards for embodied multi-step planning.
//!
//! The crate scores structured plan outputs produced by a planner model and
//! provides the group-relative policy optimization (GRPO) machinery that
//! consumes those scores:
//!
//! - [`parser`] splits `<think>`/`<answer>` regions and extracts the
//!   four-field plan object without ever failing on malformed text.
//! - [`format`] computes the section/type/validity format reward.
//! - [`accuracy`] computes the LCS reward and the step-accuracy and
//!   prefix baselines it is compared against.
//! - [`scoring`] combines everything into a [`RewardBreakdown`].
//! - [`grpo`] holds group advantages, the clipped surrogate with the k3 KL
//!   penalty, and its analytic gradient.
//! - [`lab`] is a synthetic planning microworld with a tabular policy that
//!   closes the training loop end to end.
//! - [`dataset`] reads JSONL scoring datasets and writes reward CSVs.

pub mod accuracy;
pub mod config;
pub mod dataset;
pub mod format;
pub mod grpo;
pub mod lab;
pub mod model;
pub mod parser;
pub mod scoring;

pub use accuracy::{
    lcs_length, lcs_reward, overall_reward, prefix_reward, step_accuracy, AccuracyVariant,
};
pub use config::{AccuracyConfig, RunConfig};
pub use format::{format_reward, FormatComponents, FormatConfig};
pub use grpo::{group_advantages, Candidate, GroupAdvantages, GrpoConfig, RolloutGroup};
pub use model::{
    normalize_name, ActionDictionary, ActionStep, ParseIssue, PlanField, PlanResponse, RawStep,
    ReferencePlan, RewardBreakdown,
};
pub use parser::{extract_steps, parse_output, parse_response, render_response, split_tags};
pub use scoring::{score_candidate, ScoringConfig};

/// Errors surfaced by the toolkit.
///
/// Reward computation itself never fails on model output; errors are
/// reserved for invalid configuration, I/O and numerical breakdown.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no parseable records in {0}")]
    EmptyDataset(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
