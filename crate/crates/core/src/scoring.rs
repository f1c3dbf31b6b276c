//! The reward engine: parse a raw candidate and fill a [`RewardBreakdown`].

use serde::{Deserialize, Serialize};

use crate::accuracy::{lcs_length, prefix_reward, step_accuracy, AccuracyVariant};
use crate::config::AccuracyConfig;
use crate::format::{format_reward, FormatConfig};
use crate::model::{ActionDictionary, ActionStep, PlanResponse, RewardBreakdown};
use crate::parser::{extract_steps, parse_output};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub format: FormatConfig,
    pub accuracy: AccuracyConfig,
}

impl ScoringConfig {
    pub fn with_variant(variant: AccuracyVariant) -> Self {
        let mut cfg = Self::default();
        cfg.accuracy.variant = variant;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        self.accuracy.validate()
    }
}

/// Parses `raw` and scores it against `reference`.
pub fn score_candidate(
    raw: &str,
    dict: &ActionDictionary,
    reference: &[ActionStep],
    cfg: &ScoringConfig,
) -> (PlanResponse, RewardBreakdown) {
    let resp = parse_output(raw);
    let breakdown = score_response(&resp, dict, reference, cfg);
    (resp, breakdown)
}

/// Scores an already parsed response. All three accuracy variants are
/// computed; the configured one feeds `r_overall`.
pub fn score_response(
    resp: &PlanResponse,
    dict: &ActionDictionary,
    reference: &[ActionStep],
    cfg: &ScoringConfig,
) -> RewardBreakdown {
    let (r_format, parts) = format_reward(resp, dict, &cfg.format);
    let predicted = extract_steps(resp);
    let k = lcs_length(&predicted, reference);
    let r_lcs = if reference.is_empty() {
        if predicted.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        k as f64 / reference.len() as f64
    };
    let r_step = step_accuracy(&predicted, reference);
    let r_prefix = prefix_reward(&predicted, reference);
    let selected = match cfg.accuracy.variant {
        AccuracyVariant::Lcs => r_lcs,
        AccuracyVariant::Step => r_step,
        AccuracyVariant::Prefix => r_prefix,
    };
    RewardBreakdown {
        r_section: parts.section,
        r_type: parts.type_,
        r_validity: parts.validity,
        r_format,
        r_lcs,
        r_step,
        r_prefix,
        r_overall: cfg.accuracy.w_format * r_format + cfg.accuracy.w_accuracy * selected,
        lcs_length: k,
        reference_length: reference.len(),
    }
}

impl RewardBreakdown {
    pub fn accuracy(&self, variant: AccuracyVariant) -> f64 {
        match variant {
            AccuracyVariant::Lcs => self.r_lcs,
            AccuracyVariant::Step => self.r_step,
            AccuracyVariant::Prefix => self.r_prefix,
        }
    }
}
