//! Run configuration shared by the CLI and the lab.
//!
//! One JSON document with `format`, `accuracy`, `grpo` and `lab` sections.
//! Every field has a default, so `{}` is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::{check_overall_weights, AccuracyVariant};
use crate::format::FormatConfig;
use crate::grpo::GrpoConfig;
use crate::lab::LabConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyConfig {
    pub variant: AccuracyVariant,
    pub w_format: f64,
    pub w_accuracy: f64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            variant: AccuracyVariant::Lcs,
            w_format: 0.2,
            w_accuracy: 0.8,
        }
    }
}

impl AccuracyConfig {
    pub fn validate(&self) -> Result<()> {
        check_overall_weights(self.w_format, self.w_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: FormatConfig,
    pub accuracy: AccuracyConfig,
    pub grpo: GrpoConfig,
    pub lab: LabConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        self.accuracy.validate()?;
        self.grpo.validate()?;
        self.lab.validate()
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
