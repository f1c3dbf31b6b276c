use std::path::Path;

use super::{perturbation_suite, stream_seed, Perturbation, ToyTask};
use crate::accuracy::{accuracy, AccuracyVariant};
use crate::grpo::{group_advantages, GrpoConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub kinds: Vec<Perturbation>,
    pub seed: u64,
    pub grpo: GrpoConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            kinds: Perturbation::ALL.to_vec(),
            seed: 0,
            grpo: GrpoConfig::default(),
        }
    }
}

/// One (perturbation, variant) cell of the comparison.
///
/// Rows labelled `mixed` pool every perturbation of a task into one group
/// and carry the signal-density statistics of that grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub variant: AccuracyVariant,
    pub instances: usize,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    pub mean_abs_advantage: Option<f64>,
    pub zero_variance_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const MIXED_LABEL: &str = "mixed";

impl ComparisonTable {
    pub fn get(&self, label: &str, variant: AccuracyVariant) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.label == label && r.variant == variant)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "label",
            "variant",
            "instances",
            "mean_reward",
            "min_reward",
            "max_reward",
            "mean_abs_advantage",
            "zero_variance_fraction",
        ])?;
        let f = |x: f64| format!("{x:.6}");
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.variant.to_string(),
                r.instances.to_string(),
                f(r.mean_reward),
                f(r.min_reward),
                f(r.max_reward),
                r.mean_abs_advantage.map(f).unwrap_or_default(),
                r.zero_variance_fraction.map(f).unwrap_or_default(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Scores every perturbation of every task's reference under each accuracy
/// variant.
pub fn compare_rewards(tasks: &[ToyTask], cfg: &CompareConfig) -> Result<ComparisonTable> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput(
            "comparison needs at least one task".into(),
        ));
    }
    // scores[task][kind][variant]
    let scores: Vec<Vec<[f64; 3]>> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let suite = perturbation_suite(
                &t.reference_plan,
                &t.action_dictionary,
                &cfg.kinds,
                stream_seed(cfg.seed, &[i as u64]),
            );
            suite
                .iter()
                .map(|(_, pred)| {
                    AccuracyVariant::ALL.map(|v| accuracy(v, pred, &t.reference_plan.steps))
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (k, kind) in cfg.kinds.iter().enumerate() {
        for (v, variant) in AccuracyVariant::ALL.into_iter().enumerate() {
            let values: Vec<f64> = scores.iter().map(|s| s[k][v]).collect();
            rows.push(summary_row(kind.label(), variant, &values, None, None));
        }
    }
    if cfg.kinds.len() >= 2 {
        for (v, variant) in AccuracyVariant::ALL.into_iter().enumerate() {
            let mut abs_adv = 0.0;
            let mut adv_count = 0usize;
            let mut degenerate = 0usize;
            let mut all = Vec::new();
            for task_scores in &scores {
                let rewards: Vec<f64> = task_scores.iter().map(|s| s[v]).collect();
                let adv = group_advantages(&rewards, &cfg.grpo)?;
                abs_adv += adv.advantages.iter().map(|a| a.abs()).sum::<f64>();
                adv_count += adv.advantages.len();
                degenerate += usize::from(adv.is_degenerate());
                all.extend(rewards);
            }
            rows.push(summary_row(
                MIXED_LABEL,
                variant,
                &all,
                Some(abs_adv / adv_count as f64),
                Some(degenerate as f64 / scores.len() as f64),
            ));
        }
    }
    Ok(ComparisonTable { rows })
}

fn summary_row(
    label: &str,
    variant: AccuracyVariant,
    values: &[f64],
    mean_abs_advantage: Option<f64>,
    zero_variance_fraction: Option<f64>,
) -> ComparisonRow {
    ComparisonRow {
        label: label.to_owned(),
        variant,
        instances: values.len(),
        mean_reward: values.iter().sum::<f64>() / values.len() as f64,
        min_reward: values.iter().copied().fold(f64::INFINITY, f64::min),
        max_reward: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_abs_advantage,
        zero_variance_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::{generate_tasks, LabConfig};

    fn table() -> ComparisonTable {
        let cfg = LabConfig {
            long_horizon_tasks: 5,
            ..Default::default()
        };
        let tasks = generate_tasks(15, &cfg, 0).unwrap();
        compare_rewards(&tasks, &CompareConfig::default()).unwrap()
    }

    #[test]
    fn identity_row_is_perfect() {
        let t = table();
        for v in AccuracyVariant::ALL {
            let row = t.get("identity", v).unwrap();
            assert_eq!((row.mean_reward, row.min_reward), (1.0, 1.0));
        }
    }

    #[test]
    fn first_step_error_favours_lcs() {
        let t = table();
        let lcs = t.get("first_step_error", AccuracyVariant::Lcs).unwrap();
        let prefix = t.get("first_step_error", AccuracyVariant::Prefix).unwrap();
        assert!(lcs.min_reward > prefix.max_reward);
    }

    #[test]
    fn adjacent_swap_hurts_step_accuracy() {
        let t = table();
        let lcs = t.get("adjacent_swap", AccuracyVariant::Lcs).unwrap();
        let step = t.get("adjacent_swap", AccuracyVariant::Step).unwrap();
        assert!(step.mean_reward < lcs.mean_reward);
    }

    #[test]
    fn mixed_rows_report_density() {
        let t = table();
        for v in AccuracyVariant::ALL {
            let row = t.get(MIXED_LABEL, v).unwrap();
            assert!(row.mean_abs_advantage.unwrap() > 0.0);
            assert!(row.zero_variance_fraction.is_some());
        }
        let csv = t.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 8 * 3 + 3);
    }

    #[test]
    fn rejects_empty_task_list() {
        assert!(compare_rewards(&[], &CompareConfig::default()).is_err());
    }
}
