//! Sequence accuracy rewards over action-name sequences.
//!
//! Steps compare equal when their normalized names match; ids are ignored
//! because they are reassigned per task.

use serde::{Deserialize, Serialize};

use crate::model::ActionStep;
use crate::{Error, Result};

/// Which sequence reward feeds the overall reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyVariant {
    #[default]
    Lcs,
    Step,
    Prefix,
}

impl AccuracyVariant {
    pub const ALL: [AccuracyVariant; 3] = [
        AccuracyVariant::Lcs,
        AccuracyVariant::Step,
        AccuracyVariant::Prefix,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyVariant::Lcs => "lcs",
            AccuracyVariant::Step => "step",
            AccuracyVariant::Prefix => "prefix",
        }
    }
}

impl std::fmt::Display for AccuracyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AccuracyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcs" => Ok(AccuracyVariant::Lcs),
            "step" => Ok(AccuracyVariant::Step),
            "prefix" => Ok(AccuracyVariant::Prefix),
            other => Err(Error::Config(format!("unknown accuracy variant {other:?}"))),
        }
    }
}

/// LCS length of two slices under `PartialEq`, using one rolling row.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs_len_by(a, b, |x, y| x == y)
}

pub fn lcs_len_by<A, B>(a: &[A], b: &[B], eq: impl Fn(&A, &B) -> bool) -> usize {
    const STACK_ROW: usize = 64;
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut stack = [0usize; STACK_ROW + 1];
    let mut heap;
    let row: &mut [usize] = if b.len() <= STACK_ROW {
        &mut stack[..=b.len()]
    } else {
        heap = vec![0usize; b.len() + 1];
        &mut heap
    };
    for x in a {
        // `diag` is the previous row at j-1, `left` the current row at j-1.
        let (mut diag, mut left) = (0, 0);
        for (cell, y) in row[1..].iter_mut().zip(b) {
            let up = *cell;
            left = if eq(x, y) { diag + 1 } else { up.max(left) };
            *cell = left;
            diag = up;
        }
    }
    row[b.len()]
}

/// Length of the longest common subsequence of two action sequences.
pub fn lcs_length(predicted: &[ActionStep], reference: &[ActionStep]) -> usize {
    lcs_len_by(predicted, reference, |x, y| x.name == y.name)
}

fn ratio(hits: usize, reference: &[ActionStep], predicted: &[ActionStep]) -> f64 {
    if reference.is_empty() {
        return if predicted.is_empty() { 1.0 } else { 0.0 };
    }
    hits as f64 / reference.len() as f64
}

/// `k / n`: LCS length over reference length.
///
/// An empty reference scores 1 against an empty prediction and 0 otherwise.
pub fn lcs_reward(predicted: &[ActionStep], reference: &[ActionStep]) -> f64 {
    ratio(lcs_length(predicted, reference), reference, predicted)
}

/// Positions where the prediction matches the reference, over `n`.
pub fn step_accuracy(predicted: &[ActionStep], reference: &[ActionStep]) -> f64 {
    let hits = predicted
        .iter()
        .zip(reference)
        .filter(|(p, r)| p.name == r.name)
        .count();
    ratio(hits, reference, predicted)
}

/// Longest common prefix length over `n`.
pub fn prefix_reward(predicted: &[ActionStep], reference: &[ActionStep]) -> f64 {
    let hits = predicted
        .iter()
        .zip(reference)
        .take_while(|(p, r)| p.name == r.name)
        .count();
    ratio(hits, reference, predicted)
}

pub fn accuracy(
    variant: AccuracyVariant,
    predicted: &[ActionStep],
    reference: &[ActionStep],
) -> f64 {
    match variant {
        AccuracyVariant::Lcs => lcs_reward(predicted, reference),
        AccuracyVariant::Step => step_accuracy(predicted, reference),
        AccuracyVariant::Prefix => prefix_reward(predicted, reference),
    }
}

/// `w_format * format + w_acc * accuracy`; the weights must sum to 1.
pub fn overall_reward(format: f64, accuracy: f64, w_format: f64, w_acc: f64) -> Result<f64> {
    check_overall_weights(w_format, w_acc)?;
    Ok(w_format * format + w_acc * accuracy)
}

pub(crate) fn check_overall_weights(w_format: f64, w_acc: f64) -> Result<()> {
    if !(w_format.is_finite() && w_acc.is_finite()) || w_format < 0.0 || w_acc < 0.0 {
        return Err(Error::Config(format!(
            "overall weights must be finite and >= 0, got ({w_format}, {w_acc})"
        )));
    }
    if (w_format + w_acc - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "overall weights sum to {}, expected 1",
            w_format + w_acc
        )));
    }
    Ok(())
}
