use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ActionDictionary, ActionStep, ReferencePlan};

/// Labeled corruptions of a reference plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Perturbation {
    Identity,
    /// Swap two adjacent steps with different names.
    AdjacentSwap,
    /// Replace the first step with an action absent from the reference.
    FirstStepError,
    RandomDeletion,
    /// Insert one random dictionary action at a random position.
    RandomInsertion,
    /// Append `ceil(n/2)` random dictionary actions.
    Padding,
    Reversal,
    /// Keep the first `floor(n/2)` steps.
    Truncation,
}

impl Perturbation {
    pub const ALL: [Perturbation; 8] = [
        Perturbation::Identity,
        Perturbation::AdjacentSwap,
        Perturbation::FirstStepError,
        Perturbation::RandomDeletion,
        Perturbation::RandomInsertion,
        Perturbation::Padding,
        Perturbation::Reversal,
        Perturbation::Truncation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Perturbation::Identity => "identity",
            Perturbation::AdjacentSwap => "adjacent_swap",
            Perturbation::FirstStepError => "first_step_error",
            Perturbation::RandomDeletion => "random_deletion",
            Perturbation::RandomInsertion => "random_insertion",
            Perturbation::Padding => "padding",
            Perturbation::Reversal => "reversal",
            Perturbation::Truncation => "truncation",
        }
    }
}

/// Produces one predicted sequence per requested kind, in `kinds` order.
pub fn perturbation_suite(
    reference: &ReferencePlan,
    dict: &ActionDictionary,
    kinds: &[Perturbation],
    seed: u64,
) -> Vec<(&'static str, Vec<ActionStep>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = &reference.steps;
    let vocab = dict.steps();
    kinds
        .iter()
        .map(|&kind| {
            let mut out = steps.clone();
            match kind {
                Perturbation::Identity => {}
                Perturbation::AdjacentSwap => {
                    let swappable: Vec<usize> = (0..steps.len().saturating_sub(1))
                        .filter(|&i| steps[i].name != steps[i + 1].name)
                        .collect();
                    if !swappable.is_empty() {
                        let i = swappable[rng.gen_range(0..swappable.len())];
                        out.swap(i, i + 1);
                    }
                }
                Perturbation::FirstStepError => {
                    if !out.is_empty() {
                        out[0] = foreign_action(steps, &vocab);
                    }
                }
                Perturbation::RandomDeletion => {
                    if !out.is_empty() {
                        out.remove(rng.gen_range(0..out.len()));
                    }
                }
                Perturbation::RandomInsertion => {
                    if !vocab.is_empty() {
                        let a = vocab[rng.gen_range(0..vocab.len())].clone();
                        out.insert(rng.gen_range(0..=out.len()), a);
                    }
                }
                Perturbation::Padding => {
                    if !vocab.is_empty() {
                        for _ in 0..steps.len().div_ceil(2).max(1) {
                            out.push(vocab[rng.gen_range(0..vocab.len())].clone());
                        }
                    }
                }
                Perturbation::Reversal => out.reverse(),
                Perturbation::Truncation => out.truncate(steps.len() / 2),
            }
            (kind.label(), out)
        })
        .collect()
}

/// A dictionary action whose name is not in `steps`, or a fabricated one.
fn foreign_action(steps: &[ActionStep], vocab: &[ActionStep]) -> ActionStep {
    let used = |name: &str| steps.iter().any(|s| s.name == name);
    if let Some(a) = vocab.iter().find(|a| !used(&a.name)) {
        return a.clone();
    }
    let next_id = vocab
        .iter()
        .chain(steps)
        .map(|a| a.action_id)
        .max()
        .map_or(0, |m| m + 1);
    let mut name = "do nothing".to_string();
    while used(&name) {
        name.push('!');
    }
    ActionStep {
        action_id: next_id,
        name,
    }
}
