use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, LabConfig};
use crate::model::{ActionDictionary, ActionStep, ReferencePlan};
use crate::{Error, Result};

const VERBS: [&str; 12] = [
    "find", "pick up", "put down", "open", "close", "go to", "slice", "turn on", "turn off",
    "clean", "heat", "cool",
];
const OBJECTS: [&str; 12] = [
    "the apple",
    "the mug",
    "the knife",
    "the table",
    "the fridge",
    "the microwave",
    "the sink",
    "the bread",
    "the lettuce",
    "the cabinet",
    "the cup",
    "the potato",
];

pub(crate) fn name_pool_size() -> usize {
    VERBS.len() * OBJECTS.len()
}

/// A planning task: a per-task dictionary and a reference plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub task_id: String,
    pub action_dictionary: ActionDictionary,
    /// Dictionary actions in the order the policy indexes them.
    pub actions: Vec<ActionStep>,
    pub reference_plan: ReferencePlan,
    pub instruction_seed: u64,
    pub long_horizon: bool,
}

impl ToyTask {
    /// Builds a task from explicit actions and a reference given as
    /// indices into `actions`.
    pub fn new(task_id: &str, actions: Vec<ActionStep>, reference: &[usize]) -> Result<Self> {
        if let Some(&bad) = reference.iter().find(|&&i| i >= actions.len()) {
            return Err(Error::InvalidInput(format!(
                "reference index {bad} out of range for {} actions",
                actions.len()
            )));
        }
        let dict = ActionDictionary::new(
            task_id,
            actions.iter().map(|a| (a.action_id, a.name.clone())),
        )?;
        Ok(Self {
            task_id: task_id.to_owned(),
            action_dictionary: dict,
            reference_plan: ReferencePlan::new(
                reference.iter().map(|&i| actions[i].clone()).collect(),
            ),
            actions,
            instruction_seed: 0,
            long_horizon: false,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.actions.len()
    }

    /// Policy token index of each reference step.
    pub fn reference_tokens(&self) -> Vec<usize> {
        self.reference_plan
            .steps
            .iter()
            .map(|s| {
                self.actions
                    .iter()
                    .position(|a| a == s)
                    .expect("reference action in task")
            })
            .collect()
    }
}

/// Generates `count` tasks with lengths in `min_len..=max_len`, followed by
/// `cfg.long_horizon_tasks` tasks with lengths in the long-horizon range.
pub fn generate_tasks(count: usize, cfg: &LabConfig, seed: u64) -> Result<Vec<ToyTask>> {
    generate_mixed(count, cfg.long_horizon_tasks, cfg, seed)
}

pub(crate) fn generate_mixed(
    easy: usize,
    long: usize,
    cfg: &LabConfig,
    seed: u64,
) -> Result<Vec<ToyTask>> {
    if easy + long == 0 {
        return Err(Error::InvalidInput("task count must be >= 1".into()));
    }
    cfg.validate()?;
    (0..easy + long)
        .map(|i| {
            let long_horizon = i >= easy;
            let (lo, hi) = if long_horizon {
                (cfg.long_min_len, cfg.long_max_len)
            } else {
                (cfg.min_len, cfg.max_len)
            };
            one_task(
                i,
                cfg.vocab_size,
                lo,
                hi,
                long_horizon,
                stream_seed(seed, &[i as u64]),
            )
        })
        .collect()
}

fn one_task(
    index: usize,
    vocab: usize,
    min_len: usize,
    max_len: usize,
    long_horizon: bool,
    task_seed: u64,
) -> Result<ToyTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
    let mut pool: Vec<(usize, usize)> = (0..VERBS.len())
        .flat_map(|v| (0..OBJECTS.len()).map(move |o| (v, o)))
        .collect();
    pool.shuffle(&mut rng);
    // Ids are drawn sparsely so they differ from task to task.
    let mut ids: Vec<u64> = (0..(vocab as u64 * 8).max(32)).collect();
    ids.shuffle(&mut rng);
    let actions: Vec<ActionStep> = pool[..vocab]
        .iter()
        .zip(&ids)
        .map(|(&(v, o), &id)| ActionStep::new(id, &format!("{} {}", VERBS[v], OBJECTS[o])))
        .collect::<Result<_>>()?;
    let n = rng.gen_range(min_len..=max_len);
    let reference: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let task_id = format!("task-{index:03}");
    let mut task = ToyTask::new(&task_id, actions, &reference)?;
    task.instruction_seed = task_seed;
    task.long_horizon = long_horizon;
    Ok(task)
}
