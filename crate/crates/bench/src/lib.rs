//! Fixtures shared by the criterion benches.

use planreward_core::lab::{generate_tasks, sample_group, LabConfig, ToyPolicy, ToyTask};
use planreward_core::{
    render_response, ActionStep, GrpoConfig, PlanResponse, RolloutGroup, ScoringConfig,
};

/// Two pseudo-random action sequences of length `n` over `vocab` names.
pub fn sequences(n: usize, vocab: u64) -> (Vec<ActionStep>, Vec<ActionStep>) {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % vocab
    };
    let mut make = || {
        (0..n)
            .map(|_| {
                let id = next();
                ActionStep::new(id, &format!("action {id}")).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let a = make();
    let b = make();
    (a, b)
}

/// A rendered response for `steps`.
pub fn rendered(steps: &[ActionStep]) -> String {
    let resp = PlanResponse::from_steps(
        "A kitchen with a counter and a fridge.",
        "Collect the items first, then use the appliances.",
        "Find, pick up, and place each item.",
        steps,
    );
    render_response("Plan the steps in order.", &resp)
}

/// One toy task with a reference of length `n` and a randomized policy group.
pub fn rollout(n: usize, group_size: usize) -> (ToyTask, ToyPolicy, RolloutGroup, GrpoConfig) {
    let lab = LabConfig {
        min_len: n,
        max_len: n,
        vocab_size: 8,
        ..Default::default()
    };
    let tasks = generate_tasks(1, &lab, 11).unwrap();
    let mut policy = ToyPolicy::for_tasks(&tasks, &lab);
    for (i, p) in policy.params_mut().iter_mut().enumerate() {
        *p = ((i * 37) % 17) as f64 / 17.0 - 0.5;
    }
    let cfg = GrpoConfig {
        group_size,
        ..Default::default()
    };
    let mut group = sample_group(
        &policy,
        &policy,
        &tasks[0],
        0,
        group_size,
        &ScoringConfig::default(),
        5,
    );
    group.assign_advantages(&cfg).unwrap();
    let task = tasks.into_iter().next().unwrap();
    (task, policy, group, cfg)
}
