use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{stream_seed, ToyPolicy, ToyTask};
use crate::accuracy::AccuracyVariant;
use crate::grpo::{
    accumulate_grpo_gradient, mean_kl, Candidate, GrpoConfig, RolloutGroup, TokenPolicy,
};
use crate::model::{ActionStep, PlanResponse};
use crate::parser::render_response;
use crate::scoring::{score_candidate, ScoringConfig};
use crate::{Error, Result};

const THINK: &str = "I look at the scene, recall the goal, and lay out the actions in order.";

/// Renders sampled tokens as a complete tagged plan response.
pub fn render_candidate(task: &ToyTask, tokens: &[usize]) -> String {
    let steps: Vec<ActionStep> = tokens
        .iter()
        .filter(|&&t| t < task.vocab_size())
        .map(|&t| task.actions[t].clone())
        .collect();
    let plan = steps
        .iter()
        .map(|s| s.name.as_str())
        .collect::<Vec<_>>()
        .join(", then ");
    let resp = PlanResponse::from_steps(
        "A simulated room with the objects named in the action list.",
        "Work through the task one action at a time.",
        &plan,
        &steps,
    );
    render_response(THINK, &resp)
}

/// Samples `n` candidates for `task` (policy context `context`), renders
/// and scores them. Old log-probs equal the sampling policy's; reference
/// log-probs come from `reference`. Advantages are left at 0.
#[allow(clippy::too_many_arguments)]
pub fn sample_group(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    task: &ToyTask,
    context: usize,
    n: usize,
    scoring: &ScoringConfig,
    seed: u64,
) -> RolloutGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = (0..n)
        .map(|_| {
            let (tokens, logps) = policy.sample(context, &mut rng);
            let response = render_candidate(task, &tokens);
            let (_, breakdown) = score_candidate(
                &response,
                &task.action_dictionary,
                &task.reference_plan.steps,
                scoring,
            );
            Candidate {
                reward: breakdown.r_overall,
                logp_ref: reference.token_logprobs(context, &tokens),
                logp_old: logps.clone(),
                logp_new: logps,
                response,
                breakdown,
                tokens,
                advantage: 0.0,
            }
        })
        .collect();
    RolloutGroup {
        prompt_id: task.task_id.clone(),
        context,
        candidates,
    }
}

/// Per-step training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean of the accuracy variant being optimized.
    pub mean_accuracy: f64,
    pub mean_format: f64,
    pub mean_overall: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub kl_mean: f64,
    pub mean_lcs: f64,
    pub mean_step: f64,
    pub mean_prefix: f64,
    /// Fraction of groups whose rewards were all equal.
    pub zero_variance_fraction: f64,
    /// Fraction of candidates reproducing the reference exactly.
    pub success_rate: f64,
    /// Mean LCS reward over long-horizon tasks, if any.
    pub long_mean_lcs: Option<f64>,
}

const CSV_HEADER: [&str; 13] = [
    "step",
    "mean_accuracy",
    "mean_format",
    "mean_overall",
    "objective",
    "grad_norm",
    "kl_mean",
    "mean_lcs",
    "mean_step",
    "mean_prefix",
    "zero_variance_fraction",
    "success_rate",
    "long_mean_lcs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub variant: AccuracyVariant,
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    /// Mean of `metric` over the first `window` records.
    pub fn first_window_mean(&self, window: usize, metric: impl Fn(&TrainRecord) -> f64) -> f64 {
        let w = window.min(self.records.len()).max(1);
        self.records.iter().take(w).map(&metric).sum::<f64>() / w as f64
    }

    /// Mean of `metric` over the last `window` records.
    pub fn last_window_mean(&self, window: usize, metric: impl Fn(&TrainRecord) -> f64) -> f64 {
        let w = window.min(self.records.len()).max(1);
        self.records.iter().rev().take(w).map(&metric).sum::<f64>() / w as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            let f = |x: f64| format!("{x:.8}");
            w.write_record([
                r.step.to_string(),
                f(r.mean_accuracy),
                f(r.mean_format),
                f(r.mean_overall),
                f(r.objective),
                f(r.grad_norm),
                f(r.kl_mean),
                f(r.mean_lcs),
                f(r.mean_step),
                f(r.mean_prefix),
                f(r.zero_variance_fraction),
                f(r.success_rate),
                r.long_mean_lcs.map(f).unwrap_or_default(),
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

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub policy: ToyPolicy,
}

struct GroupResult {
    objective: f64,
    grad: Vec<(usize, f64)>,
    group: RolloutGroup,
    degenerate: bool,
    kl: f64,
}

/// Runs GRPO on the toy policy for `steps` steps.
///
/// Each step samples one group per task (in parallel, with per-task RNG
/// streams derived from `seed`), scores it, standardizes rewards within the
/// group, and ascends the summed per-group objective with learning rate
/// `lr`. Old log-probs are those of the sampling policy (one optimization
/// epoch per batch) and the reference policy is the initial policy.
#[allow(clippy::too_many_arguments)]
pub fn train(
    tasks: &[ToyTask],
    mut policy: ToyPolicy,
    grpo: &GrpoConfig,
    scoring: &ScoringConfig,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    grpo.validate()?;
    scoring.validate()?;
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("lr must be >= 0, got {lr}")));
    }
    if tasks.is_empty() || policy.num_contexts() != tasks.len() {
        return Err(Error::InvalidInput(format!(
            "policy has {} contexts for {} tasks",
            policy.num_contexts(),
            tasks.len()
        )));
    }
    let reference = policy.clone();
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let results: Vec<GroupResult> = tasks
            .par_iter()
            .enumerate()
            .map(|(ctx, task)| {
                let group_seed = stream_seed(seed, &[step as u64, ctx as u64]);
                let mut group = sample_group(
                    &policy,
                    &reference,
                    task,
                    ctx,
                    grpo.group_size,
                    scoring,
                    group_seed,
                );
                let adv = group.assign_advantages(grpo)?;
                let mut dense = vec![0.0; policy.num_params()];
                let objective = accumulate_grpo_gradient(&group, &policy, grpo, &mut dense)?;
                let grad = dense
                    .into_iter()
                    .enumerate()
                    .filter(|(_, g)| *g != 0.0)
                    .collect();
                let kl = mean_kl(&group);
                group.candidates.iter_mut().for_each(|c| c.response.clear());
                Ok(GroupResult {
                    objective,
                    grad,
                    degenerate: adv.is_degenerate(),
                    kl,
                    group,
                })
            })
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; policy.num_params()];
        for r in &results {
            for &(i, g) in &r.grad {
                grad[i] += g;
            }
        }
        let record = summarize(step, tasks, &results, &grad, scoring.accuracy.variant);
        if !record.objective.is_finite() || !record.grad_norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at step {step}"
            )));
        }
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p += lr * g;
        }
        records.push(record);
    }
    Ok(TrainOutcome {
        report: TrainReport {
            variant: scoring.accuracy.variant,
            records,
        },
        policy,
    })
}

fn summarize(
    step: usize,
    tasks: &[ToyTask],
    results: &[GroupResult],
    grad: &[f64],
    variant: AccuracyVariant,
) -> TrainRecord {
    let mut sums = [0.0f64; 6];
    let mut count = 0usize;
    let mut successes = 0usize;
    let (mut long_sum, mut long_count) = (0.0, 0usize);
    for (task, r) in tasks.iter().zip(results) {
        for c in &r.group.candidates {
            let b = &c.breakdown;
            for (s, v) in sums.iter_mut().zip([
                b.accuracy(variant),
                b.r_format,
                b.r_overall,
                b.r_lcs,
                b.r_step,
                b.r_prefix,
            ]) {
                *s += v;
            }
            count += 1;
            if b.lcs_length == b.reference_length
                && c.tokens.iter().filter(|&&t| t < task.vocab_size()).count() == b.reference_length
            {
                successes += 1;
            }
            if task.long_horizon {
                long_sum += b.r_lcs;
                long_count += 1;
            }
        }
    }
    let groups = results.len() as f64;
    let mean = |i: usize| sums[i] / count as f64;
    TrainRecord {
        step,
        mean_accuracy: mean(0),
        mean_format: mean(1),
        mean_overall: mean(2),
        objective: results.iter().map(|r| r.objective).sum::<f64>() / groups,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        kl_mean: results.iter().map(|r| r.kl).sum::<f64>() / groups,
        mean_lcs: mean(3),
        mean_step: mean(4),
        mean_prefix: mean(5),
        zero_variance_fraction: results.iter().filter(|r| r.degenerate).count() as f64 / groups,
        success_rate: successes as f64 / count as f64,
        long_mean_lcs: (long_count > 0).then(|| long_sum / long_count as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::{grpo_gradient, grpo_objective_under};
    use crate::lab::{generate_tasks, LabConfig};
    use crate::parser::{extract_steps, parse_output};
    use rand::Rng;

    fn setup() -> (Vec<ToyTask>, ToyPolicy) {
        let cfg = LabConfig::default();
        let tasks = generate_tasks(3, &cfg, 0).unwrap();
        let policy = ToyPolicy::for_tasks(&tasks, &cfg);
        (tasks, policy)
    }

    #[test]
    fn rendered_candidates_round_trip_and_score_full_format() {
        let (tasks, policy) = setup();
        let g = sample_group(
            &policy,
            &policy,
            &tasks[0],
            0,
            50,
            &ScoringConfig::default(),
            9,
        );
        for c in &g.candidates {
            assert_eq!(c.breakdown.r_format, 1.0, "{}", c.response);
            let steps = extract_steps(&parse_output(&c.response));
            let expected: Vec<ActionStep> = c
                .tokens
                .iter()
                .filter(|&&t| t < tasks[0].vocab_size())
                .map(|&t| tasks[0].actions[t].clone())
                .collect();
            assert_eq!(steps, expected);
        }
    }

    #[test]
    fn deterministic_policy_gives_identical_candidates() {
        let (tasks, mut policy) = setup();
        for pos in 0..policy.cap(0) {
            *policy.logit_mut(0, pos, pos % 6) = 1e3;
        }
        let g = sample_group(
            &policy,
            &policy,
            &tasks[0],
            0,
            5,
            &ScoringConfig::default(),
            1,
        );
        assert!(g.candidates.windows(2).all(|w| w[0].tokens == w[1].tokens));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        // V = 4, cap 1, stop allowed: each of the 5 tokens has p = 1/5.
        let policy = ToyPolicy::uniform(&[(4, 1)], 1.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            let (t, _) = policy.sample(0, &mut rng);
            assert_eq!(t.len(), 1);
            counts[t[0]] += 1;
        }
        let p = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - draws as f64 * p).abs() < 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn recorded_logps_match_replay() {
        let (tasks, mut policy) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in policy.params_mut() {
            *p = rng.gen_range(-2.0..2.0);
        }
        let g = sample_group(
            &policy,
            &policy,
            &tasks[1],
            1,
            20,
            &ScoringConfig::default(),
            5,
        );
        for c in &g.candidates {
            let replay = policy.token_logprobs(1, &c.tokens);
            for (a, b) in c.logp_new.iter().zip(&replay) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_advantage_group_on_reference_has_zero_gradient() {
        let (tasks, policy) = setup();
        let mut g = sample_group(
            &policy,
            &policy,
            &tasks[0],
            0,
            5,
            &ScoringConfig::default(),
            3,
        );
        for c in &mut g.candidates {
            c.advantage = 0.0;
        }
        let grad = grpo_gradient(&g, &policy, &GrpoConfig::default()).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_on_toy_policy() {
        let (tasks, mut policy) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in policy.params_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        let reference = policy.clone();
        let mut g = sample_group(
            &policy,
            &reference,
            &tasks[2],
            2,
            5,
            &ScoringConfig::default(),
            2,
        );
        g.assign_advantages(&GrpoConfig::default()).unwrap();
        // Move the current policy off the sampling point so ratios and KL are live.
        for p in policy.params_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let cfg = GrpoConfig::default();
        let grad = grpo_gradient(&g, &policy, &cfg).unwrap();
        let h = 1e-6;
        for (i, &analytic) in grad.iter().enumerate() {
            let mut up = policy.clone();
            up.params_mut()[i] += h;
            let mut dn = policy.clone();
            dn.params_mut()[i] -= h;
            let fd = (grpo_objective_under(&g, &up, &cfg).unwrap()
                - grpo_objective_under(&g, &dn, &cfg).unwrap())
                / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-5 * fd.abs().max(1e-3),
                "param {i}: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn two_action_reinforce_identity() {
        // One context, two actions, cap 1, no stop: logp of token k is
        // log softmax; with beta = 0 and rho = 1 the gradient equals
        // (1/N) sum_i A_i * d logp_i / d theta.
        let policy = ToyPolicy::uniform(&[(2, 1)], 1.0, 1);
        let mut g = RolloutGroup {
            prompt_id: "p".into(),
            context: 0,
            candidates: vec![],
        };
        for (tok, adv) in [(0usize, 1.0), (1usize, -1.0)] {
            let lp = policy.token_logprobs(0, &[tok]);
            g.candidates.push(Candidate {
                tokens: vec![tok],
                logp_new: lp.clone(),
                logp_old: lp.clone(),
                logp_ref: lp,
                advantage: adv,
                ..Default::default()
            });
        }
        let cfg = GrpoConfig {
            kl_coef: 0.0,
            ..Default::default()
        };
        let grad = grpo_gradient(&g, &policy, &cfg).unwrap();
        // d logp(0)/d l0 = 1 - 0.5, d logp(0)/d l1 = -0.5; symmetric for token 1.
        let expected = [
            0.5 * (1.0 * 0.5 - 1.0 * -0.5),
            0.5 * (1.0 * -0.5 - 1.0 * 0.5),
            0.0,
        ];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15, "{grad:?}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_policy_unchanged() {
        let (tasks, policy) = setup();
        let out = train(
            &tasks,
            policy.clone(),
            &GrpoConfig::default(),
            &ScoringConfig::default(),
            5,
            0.0,
            1,
        )
        .unwrap();
        assert_eq!(out.policy, policy);
        assert_eq!(out.report.records.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let (tasks, policy) = setup();
        let run = || {
            train(
                &tasks,
                policy.clone(),
                &GrpoConfig::default(),
                &ScoringConfig::default(),
                10,
                0.1,
                3,
            )
            .unwrap()
            .report
            .to_csv()
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_arguments() {
        let (tasks, policy) = setup();
        let g = GrpoConfig::default();
        let s = ScoringConfig::default();
        assert!(train(&tasks, policy.clone(), &g, &s, 0, 0.1, 0).is_err());
        assert!(train(&tasks, policy.clone(), &g, &s, 1, -1.0, 0).is_err());
        assert!(train(&tasks[..1], policy, &g, &s, 1, 0.1, 0).is_err());
    }
}
