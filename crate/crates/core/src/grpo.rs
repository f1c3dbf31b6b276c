//! Group relative policy optimization.
//!
//! Rewards are standardized within each group of candidates sampled for one
//! prompt, and the policy ascends a clipped surrogate with a k3 KL penalty
//! against a frozen reference policy:
//!
//! ```text
//! A_i = (r_i - mean(r)) / max(std(r), std_floor)
//! J   = 1/N sum_i mean_t [ min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i) - beta k3_t ]
//! rho_t = exp(logp_new_t - logp_old_t)
//! k3_t  = exp(logp_ref_t - logp_new_t) - (logp_ref_t - logp_new_t) - 1
//! ```

use serde::{Deserialize, Serialize};

use crate::model::RewardBreakdown;
use crate::{Error, Result};

/// Log-ratios are clamped to this magnitude before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    #[default]
    LowVarK3,
}

/// Granularity of the importance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioLevel {
    /// Per-token ratios, averaged per candidate.
    #[default]
    Token,
    /// One ratio per candidate from summed log-probs.
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coef: f64,
    pub std_floor: f64,
    pub kl_estimator: KlEstimator,
    pub ratio_level: RatioLevel,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            clip_epsilon: 0.2,
            kl_coef: 0.01,
            std_floor: 1e-8,
            kl_estimator: KlEstimator::LowVarK3,
            ratio_level: RatioLevel::Token,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip_epsilon must be in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config(format!(
                "kl_coef must be >= 0, got {}",
                self.kl_coef
            )));
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return Err(Error::Config(format!(
                "std_floor must be > 0, got {}",
                self.std_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divides by N).
    pub std: f64,
    pub advantages: Vec<f64>,
}

impl GroupAdvantages {
    /// True if every reward in the group is identical.
    pub fn is_degenerate(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

/// Standardizes `rewards` within the group.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<GroupAdvantages> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("reward {bad}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let advantages = if rewards.windows(2).all(|w| w[0] == w[1]) {
        vec![0.0; rewards.len()]
    } else {
        let denom = std.max(cfg.std_floor);
        rewards.iter().map(|r| (r - mean) / denom).collect()
    };
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

fn clamp_log_ratio(x: f64) -> (f64, bool) {
    if x > LOG_RATIO_CLAMP {
        (LOG_RATIO_CLAMP, true)
    } else if x < -LOG_RATIO_CLAMP {
        (-LOG_RATIO_CLAMP, true)
    } else {
        (x, false)
    }
}

/// `min(rho * A, clip(rho, 1-eps, 1+eps) * A)` with `rho = exp(new - old)`.
pub fn clipped_term(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> f64 {
    clipped_term_grad(logp_new, logp_old, advantage, eps).0
}

/// Value and derivative with respect to `logp_new`.
fn clipped_term_grad(logp_new: f64, logp_old: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let (x, clamped) = clamp_log_ratio(logp_new - logp_old);
    let rho = x.exp();
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, if clamped { 0.0 } else { unclipped })
    } else {
        // Only reachable with rho outside the band, where the clip is flat.
        (clipped, 0.0)
    }
}

/// Low-variance k3 estimate of KL(new || ref) for one token.
pub fn kl_penalty(logp_new: f64, logp_ref: f64) -> f64 {
    kl_penalty_grad(logp_new, logp_ref).0
}

fn kl_penalty_grad(logp_new: f64, logp_ref: f64) -> (f64, f64) {
    let (d, clamped) = clamp_log_ratio(logp_ref - logp_new);
    let e = d.exp();
    // d(k3)/d(new) = (e^d - 1) * d(d)/d(new) = -(e^d - 1)
    (e - d - 1.0, if clamped { 0.0 } else { 1.0 - e })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Candidate {
    pub response: String,
    pub breakdown: RewardBreakdown,
    pub reward: f64,
    pub advantage: f64,
    /// Sampled token ids; empty when the candidate did not come from a
    /// [`TokenPolicy`].
    pub tokens: Vec<usize>,
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

/// All candidates sampled for one prompt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutGroup {
    pub prompt_id: String,
    /// Policy-specific conditioning key (the toy policy uses a task index).
    pub context: usize,
    pub candidates: Vec<Candidate>,
}

impl RolloutGroup {
    /// Computes advantages from candidate rewards and stores them.
    pub fn assign_advantages(&mut self, cfg: &GrpoConfig) -> Result<GroupAdvantages> {
        let rewards: Vec<f64> = self.candidates.iter().map(|c| c.reward).collect();
        let adv = group_advantages(&rewards, cfg)?;
        for (c, a) in self.candidates.iter_mut().zip(&adv.advantages) {
            c.advantage = *a;
        }
        Ok(adv)
    }

    fn check_shapes(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidInput(format!(
                "group {} has no candidates",
                self.prompt_id
            )));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            let n = c.logp_new.len();
            if c.logp_old.len() != n
                || c.logp_ref.len() != n
                || (!c.tokens.is_empty() && c.tokens.len() != n)
            {
                return Err(Error::InvalidInput(format!(
                    "group {} candidate {i}: log-prob lengths differ (new {}, old {}, ref {}, tokens {})",
                    self.prompt_id,
                    n,
                    c.logp_old.len(),
                    c.logp_ref.len(),
                    c.tokens.len()
                )));
            }
        }
        Ok(())
    }
}

/// One candidate's contribution before the 1/N average, plus its
/// derivative with respect to each `logp_new` entry.
fn candidate_term(
    logp_new: &[f64],
    logp_old: &[f64],
    logp_ref: &[f64],
    advantage: f64,
    cfg: &GrpoConfig,
) -> (f64, Vec<f64>) {
    let len = logp_new.len();
    if len == 0 {
        return (0.0, Vec::new());
    }
    match cfg.ratio_level {
        RatioLevel::Token => {
            let scale = 1.0 / len as f64;
            let mut value = 0.0;
            let mut sens = Vec::with_capacity(len);
            for t in 0..len {
                let (c, dc) =
                    clipped_term_grad(logp_new[t], logp_old[t], advantage, cfg.clip_epsilon);
                let (k, dk) = kl_penalty_grad(logp_new[t], logp_ref[t]);
                value += c - cfg.kl_coef * k;
                sens.push(scale * (dc - cfg.kl_coef * dk));
            }
            (value * scale, sens)
        }
        RatioLevel::Sequence => {
            let new: f64 = logp_new.iter().sum();
            let old: f64 = logp_old.iter().sum();
            let reference: f64 = logp_ref.iter().sum();
            let (c, dc) = clipped_term_grad(new, old, advantage, cfg.clip_epsilon);
            let (k, dk) = kl_penalty_grad(new, reference);
            (c - cfg.kl_coef * k, vec![dc - cfg.kl_coef * dk; len])
        }
    }
}

fn objective_with(
    group: &RolloutGroup,
    logp_new: &[Vec<f64>],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = group.candidates.len() as f64;
    let mut total = 0.0;
    let mut sens = Vec::with_capacity(group.candidates.len());
    for (c, new) in group.candidates.iter().zip(logp_new) {
        let (v, mut s) = candidate_term(new, &c.logp_old, &c.logp_ref, c.advantage, cfg);
        total += v;
        s.iter_mut().for_each(|x| *x /= n);
        sens.push(s);
    }
    let value = total / n;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective for group {}",
            group.prompt_id
        )));
    }
    Ok((value, sens))
}

/// GRPO objective for one group using the stored `logp_new`.
pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<f64> {
    group.check_shapes()?;
    let new: Vec<Vec<f64>> = group
        .candidates
        .iter()
        .map(|c| c.logp_new.clone())
        .collect();
    Ok(objective_with(group, &new, cfg)?.0)
}

/// Derivative of the objective with respect to every stored `logp_new`.
pub fn objective_logp_sensitivities(
    group: &RolloutGroup,
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<f64>>> {
    group.check_shapes()?;
    let new: Vec<Vec<f64>> = group
        .candidates
        .iter()
        .map(|c| c.logp_new.clone())
        .collect();
    Ok(objective_with(group, &new, cfg)?.1)
}

/// Mean k3 KL over all tokens of the group.
pub fn mean_kl(group: &RolloutGroup) -> f64 {
    let (sum, count) = group
        .candidates
        .iter()
        .flat_map(|c| c.logp_new.iter().zip(&c.logp_ref))
        .fold((0.0, 0usize), |(s, n), (new, r)| {
            (s + kl_penalty(*new, *r), n + 1)
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// A policy over token sequences with differentiable log-probabilities.
pub trait TokenPolicy {
    fn num_params(&self) -> usize;

    /// Log-probability of each token of `tokens` under the policy.
    fn token_logprobs(&self, context: usize, tokens: &[usize]) -> Vec<f64>;

    /// Adds `sum_t upstream[t] * d logp_t / d theta` into `grad`.
    fn accumulate_logprob_grad(
        &self,
        context: usize,
        tokens: &[usize],
        upstream: &[f64],
        grad: &mut [f64],
    );
}

fn current_logps<P: TokenPolicy + ?Sized>(group: &RolloutGroup, policy: &P) -> Vec<Vec<f64>> {
    group
        .candidates
        .iter()
        .map(|c| policy.token_logprobs(group.context, &c.tokens))
        .collect()
}

/// Objective with `logp_new` recomputed from `policy`.
pub fn grpo_objective_under<P: TokenPolicy + ?Sized>(
    group: &RolloutGroup,
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<f64> {
    group.check_shapes()?;
    Ok(objective_with(group, &current_logps(group, policy), cfg)?.0)
}

/// Analytic gradient of the objective with respect to the policy
/// parameters, chaining the log-prob sensitivities through the policy.
pub fn grpo_gradient<P: TokenPolicy + ?Sized>(
    group: &RolloutGroup,
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.num_params()];
    accumulate_grpo_gradient(group, policy, cfg, &mut grad)?;
    Ok(grad)
}

/// Like [`grpo_gradient`] but adds into `grad`; returns the objective.
pub fn accumulate_grpo_gradient<P: TokenPolicy + ?Sized>(
    group: &RolloutGroup,
    policy: &P,
    cfg: &GrpoConfig,
    grad: &mut [f64],
) -> Result<f64> {
    group.check_shapes()?;
    let (value, sens) = objective_with(group, &current_logps(group, policy), cfg)?;
    for (c, s) in group.candidates.iter().zip(&sens) {
        policy.accumulate_logprob_grad(group.context, &c.tokens, s, grad);
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {bad} for group {}",
            group.prompt_id
        )));
    }
    Ok(value)
}
