//! Group Relative Policy Optimization on a categorical policy.
//!
//! For each question a group of `N` responses is drawn from the snapshot
//! policy and scored. Rewards are standardized within the group,
//!
//! ```text
//! A_i = (r_i - mean(r)) / std(r)
//! ```
//!
//! and the policy ascends the clipped surrogate with a KL anchor:
//!
//! ```text
//! J = (1/N) Σ_i min(s_i A_i, clip(s_i, 1-ε, 1+ε) A_i) - β KL(π_θ || π_ref)
//! s_i = π_θ(o_i|q) / π_old(o_i|q)
//! ```
//!
//! No critic is involved. For the toy policy the gradient of `J` with respect
//! to the logits is computed in closed form.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RewardScorer;
use crate::toy_env::{ToyEnvironment, ToyError, ToyPolicy};

/// Population std at or below this is treated as a degenerate group.
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group too small: {0} samples (need at least 2)")]
    GroupTooSmall(usize),
    #[error("unbounded KL: reference assigns zero probability to template {0}")]
    UnboundedKl(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] ToyError),
}

/// One sampled response with its log-probability under the snapshot policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSample {
    pub template_id: usize,
    pub response_text: String,
    pub logprob_old: f64,
    pub reward: f64,
}

/// All samples answer the same question and share a logit context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub question_id: String,
    pub context: usize,
    pub samples: Vec<CandidateSample>,
}

impl SampleGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Gradient steps per sampled batch before the snapshot refreshes.
    pub inner_epochs: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            epsilon: 0.2,
            beta: 0.04,
            learning_rate: 1e-5,
            iterations: 500,
            seed: 0,
            inner_epochs: 1,
        }
    }
}

impl GrpoConfig {
    /// Settings for the built-in toy task. The logit parameterization needs a
    /// far larger step than a fine-tuned network does.
    pub fn toy() -> Self {
        Self {
            learning_rate: 0.5,
            seed: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2", self.group_size));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be >= 1".into());
        }
        Ok(())
    }
}

/// Group-standardized advantages using the population standard deviation.
/// A group whose rewards are all equal gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !std.is_finite() {
        return Err(GrpoError::NumericalFailure("non-finite reward".into()));
    }
    if std <= DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn importance_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// d clipped_term / d ratio. Zero when the clipped branch is the minimum.
fn clipped_term_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Exact `KL(p || q)` from log-probabilities.
pub fn kl_categorical(log_p: &[f64], log_q: &[f64]) -> Result<f64, GrpoError> {
    let mut kl = 0.0;
    for (k, (&lp, &lq)) in log_p.iter().zip(log_q).enumerate() {
        let p = lp.exp();
        if p == 0.0 {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Err(GrpoError::UnboundedKl(k));
        }
        kl += p * (lp - lq);
    }
    Ok(kl.max(0.0))
}

pub fn kl_reference(policy: &ToyPolicy, reference: &ToyPolicy, context: usize) -> Result<f64, GrpoError> {
    kl_categorical(&policy.log_probs(context)?, &reference.log_probs(context)?)
}

/// Per-sample KL estimate `r - ln r - 1` with `r = π_ref / π_θ`, averaged over
/// samples drawn from `π_θ`. For policies whose support cannot be enumerated.
pub fn kl_sample_estimate(logp_policy: &[f64], logp_reference: &[f64]) -> f64 {
    if logp_policy.is_empty() {
        return 0.0;
    }
    let total: f64 = logp_policy
        .iter()
        .zip(logp_reference)
        .map(|(lp, lr)| {
            let log_ratio = lr - lp;
            log_ratio.exp() - log_ratio - 1.0
        })
        .sum();
    total / logp_policy.len() as f64
}

fn check_group(group: &SampleGroup) -> Result<(), GrpoError> {
    if group.samples.len() < 2 {
        return Err(GrpoError::GroupTooSmall(group.samples.len()));
    }
    Ok(())
}

/// Surrogate objective of one group under `policy`.
pub fn grpo_objective(
    group: &SampleGroup,
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    check_group(group)?;
    let advantages = compute_advantages(&group.rewards())?;
    group_objective(group, &advantages, policy, reference, cfg)
}

fn group_objective(
    group: &SampleGroup,
    advantages: &[f64],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let log_probs = policy.log_probs(group.context)?;
    let n = group.samples.len() as f64;
    let surrogate: f64 = group
        .samples
        .iter()
        .zip(advantages)
        .map(|(s, &a)| clipped_term(importance_ratio(log_probs[s.template_id], s.logprob_old), a, cfg.epsilon))
        .sum::<f64>()
        / n;
    let kl = if cfg.beta > 0.0 {
        kl_reference(policy, reference, group.context)?
    } else {
        0.0
    };
    Ok(surrogate - cfg.beta * kl)
}

/// Mean objective over `groups`.
pub fn batch_objective(
    groups: &[SampleGroup],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in groups {
        total += grpo_objective(g, policy, reference, cfg)?;
    }
    Ok(total / groups.len() as f64)
}

/// Analytic gradient of [`batch_objective`] with respect to every logit.
pub fn objective_gradient(
    groups: &[SampleGroup],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<f64>>, GrpoError> {
    let advantages = groups
        .iter()
        .map(|g| {
            check_group(g)?;
            compute_advantages(&g.rewards())
        })
        .collect::<Result<Vec<_>, _>>()?;
    gradient_with_advantages(groups, &advantages, policy, reference, cfg)
}

fn gradient_with_advantages(
    groups: &[SampleGroup],
    advantages: &[Vec<f64>],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<f64>>, GrpoError> {
    let k = policy.num_templates();
    let inv_t = 1.0 / policy.temperature();
    let mut grad = vec![vec![0.0; k]; policy.num_contexts()];
    if groups.is_empty() {
        return Ok(grad);
    }
    let group_weight = 1.0 / groups.len() as f64;

    // KL gradients are shared by all groups of a context.
    let mut kl_grad: HashMap<usize, Vec<f64>> = HashMap::new();

    for (group, adv) in groups.iter().zip(advantages) {
        let c = group.context;
        let log_p = policy.log_probs(c)?;
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let w = group_weight / group.samples.len() as f64;
        let row = &mut grad[c];
        for (s, &a) in group.samples.iter().zip(adv) {
            let ratio = importance_ratio(log_p[s.template_id], s.logprob_old);
            let slope = clipped_term_slope(ratio, a, cfg.epsilon);
            if slope == 0.0 {
                continue;
            }
            // d ratio / d z_j = ratio * (1[j = k] - p_j) / T
            let scale = w * slope * ratio * inv_t;
            for (j, g) in row.iter_mut().enumerate() {
                let indicator = if j == s.template_id { 1.0 } else { 0.0 };
                *g += scale * (indicator - p[j]);
            }
        }
        if cfg.beta > 0.0 {
            if let Entry::Vacant(slot) = kl_grad.entry(c) {
                let log_q = reference.log_probs(c)?;
                let kl = kl_categorical(&log_p, &log_q)?;
                // d KL / d z_j = p_j (log p_j - log q_j - KL) / T
                let g: Vec<f64> = (0..k)
                    .map(|j| if p[j] == 0.0 { 0.0 } else { p[j] * (log_p[j] - log_q[j] - kl) * inv_t })
                    .collect();
                slot.insert(g);
            }
            for (gj, kj) in row.iter_mut().zip(&kl_grad[&c]) {
                *gj -= group_weight * cfg.beta * kj;
            }
        }
    }
    Ok(grad)
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_answer: f64,
    pub mean_consistency: f64,
    /// Batch objective at the updated policy, against the batch's snapshot.
    pub objective: f64,
    pub kl_to_reference: f64,
    pub entropy: f64,
    pub epsilon: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub iterations: Vec<IterationStats>,
}

impl TrainStats {
    pub fn to_jsonl(&self) -> String {
        self.iterations
            .iter()
            .map(|s| serde_json::to_string(s).expect("stats serialize") + "\n")
            .collect()
    }

    /// Mean of `f` over the last `window` iterations.
    pub fn tail_mean(&self, window: usize, f: impl Fn(&IterationStats) -> f64) -> Option<f64> {
        let n = self.iterations.len().min(window);
        if n == 0 {
            return None;
        }
        Some(self.iterations[self.iterations.len() - n..].iter().map(f).sum::<f64>() / n as f64)
    }
}

/// Outcome of a single update, before reward means are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub objective: f64,
    pub kl_to_reference: f64,
    pub entropy: f64,
}

/// One gradient-ascent update of the mean objective over `groups`, repeated
/// `cfg.inner_epochs` times against the same snapshot log-probabilities.
pub fn grpo_step(
    policy: &ToyPolicy,
    groups: &[SampleGroup],
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
) -> Result<(ToyPolicy, StepStats), GrpoError> {
    let advantages = groups
        .iter()
        .map(|g| {
            check_group(g)?;
            compute_advantages(&g.rewards())
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut next = policy.clone();
    for _ in 0..cfg.inner_epochs {
        let grad = gradient_with_advantages(groups, &advantages, &next, reference, cfg)?;
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(GrpoError::NumericalFailure("non-finite gradient".into()));
        }
        for (c, row) in grad.iter().enumerate() {
            for (z, g) in next.logits_mut(c).iter_mut().zip(row) {
                *z += cfg.learning_rate * g;
            }
        }
    }
    if next.all_logits().iter().flatten().any(|z| !z.is_finite()) {
        return Err(GrpoError::NumericalFailure("non-finite logits".into()));
    }

    let mut objective = 0.0;
    for (g, a) in groups.iter().zip(&advantages) {
        objective += group_objective(g, a, &next, reference, cfg)?;
    }
    if !groups.is_empty() {
        objective /= groups.len() as f64;
    }
    let contexts = next.num_contexts();
    let mut kl = 0.0;
    let mut entropy = 0.0;
    for c in 0..contexts {
        kl += kl_reference(&next, reference, c)?;
        entropy += next.entropy(c)?;
    }
    Ok((
        next,
        StepStats {
            objective,
            kl_to_reference: kl / contexts as f64,
            entropy: entropy / contexts as f64,
        },
    ))
}

/// Runs `cfg.iterations` rounds of sample, score, update on `env`, starting
/// from the uniform policy, which also serves as the frozen reference.
/// Deterministic for a given `cfg.seed`.
pub fn train(
    env: &ToyEnvironment,
    cfg: &GrpoConfig,
    scorer: &dyn RewardScorer,
) -> Result<(ToyPolicy, TrainStats), GrpoError> {
    cfg.validate()?;
    let reference = env.initial_policy();
    let mut policy = reference.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = TrainStats::default();
    // Rendering is deterministic, so each (question, template) scores once.
    let mut cache: HashMap<(usize, usize), crate::reward::RewardBreakdown> = HashMap::new();

    for iteration in 0..cfg.iterations {
        let mut groups = Vec::with_capacity(env.questions().len());
        let (mut sum_r, mut sum_f, mut sum_a, mut sum_c, mut count) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for qi in 0..env.questions().len() {
            let mut group = env.sample_group(&policy, qi, cfg.group_size, &mut rng)?;
            for s in &mut group.samples {
                let b = *cache
                    .entry((qi, s.template_id))
                    .or_insert_with(|| scorer.score(&env.questions()[qi], &s.response_text));
                s.reward = b.composite;
                sum_r += b.composite;
                sum_f += b.format;
                sum_a += b.answer;
                sum_c += b.consistency;
                count += 1;
            }
            groups.push(group);
        }
        let (next, step) = grpo_step(&policy, &groups, &reference, cfg)?;
        policy = next;
        let n = count as f64;
        stats.iterations.push(IterationStats {
            iteration,
            mean_reward: sum_r / n,
            mean_format: sum_f / n,
            mean_answer: sum_a / n,
            mean_consistency: sum_c / n,
            objective: step.objective,
            kl_to_reference: step.kl_to_reference,
            entropy: step.entropy,
            epsilon: cfg.epsilon,
            beta: cfg.beta,
        });
    }
    Ok((policy, stats))
}
