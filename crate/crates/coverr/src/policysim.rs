//! Synthetic, trainable generator and verifier policies.
//!
//! The trained model is replaced by the smallest pair of policies that still
//! exercises the whole training-signal pipeline:
//!
//! - a **generator**: one softmax distribution over a small answer space per
//!   task. Some tasks start with a distractor answer whose logit exceeds the
//!   truth's, which is exactly the self-consistent-error regime consensus
//!   voting cannot escape.
//! - a **verifier**: a one-feature logistic discriminator. Each solution
//!   carries a latent quality scalar whose distribution depends on whether
//!   the answer is actually correct; the verifier observes quality plus
//!   noise and accepts with `logistic(weight * signal + bias)`.
//!
//! Updates are plain advantage-weighted log-likelihood ascent. No clipping,
//! no KL term: the simulator is single-step on-policy, so there is no
//! importance ratio to clip.

use crate::advantage::AdvantageGroup;
use crate::core::{CanonicalAnswer, Role, Rollout, TaskId, Verdict};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Spread of the latent quality distribution around its
/// correctness-conditioned mean.
pub const QUALITY_SPREAD: f64 = 0.1;

/// Initial logit advantage of the true answer on non-distractor tasks.
/// Chosen so that clean tasks vote correctly from step zero, mirroring
/// typical majority-vote label accuracy before any training.
pub const CLEAN_TRUTH_MARGIN: f64 = 1.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicySimError {
    #[error("voting needs at least 2 rollouts, got {0}")]
    VotingUndefined(usize),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("answer {answer} is not in the answer space of task {task}")]
    UnknownAnswer { task: TaskId, answer: String },
    #[error("answer space of size 1 cannot be renormalized after an exclusion")]
    AnswerSpaceTooSmall,
    #[error("correction requires a rejecting verification parent")]
    NotARejection,
    #[error("verification item {0} carries no observed signal")]
    MissingSignal(usize),
    #[error("verification item {0} carries no verdict")]
    MissingVerdict(usize),
    #[error("diverged: non-finite gradient")]
    Diverged,
}

/// One synthetic task: a small answer space, the true answer, and how
/// strongly a wrong answer is favored at initialization.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub task: TaskId,
    pub answer_space: Vec<CanonicalAnswer>,
    pub truth: CanonicalAnswer,
    /// 0 for clean tasks; otherwise the initial logit of the distractor
    /// answer (the truth starts at 0 on distractor tasks).
    pub distractor_strength: f64,
}

/// The generator's per-task answer distribution.
#[derive(Clone, Debug)]
pub struct TaskPolicy {
    pub answers: Vec<CanonicalAnswer>,
    pub logits: Vec<f64>,
}

impl TaskPolicy {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn answer_index(&self, answer: &CanonicalAnswer) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }
}

/// Tabular softmax generator: one answer distribution per task.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub tasks: BTreeMap<TaskId, TaskPolicy>,
    /// How far apart the quality distributions of correct and incorrect
    /// solutions sit: correct answers draw quality from
    /// N(0.5 + coupling/2, spread), incorrect ones from
    /// N(0.5 - coupling/2, spread), clamped to [0, 1].
    pub quality_coupling: f64,
}

impl GeneratorModel {
    pub fn policy(&self, task: &TaskId) -> Result<&TaskPolicy, PolicySimError> {
        self.tasks.get(task).ok_or_else(|| PolicySimError::UnknownTask(task.clone()))
    }

    /// Mean probability mass the generator puts on the true answer,
    /// averaged over the suite.
    pub fn mean_truth_probability(&self, suite: &[SyntheticTask]) -> f64 {
        let mut total = 0.0;
        for task in suite {
            if let Some(policy) = self.tasks.get(&task.task) {
                if let Some(idx) = policy.answer_index(&task.truth) {
                    total += policy.probabilities()[idx];
                }
            }
        }
        total / suite.len() as f64
    }
}

/// One-feature logistic verifier: P(accept | solution) =
/// logistic(weight * (quality + noise term) + bias).
#[derive(Clone, Debug, PartialEq)]
pub struct VerifierModel {
    pub weight: f64,
    pub bias: f64,
    /// Standard deviation of the observation noise, > 0.
    pub noise: f64,
}

impl VerifierModel {
    pub fn new(noise: f64) -> Self {
        assert!(noise > 0.0, "observation noise must be positive");
        VerifierModel { weight: 0.0, bias: 0.0, noise }
    }

    pub fn accept_probability(&self, signal: f64) -> f64 {
        logistic(self.weight * signal + self.bias)
    }
}

/// Parameters for building a synthetic task suite.
#[derive(Clone, Debug)]
pub struct SuiteParams {
    pub tasks: usize,
    pub answer_space: usize,
    pub distractor_fraction: f64,
    pub distractor_strength: f64,
    pub quality_coupling: f64,
}

/// Build a task suite and the matching freshly initialized generator.
///
/// The first `round(distractor_fraction * tasks)` tasks are distractor
/// tasks (all logits 0 except the distractor answer at
/// `distractor_strength`); the rest are clean (truth at
/// [`CLEAN_TRUTH_MARGIN`], everything else 0). Truth and distractor answers
/// are drawn from the RNG, so suites differ across seeds while the
/// clean/distractor split stays exact.
pub fn build_suite<R: Rng>(
    params: &SuiteParams,
    rng: &mut R,
) -> (Vec<SyntheticTask>, GeneratorModel) {
    assert!(params.answer_space >= 3 && params.answer_space <= 10);
    let answers: Vec<CanonicalAnswer> = (0..params.answer_space)
        .map(|i| crate::core::canonicalize_answer(&i.to_string()))
        .collect();
    let n_distractor =
        (params.distractor_fraction * params.tasks as f64).round() as usize;

    let mut suite = Vec::with_capacity(params.tasks);
    let mut model_tasks = BTreeMap::new();
    for i in 0..params.tasks {
        let id = TaskId::from(i);
        let truth_idx = rng.gen_range(0..answers.len());
        let is_distractor = i < n_distractor && params.answer_space >= 2;
        let mut logits = vec![0.0; answers.len()];
        let strength = if is_distractor {
            let mut d = rng.gen_range(0..answers.len() - 1);
            if d >= truth_idx {
                d += 1; // distractor is any answer but the truth
            }
            logits[d] = params.distractor_strength;
            params.distractor_strength
        } else {
            logits[truth_idx] = CLEAN_TRUTH_MARGIN;
            0.0
        };
        suite.push(SyntheticTask {
            task: id.clone(),
            answer_space: answers.clone(),
            truth: answers[truth_idx].clone(),
            distractor_strength: strength,
        });
        model_tasks.insert(id, TaskPolicy { answers: answers.clone(), logits });
    }
    (suite, GeneratorModel { tasks: model_tasks, quality_coupling: params.quality_coupling })
}

/// Sample N generation rollouts for a task: answers i.i.d. from the task's
/// softmax, qualities from the correctness-conditioned distribution.
pub fn sample_generation<R: Rng>(
    gen: &GeneratorModel,
    task: &SyntheticTask,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>, PolicySimError> {
    if n < 2 {
        return Err(PolicySimError::VotingUndefined(n));
    }
    let policy = gen.policy(&task.task)?;
    let probs = policy.probabilities();
    let mut rollouts = Vec::with_capacity(n);
    for i in 0..n {
        let idx = sample_categorical(&probs, rng);
        let answer = policy.answers[idx].clone();
        let quality = sample_quality(answer == task.truth, gen.quality_coupling, rng);
        rollouts.push(Rollout::generation(task.task.clone(), answer, quality, i));
    }
    Ok(rollouts)
}

/// Sample one binary verdict for a solution:
/// Bernoulli(logistic(weight * (quality + eta) + bias)) with
/// eta ~ Normal(0, noise).
pub fn sample_verdict<R: Rng>(ver: &VerifierModel, rollout: &Rollout, rng: &mut R) -> Verdict {
    sample_verdict_with_signal(ver, rollout, rng).0
}

/// Like [`sample_verdict`], but also returns the observed signal so the
/// judgment can be trained on later.
pub fn sample_verdict_with_signal<R: Rng>(
    ver: &VerifierModel,
    rollout: &Rollout,
    rng: &mut R,
) -> (Verdict, f64) {
    let eta = Normal::new(0.0, ver.noise).expect("noise > 0").sample(rng);
    let signal = rollout.quality + eta;
    let p = ver.accept_probability(signal);
    let verdict = Verdict::from_bool(rng.gen_range(0.0..1.0) < p);
    (verdict, signal)
}

/// Sample the full verification trajectory for a solution: verdict, signal,
/// and parent link, ready to wrap into a record.
pub fn sample_verification<R: Rng>(
    ver: &VerifierModel,
    solution: &Arc<Rollout>,
    ordinal: usize,
    rng: &mut R,
) -> Rollout {
    let (verdict, signal) = sample_verdict_with_signal(ver, solution, rng);
    Rollout {
        task: solution.task.clone(),
        role: Role::Verification,
        answer: CanonicalAnswer::empty(),
        verdict: Some(verdict),
        parent: Some(solution.clone()),
        format_ok: true,
        quality: solution.quality,
        sample_index: ordinal,
        signal: Some(signal),
    }
}

/// Sample K revisions of a rejected solution. The generator conditions on
/// the rejection by zeroing the failed answer's probability mass and
/// renormalizing over the rest of the answer space.
///
/// `failed` is the rejecting verification trajectory (verdict 0, parent =
/// the failed solution).
pub fn sample_correction<R: Rng>(
    gen: &GeneratorModel,
    task: &SyntheticTask,
    failed: &Rollout,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>, PolicySimError> {
    if failed.role != Role::Verification || failed.verdict != Some(Verdict::Wrong) {
        return Err(PolicySimError::NotARejection);
    }
    let solution = failed.parent.as_ref().ok_or(PolicySimError::NotARejection)?;
    let policy = gen.policy(&task.task)?;
    if policy.answers.len() < 2 {
        return Err(PolicySimError::AnswerSpaceTooSmall);
    }
    let excluded = policy
        .answer_index(&solution.answer)
        .ok_or_else(|| PolicySimError::UnknownAnswer {
            task: task.task.clone(),
            answer: solution.answer.to_string(),
        })?;
    let probs = renormalized_probabilities(&policy.logits, excluded);
    let parent = Arc::new(failed.clone());
    let mut revisions = Vec::with_capacity(k);
    for i in 0..k {
        let idx = sample_categorical(&probs, rng);
        let answer = policy.answers[idx].clone();
        let quality = sample_quality(answer == task.truth, gen.quality_coupling, rng);
        revisions.push(Rollout {
            task: task.task.clone(),
            role: Role::Correction,
            answer,
            verdict: None,
            parent: Some(parent.clone()),
            format_ok: true,
            quality,
            sample_index: i,
            signal: None,
        });
    }
    Ok(revisions)
}

/// Apply one advantage-weighted log-likelihood ascent step to both models.
///
/// Generator logits move by `lr * sum_i A_i * grad log pi(answer_i)` per
/// task (softmax score-function gradient; corrections use the
/// exclusion-renormalized distribution). The verifier's weight and bias move
/// by `lr * sum_j A_j * grad log pi(verdict_j)` evaluated at each judgment's
/// observed signal. Deterministic given inputs.
pub fn apply_update(
    gen: &mut GeneratorModel,
    ver: &mut VerifierModel,
    groups: &[AdvantageGroup],
    lr: f64,
) -> Result<(), PolicySimError> {
    let mut logit_grads: BTreeMap<TaskId, Vec<f64>> = BTreeMap::new();
    let mut grad_weight = 0.0f64;
    let mut grad_bias = 0.0f64;

    for group in groups {
        for (item, &advantage) in group.items.iter().zip(&group.advantages) {
            if advantage == 0.0 {
                continue;
            }
            let rollout = &item.rollout;
            match rollout.role {
                Role::Generation => {
                    let policy = gen.policy(&rollout.task)?;
                    let idx = policy.answer_index(&rollout.answer).ok_or_else(|| {
                        PolicySimError::UnknownAnswer {
                            task: rollout.task.clone(),
                            answer: rollout.answer.to_string(),
                        }
                    })?;
                    let probs = policy.probabilities();
                    let grad = logit_grads
                        .entry(rollout.task.clone())
                        .or_insert_with(|| vec![0.0; probs.len()]);
                    for (g, p) in grad.iter_mut().zip(&probs) {
                        *g -= advantage * p;
                    }
                    grad[idx] += advantage;
                }
                Role::Correction => {
                    let policy = gen.policy(&rollout.task)?;
                    let idx = policy.answer_index(&rollout.answer).ok_or_else(|| {
                        PolicySimError::UnknownAnswer {
                            task: rollout.task.clone(),
                            answer: rollout.answer.to_string(),
                        }
                    })?;
                    let excluded = correction_excluded_index(policy, rollout)?;
                    let probs = renormalized_probabilities(&policy.logits, excluded);
                    let grad = logit_grads
                        .entry(rollout.task.clone())
                        .or_insert_with(|| vec![0.0; probs.len()]);
                    for (j, (g, p)) in grad.iter_mut().zip(&probs).enumerate() {
                        if j != excluded {
                            *g -= advantage * p;
                        }
                    }
                    grad[idx] += advantage;
                }
                Role::Verification => {
                    let signal = rollout
                        .signal
                        .ok_or(PolicySimError::MissingSignal(rollout.sample_index))?;
                    let verdict = rollout
                        .verdict
                        .ok_or(PolicySimError::MissingVerdict(rollout.sample_index))?;
                    let p = ver.accept_probability(signal);
                    let coef = match verdict {
                        Verdict::Correct => advantage * (1.0 - p),
                        Verdict::Wrong => -advantage * p,
                    };
                    grad_weight += coef * signal;
                    grad_bias += coef;
                }
            }
        }
    }

    if !grad_weight.is_finite() || !grad_bias.is_finite() {
        return Err(PolicySimError::Diverged);
    }
    for grad in logit_grads.values() {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PolicySimError::Diverged);
        }
    }

    for (task, grad) in logit_grads {
        let policy = gen.tasks.get_mut(&task).expect("gradients only for known tasks");
        for (logit, g) in policy.logits.iter_mut().zip(grad) {
            *logit += lr * g;
        }
    }
    ver.weight += lr * grad_weight;
    ver.bias += lr * grad_bias;
    Ok(())
}

/// The advantage-weighted log-likelihood the update ascends:
/// `sum_i A_i * log pi(outcome_i)`. Exposed so gradient checks can compare
/// the analytic update against finite differences of this scalar.
pub fn advantage_weighted_objective(
    gen: &GeneratorModel,
    ver: &VerifierModel,
    groups: &[AdvantageGroup],
) -> Result<f64, PolicySimError> {
    let mut total = 0.0f64;
    for group in groups {
        for (item, &advantage) in group.items.iter().zip(&group.advantages) {
            let rollout = &item.rollout;
            let log_prob = match rollout.role {
                Role::Generation => {
                    let policy = gen.policy(&rollout.task)?;
                    let idx = policy.answer_index(&rollout.answer).ok_or_else(|| {
                        PolicySimError::UnknownAnswer {
                            task: rollout.task.clone(),
                            answer: rollout.answer.to_string(),
                        }
                    })?;
                    generation_log_prob(policy, idx)
                }
                Role::Correction => {
                    let policy = gen.policy(&rollout.task)?;
                    let idx = policy.answer_index(&rollout.answer).ok_or_else(|| {
                        PolicySimError::UnknownAnswer {
                            task: rollout.task.clone(),
                            answer: rollout.answer.to_string(),
                        }
                    })?;
                    let excluded = correction_excluded_index(policy, rollout)?;
                    correction_log_prob(policy, idx, excluded)
                }
                Role::Verification => {
                    let signal = rollout
                        .signal
                        .ok_or(PolicySimError::MissingSignal(rollout.sample_index))?;
                    let verdict = rollout
                        .verdict
                        .ok_or(PolicySimError::MissingVerdict(rollout.sample_index))?;
                    verification_log_prob(ver, signal, verdict)
                }
            };
            total += advantage * log_prob;
        }
    }
    Ok(total)
}

pub fn generation_log_prob(policy: &TaskPolicy, answer_index: usize) -> f64 {
    softmax(&policy.logits)[answer_index].ln()
}

pub fn correction_log_prob(policy: &TaskPolicy, answer_index: usize, excluded: usize) -> f64 {
    renormalized_probabilities(&policy.logits, excluded)[answer_index].ln()
}

pub fn verification_log_prob(ver: &VerifierModel, signal: f64, verdict: Verdict) -> f64 {
    let p = ver.accept_probability(signal);
    match verdict {
        Verdict::Correct => p.ln(),
        Verdict::Wrong => (1.0 - p).ln(),
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the answer space with one index's mass removed.
fn renormalized_probabilities(logits: &[f64], excluded: usize) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != excluded)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, l)| if i == excluded { 0.0 } else { (l - max).exp() })
        .collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    exps
}

fn correction_excluded_index(
    policy: &TaskPolicy,
    correction: &Rollout,
) -> Result<usize, PolicySimError> {
    let verification = correction.parent.as_ref().ok_or(PolicySimError::NotARejection)?;
    let solution = verification.parent.as_ref().ok_or(PolicySimError::NotARejection)?;
    policy
        .answer_index(&solution.answer)
        .ok_or_else(|| PolicySimError::UnknownAnswer {
            task: correction.task.clone(),
            answer: solution.answer.to_string(),
        })
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_quality<R: Rng>(correct: bool, coupling: f64, rng: &mut R) -> f64 {
    let mean = 0.5 + if correct { coupling / 2.0 } else { -coupling / 2.0 };
    let q = Normal::new(mean, QUALITY_SPREAD).expect("spread > 0").sample(rng);
    q.clamp(0.0, 1.0)
}
