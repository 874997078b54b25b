//! Majority-vote pseudo-label drafting and positive/negative partition.
//!
//! Given the N generation rollouts sampled for one task, the most frequent
//! canonical answer becomes the draft pseudo-label. Rollouts that hit the
//! pseudo-label form the positive set, everything else the negative set.
//! Ties break toward the lexicographically smallest answer so that runs are
//! reproducible.

use crate::core::{CanonicalAnswer, Role, Rollout, TaskId};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VotingError {
    #[error("no rollouts")]
    NoRollouts,
    #[error("mixed tasks: expected {expected}, found {found}")]
    MixedTasks { expected: TaskId, found: TaskId },
    #[error("rollout {sample_index} has role {role:?}, expected Generation")]
    NotGeneration { sample_index: usize, role: Role },
}

/// The outcome of majority voting over one task's generation rollouts.
#[derive(Clone, Debug)]
pub struct VotingResult {
    pub task: TaskId,
    /// The most frequent answer (ties broken lexicographically).
    pub pseudo_label: CanonicalAnswer,
    /// Answer histogram over all n rollouts.
    pub histogram: BTreeMap<CanonicalAnswer, usize>,
    /// |positives| / n, in (0, 1].
    pub majority_ratio: f64,
    /// Rollouts whose answer equals the pseudo-label.
    pub positives: Vec<Rollout>,
    /// Everything else.
    pub negatives: Vec<Rollout>,
    /// Total rollout count n.
    pub n: usize,
}

/// Draft a pseudo-label from one task's generation rollouts and partition
/// them around it.
///
/// All rollouts must belong to one task and have role `Generation`.
pub fn majority_vote(rollouts: Vec<Rollout>) -> Result<VotingResult, VotingError> {
    let first = rollouts.first().ok_or(VotingError::NoRollouts)?;
    let task = first.task.clone();
    for r in &rollouts {
        if r.task != task {
            return Err(VotingError::MixedTasks {
                expected: task,
                found: r.task.clone(),
            });
        }
        if r.role != Role::Generation {
            return Err(VotingError::NotGeneration {
                sample_index: r.sample_index,
                role: r.role,
            });
        }
    }

    let mut histogram: BTreeMap<CanonicalAnswer, usize> = BTreeMap::new();
    for r in &rollouts {
        *histogram.entry(r.answer.clone()).or_insert(0) += 1;
    }
    // BTreeMap iterates in ascending key order, so keeping the first answer
    // with a strictly greater count lands on the lexicographically smallest
    // answer among ties.
    let mut pseudo_label = CanonicalAnswer::empty();
    let mut best = 0usize;
    for (answer, count) in &histogram {
        if *count > best {
            best = *count;
            pseudo_label = answer.clone();
        }
    }

    let n = rollouts.len();
    let (positives, negatives): (Vec<_>, Vec<_>) =
        rollouts.into_iter().partition(|r| r.answer == pseudo_label);
    let majority_ratio = positives.len() as f64 / n as f64;

    Ok(VotingResult {
        task,
        pseudo_label,
        histogram,
        majority_ratio,
        positives,
        negatives,
        n,
    })
}

/// Uniformly sample min(limit, n) rollouts without replacement from the full
/// voted set (positives and negatives alike) for policy training.
///
/// Deterministic under a fixed RNG; the selection is returned in original
/// sample order.
pub fn downsample_for_training<R: Rng>(
    result: &VotingResult,
    limit: usize,
    rng: &mut R,
) -> Vec<Rollout> {
    assert!(limit >= 1, "downsample limit must be at least 1");
    let mut all: Vec<&Rollout> = result.positives.iter().chain(result.negatives.iter()).collect();
    all.sort_by_key(|r| r.sample_index);
    let mut chosen: Vec<Rollout> = all
        .choose_multiple(rng, limit.min(all.len()))
        .map(|r| (*r).clone())
        .collect();
    chosen.sort_by_key(|r| r.sample_index);
    chosen
}
