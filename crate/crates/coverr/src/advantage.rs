//! Group construction and group-relative advantage normalization.
//!
//! Rewards are normalized within groups of trajectories that are directly
//! comparable:
//!
//! - all generation rollouts of a task form one group (shared prompt);
//! - each correction set forms its own group (its K revisions share the
//!   (task, failed solution, verdict) prefix);
//! - negative verifications form one group per anchor solution (shared
//!   prefix);
//! - positive verifications judge *different* solutions, so no prefix is
//!   shared — but every one targets the same pseudo-label. In
//!   [`GroupingMode::AnswerAnchored`] they are grouped together by that
//!   anchor. [`GroupingMode::Standard`] is the ablation that instead keeps
//!   only the records of one randomly sampled positive solution.
//!
//! Within a group, `advantage = (reward - mean) / std` with the population
//! standard deviation. Groups with no reward variance contribute no
//! gradient: their advantages are all zero.

use crate::core::{CanonicalAnswer, Judgment, Role, TaskId};
use crate::reward::{verification_target, RewardedItem};
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Below this population standard deviation a group counts as
/// zero-variance and yields all-zero advantages.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdvantageError {
    #[error("empty group")]
    EmptyGroup,
    #[error("mixed tasks in group input: expected {expected}, found {found}")]
    MixedTasks { expected: TaskId, found: TaskId },
    #[error("verification item {sample_index} is malformed")]
    MalformedVerification { sample_index: usize },
}

/// What a group is anchored on, beyond task and role.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupAnchor {
    /// The task's whole generation batch.
    Whole,
    /// Verifications grouped by the answer they target.
    Answer(CanonicalAnswer),
    /// Trajectories sharing one concrete prefix, keyed by the sample index
    /// of the shared element (the anchor solution for verifications, the
    /// triggering verification for corrections).
    Prefix(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub task: TaskId,
    pub role: Role,
    pub anchor: GroupAnchor,
}

/// How positive verifications are grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupingMode {
    /// Group all positive verifications by the pseudo-label they target.
    AnswerAnchored,
    /// Ablation: keep only the records of a single randomly sampled positive
    /// solution, grouped by prefix like everything else.
    Standard,
}

/// A normalization group: items, reward statistics, and (once
/// [`normalize`] has run) the per-item advantages.
#[derive(Clone, Debug)]
pub struct AdvantageGroup {
    pub key: GroupKey,
    pub items: Vec<RewardedItem>,
    pub mean: f64,
    /// Population standard deviation of the rewards.
    pub std: f64,
    /// Aligned with `items`; empty until normalized.
    pub advantages: Vec<f64>,
}

/// Partition one retained task's rewarded items into advantage groups.
///
/// `pseudo_label` identifies which verifications target the majority answer.
/// The RNG is consulted only in [`GroupingMode::Standard`], to sample the
/// single positive solution the ablation keeps.
pub fn group_items<R: Rng>(
    items: Vec<RewardedItem>,
    pseudo_label: &CanonicalAnswer,
    mode: GroupingMode,
    rng: &mut R,
) -> Result<Vec<AdvantageGroup>, AdvantageError> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let task = items[0].rollout.task.clone();
    for item in &items {
        if item.rollout.task != task {
            return Err(AdvantageError::MixedTasks {
                expected: task,
                found: item.rollout.task.clone(),
            });
        }
    }

    // The ablation keeps only positive-verification records of one sampled
    // solution; decide which solution up front.
    let standard_mode_keeper: Option<usize> = if mode == GroupingMode::Standard {
        let mut solutions: Vec<usize> = items
            .iter()
            .filter(|item| is_positive_verification(item, pseudo_label))
            .filter_map(|item| item.rollout.parent.as_ref().map(|p| p.sample_index))
            .collect();
        solutions.sort_unstable();
        solutions.dedup();
        if solutions.is_empty() {
            None
        } else {
            Some(solutions[rng.gen_range(0..solutions.len())])
        }
    } else {
        None
    };

    let mut groups: BTreeMap<GroupKey, Vec<RewardedItem>> = BTreeMap::new();
    for item in items {
        let key = match item.rollout.role {
            Role::Generation => GroupKey {
                task: task.clone(),
                role: Role::Generation,
                anchor: GroupAnchor::Whole,
            },
            Role::Correction => {
                let trigger = item
                    .rollout
                    .parent
                    .as_ref()
                    .ok_or(AdvantageError::MalformedVerification {
                        sample_index: item.rollout.sample_index,
                    })?
                    .sample_index;
                GroupKey {
                    task: task.clone(),
                    role: Role::Correction,
                    anchor: GroupAnchor::Prefix(trigger),
                }
            }
            Role::Verification => {
                let target = verification_target(&item.rollout, pseudo_label).map_err(|_| {
                    AdvantageError::MalformedVerification {
                        sample_index: item.rollout.sample_index,
                    }
                })?;
                let solution_index = item
                    .rollout
                    .parent
                    .as_ref()
                    .expect("target derivation checked the parent")
                    .sample_index;
                match (target, mode) {
                    (Judgment::Correct, GroupingMode::AnswerAnchored) => GroupKey {
                        task: task.clone(),
                        role: Role::Verification,
                        anchor: GroupAnchor::Answer(pseudo_label.clone()),
                    },
                    (Judgment::Correct, GroupingMode::Standard) => {
                        if standard_mode_keeper != Some(solution_index) {
                            continue; // dropped from training this step
                        }
                        GroupKey {
                            task: task.clone(),
                            role: Role::Verification,
                            anchor: GroupAnchor::Prefix(solution_index),
                        }
                    }
                    (Judgment::Incorrect, _) => GroupKey {
                        task: task.clone(),
                        role: Role::Verification,
                        anchor: GroupAnchor::Prefix(solution_index),
                    },
                }
            }
        };
        groups.entry(key).or_default().push(item);
    }

    Ok(groups
        .into_iter()
        .map(|(key, items)| AdvantageGroup {
            key,
            items,
            mean: 0.0,
            std: 0.0,
            advantages: Vec::new(),
        })
        .collect())
}

/// Fill a group's advantages: `(reward - mean) / std` with population
/// statistics, all zeros when the variance is (numerically) zero.
///
/// Statistics are accumulated with Welford's online recurrence.
pub fn normalize(mut group: AdvantageGroup) -> Result<AdvantageGroup, AdvantageError> {
    if group.items.is_empty() {
        return Err(AdvantageError::EmptyGroup);
    }
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for (count, item) in group.items.iter().enumerate() {
        let x = item.reward();
        let delta = x - mean;
        mean += delta / (count as f64 + 1.0);
        m2 += delta * (x - mean);
    }
    let std = (m2 / group.items.len() as f64).sqrt();
    group.mean = mean;
    group.std = std;
    group.advantages = if std <= STD_EPSILON {
        vec![0.0; group.items.len()]
    } else {
        group.items.iter().map(|i| (i.reward() - mean) / std).collect()
    };
    Ok(group)
}

/// Convenience: group then normalize, returning groups in key order.
pub fn group_and_normalize<R: Rng>(
    items: Vec<RewardedItem>,
    pseudo_label: &CanonicalAnswer,
    mode: GroupingMode,
    rng: &mut R,
) -> Result<Vec<AdvantageGroup>, AdvantageError> {
    group_items(items, pseudo_label, mode, rng)?
        .into_iter()
        .map(normalize)
        .collect()
}

fn is_positive_verification(item: &RewardedItem, pseudo_label: &CanonicalAnswer) -> bool {
    item.rollout.role == Role::Verification
        && item
            .rollout
            .parent
            .as_ref()
            .is_some_and(|p| p.answer == *pseudo_label)
}
