//! Budgeted self-verification of positive samples and the strict-majority
//! consensus filter.
//!
//! A task survives only if a strict majority of the sampled verifications of
//! its positive set accept the pseudo-label. Even splits reject: the filter
//! is deliberately conservative, since its whole purpose is to catch
//! self-consistent errors that look confident to consensus voting. Dropped
//! tasks contribute no training data of any role for the iteration.

use crate::coevolve::VerificationRecord;
use crate::core::{Rollout, TaskId, Verdict};
use rand::seq::SliceRandom;
use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("empty positive set")]
    EmptyPositives,
    #[error("empty verdict list")]
    EmptyVerdicts,
}

/// The filter's decision for one task, with the verifications that made it.
///
/// `budget_used` equals `min(|Y+|, M)`, and `retained` holds exactly when
/// `votes_for > budget_used / 2` with strict inequality.
#[derive(Clone, Debug)]
pub struct FilterDecision {
    pub task: TaskId,
    /// The sampled verification subset, with verdicts, in sampling order.
    /// These records are reused as the positive training set when the task
    /// is retained; they are not regenerated.
    pub verified: Vec<VerificationRecord>,
    pub retained: bool,
    pub votes_for: usize,
    pub budget_used: usize,
}

impl FilterDecision {
    /// Assemble the decision from the already-sampled verification records.
    pub fn from_records(
        task: TaskId,
        verified: Vec<VerificationRecord>,
    ) -> Result<Self, FilterError> {
        let verdicts: Vec<Verdict> = verified.iter().map(|r| r.verdict).collect();
        let retained = consensus_filter(&verdicts)?;
        let votes_for = verdicts.iter().filter(|v| **v == Verdict::Correct).count();
        let budget_used = verified.len();
        Ok(FilterDecision {
            task,
            verified,
            retained,
            votes_for,
            budget_used,
        })
    }

    /// The pseudo-label the verified solutions target. Well-defined because
    /// every verified solution belongs to the positive set.
    pub fn pseudo_label(&self) -> &crate::core::CanonicalAnswer {
        &self.verified[0].solution.answer
    }
}

/// Choose the positive solutions to verify: all of them if the budget
/// covers the set, otherwise a uniform sample of `budget` without
/// replacement. Deterministic under a fixed RNG; returned in original
/// sample order.
pub fn select_verification_subset<R: Rng>(
    positives: &[Rollout],
    budget: usize,
    rng: &mut R,
) -> Result<Vec<Arc<Rollout>>, FilterError> {
    assert!(budget >= 1, "verification budget must be at least 1");
    if positives.is_empty() {
        return Err(FilterError::EmptyPositives);
    }
    let mut ordered: Vec<&Rollout> = positives.iter().collect();
    ordered.sort_by_key(|r| r.sample_index);
    let mut chosen: Vec<&Rollout> = ordered
        .choose_multiple(rng, budget.min(ordered.len()))
        .copied()
        .collect();
    chosen.sort_by_key(|r| r.sample_index);
    Ok(chosen.into_iter().map(|r| Arc::new(r.clone())).collect())
}

/// The consensus test: true iff strictly more than half the verdicts accept.
pub fn consensus_filter(verdicts: &[Verdict]) -> Result<bool, FilterError> {
    if verdicts.is_empty() {
        return Err(FilterError::EmptyVerdicts);
    }
    let votes_for = verdicts.iter().filter(|v| **v == Verdict::Correct).count();
    // Integer form of votes_for > len/2, exact for every size.
    Ok(2 * votes_for > verdicts.len())
}
