//! Contrastive verification sets and self-correction collection.
//!
//! For a retained task, the filter-stage verifications of the pseudo-label's
//! solutions become the positive set (target `Correct`). The negative set
//! repeatedly judges a single anchor: the negative solution whose answer has
//! the lowest vote count, targeting `Incorrect`. Enforcing equal set sizes
//! keeps verifier training balanced; the unbalanced mode exists only to
//! reproduce the collapse that imbalance causes and sits behind an explicit
//! multiplier.
//!
//! Every judgment that rejects a solution triggers K revision rollouts
//! conditioned on (task, failed solution, verdict).

use crate::core::{CanonicalAnswer, Judgment, Role, Rollout, TaskId, Verdict};
use crate::filter::FilterDecision;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoevolveError {
    #[error("task {0} was dropped by the consensus filter")]
    TaskDropped(TaskId),
    #[error("verification trajectory is malformed: {0}")]
    MalformedTrajectory(&'static str),
}

/// One verification event: a judgment of `solution` together with the
/// judgment it is trained toward.
#[derive(Clone, Debug)]
pub struct VerificationRecord {
    pub task: TaskId,
    /// The generation rollout being judged.
    pub solution: Arc<Rollout>,
    /// What the verifier actually said.
    pub verdict: Verdict,
    /// `Correct` for the positive set, `Incorrect` for the negative set.
    pub target: Judgment,
    /// Position within the task's verification sequence (positives first,
    /// then negatives). Keys the correction set this record may trigger.
    pub ordinal: usize,
    /// The verification trajectory itself: role `Verification`, carrying the
    /// verdict and the solution as parent.
    pub trajectory: Rollout,
}

impl VerificationRecord {
    /// Wrap a verification trajectory. The trajectory must carry a verdict
    /// and reference the solution it judges.
    pub fn from_trajectory(
        trajectory: Rollout,
        target: Judgment,
    ) -> Result<Self, CoevolveError> {
        if trajectory.role != Role::Verification {
            return Err(CoevolveError::MalformedTrajectory("role is not Verification"));
        }
        let verdict = trajectory
            .verdict
            .ok_or(CoevolveError::MalformedTrajectory("missing verdict"))?;
        let solution = trajectory
            .parent
            .clone()
            .ok_or(CoevolveError::MalformedTrajectory("missing parent solution"))?;
        Ok(VerificationRecord {
            task: trajectory.task.clone(),
            ordinal: trajectory.sample_index,
            solution,
            verdict,
            target,
            trajectory,
        })
    }

    /// Whether the verdict matches the trained-toward judgment.
    pub fn verdict_matches_target(&self) -> bool {
        self.verdict == self.target.desired_verdict()
    }
}

/// The K revisions triggered by one rejecting verification.
#[derive(Clone, Debug)]
pub struct CorrectionSet {
    pub task: TaskId,
    /// The solution the verifier rejected.
    pub failed_attempt: Arc<Rollout>,
    /// Ordinal of the rejecting verification record; keys this set's
    /// advantage group.
    pub trigger_ordinal: usize,
    /// Exactly K correction rollouts (when sampled; offline dumps may carry
    /// fewer).
    pub revisions: Vec<Rollout>,
}

impl CorrectionSet {
    /// The feedback that triggered the set is always a rejection.
    pub fn feedback_verdict(&self) -> Verdict {
        Verdict::Wrong
    }
}

/// Reuse the filter-stage verifications as the positive training set.
///
/// The records were already sampled once for the consensus test; generating
/// them again would double the verifier cost for no benefit, so they pass
/// through with target `Correct` unchanged.
pub fn build_positive_set(
    decision: &FilterDecision,
) -> Result<Vec<VerificationRecord>, CoevolveError> {
    if !decision.retained {
        return Err(CoevolveError::TaskDropped(decision.task.clone()));
    }
    Ok(decision.verified.clone())
}

/// Pick the contrastive negative anchor: among the negative rollouts, one
/// whose answer has the minimal vote count. Answer-level ties break
/// lexicographically; within the chosen answer the rollout with the lowest
/// sample index wins. Returns `None` when the vote was unanimous.
pub fn select_negative_anchor(
    negatives: &[Rollout],
    histogram: &BTreeMap<CanonicalAnswer, usize>,
) -> Option<Arc<Rollout>> {
    let mut best: Option<(&Rollout, usize)> = None;
    for r in negatives {
        let count = histogram.get(&r.answer).copied().unwrap_or(0);
        let better = match best {
            None => true,
            Some((cur, cur_count)) => {
                (count, r.answer.as_str(), r.sample_index)
                    < (cur_count, cur.answer.as_str(), cur.sample_index)
            }
        };
        if better {
            best = Some((r, count));
        }
    }
    best.map(|(r, _)| Arc::new(r.clone()))
}

/// Sample `size` verifier judgments of the negative anchor, all targeting
/// `Incorrect`. In balanced operation `size` equals the positive set size;
/// the unbalanced ablation passes a multiplied size.
///
/// `verify` produces the j-th verification trajectory of the anchor;
/// ordinals continue after the positive set so records stay uniquely keyed
/// within the task.
pub fn build_negative_set<F>(
    task: &TaskId,
    anchor: &Arc<Rollout>,
    size: usize,
    start_ordinal: usize,
    mut verify: F,
) -> Result<Vec<VerificationRecord>, CoevolveError>
where
    F: FnMut(&Arc<Rollout>, usize) -> Option<Rollout>,
{
    assert!(size >= 1, "negative set size must be at least 1");
    let mut records = Vec::with_capacity(size);
    for j in 0..size {
        let Some(trajectory) = verify(anchor, start_ordinal + j) else {
            break; // offline dumps may run out of judgments
        };
        debug_assert_eq!(&trajectory.task, task);
        records.push(VerificationRecord::from_trajectory(trajectory, Judgment::Incorrect)?);
    }
    Ok(records)
}

/// Collect K revision rollouts for every record whose verdict rejects.
///
/// `revise` samples the corrections for one rejecting record; records whose
/// verdict accepts produce nothing.
pub fn collect_corrections<'a, F>(
    records: impl IntoIterator<Item = &'a VerificationRecord>,
    k: usize,
    mut revise: F,
) -> Result<Vec<CorrectionSet>, CoevolveError>
where
    F: FnMut(&VerificationRecord, usize) -> Vec<Rollout>,
{
    assert!(k >= 1, "correction count must be at least 1");
    let mut sets = Vec::new();
    for record in records {
        if record.verdict != Verdict::Wrong {
            continue;
        }
        let revisions = revise(record, k);
        if revisions.is_empty() {
            continue; // offline dumps may lack revisions for a record
        }
        sets.push(CorrectionSet {
            task: record.task.clone(),
            failed_attempt: record.solution.clone(),
            trigger_ordinal: record.ordinal,
            revisions,
        });
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::canonicalize_answer;
    use crate::filter::FilterDecision;

    fn task() -> TaskId {
        TaskId::new("t0")
    }

    fn gen(answer: &str, idx: usize) -> Rollout {
        Rollout::generation(task(), canonicalize_answer(answer), 0.5, idx)
    }

    fn ver(solution: &Arc<Rollout>, verdict: Verdict, ordinal: usize) -> Rollout {
        Rollout {
            task: task(),
            role: Role::Verification,
            answer: CanonicalAnswer::empty(),
            verdict: Some(verdict),
            parent: Some(solution.clone()),
            format_ok: true,
            quality: solution.quality,
            sample_index: ordinal,
            signal: Some(solution.quality),
        }
    }

    fn decision(verdict_bits: &[u8]) -> FilterDecision {
        let records: Vec<VerificationRecord> = verdict_bits
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let sol = Arc::new(gen("a", i));
                VerificationRecord::from_trajectory(
                    ver(&sol, Verdict::from_bool(*b == 1), i),
                    Judgment::Correct,
                )
                .unwrap()
            })
            .collect();
        FilterDecision::from_records(task(), records).unwrap()
    }

    #[test]
    fn positive_set_reuses_filter_records() {
        let d = decision(&[1, 1, 1, 1, 1, 1, 1, 0]);
        assert!(d.retained);
        let vplus = build_positive_set(&d).unwrap();
        assert_eq!(vplus.len(), 8);
        // verdict pattern passes through untouched
        let bits: Vec<u8> = vplus.iter().map(|r| r.verdict.as_bit()).collect();
        assert_eq!(bits, vec![1, 1, 1, 1, 1, 1, 1, 0]);
        assert!(vplus.iter().all(|r| r.target == Judgment::Correct));

        let singleton = decision(&[1]);
        assert_eq!(build_positive_set(&singleton).unwrap().len(), 1);
    }

    #[test]
    fn positive_set_errors_on_dropped_task() {
        let d = decision(&[0, 0, 1]);
        assert!(!d.retained);
        assert!(matches!(build_positive_set(&d), Err(CoevolveError::TaskDropped(_))));
    }

    #[test]
    fn negative_anchor_takes_least_frequent_answer() {
        // Y- answers {b: 3, c: 1} => anchor answers "c"
        let negatives: Vec<Rollout> =
            vec![gen("b", 0), gen("b", 1), gen("b", 2), gen("c", 3)];
        let mut histogram = BTreeMap::new();
        histogram.insert(canonicalize_answer("a"), 5);
        histogram.insert(canonicalize_answer("b"), 3);
        histogram.insert(canonicalize_answer("c"), 1);
        let anchor = select_negative_anchor(&negatives, &histogram).unwrap();
        assert_eq!(anchor.answer.as_str(), "c");
    }

    #[test]
    fn negative_anchor_breaks_ties_lexicographically_then_by_index() {
        let negatives: Vec<Rollout> = vec![gen("c", 0), gen("b", 1), gen("b", 2), gen("c", 3)];
        let mut histogram = BTreeMap::new();
        histogram.insert(canonicalize_answer("b"), 2);
        histogram.insert(canonicalize_answer("c"), 2);
        let anchor = select_negative_anchor(&negatives, &histogram).unwrap();
        assert_eq!(anchor.answer.as_str(), "b");
        assert_eq!(anchor.sample_index, 1); // lowest index among the b's
    }

    #[test]
    fn negative_anchor_none_when_unanimous() {
        let histogram = BTreeMap::from([(canonicalize_answer("a"), 4)]);
        assert!(select_negative_anchor(&[], &histogram).is_none());
    }

    #[test]
    fn negative_set_matches_requested_size() {
        let anchor = Arc::new(gen("c", 9));
        for (size, expect) in [(8usize, 8usize), (1, 1), (32, 32)] {
            let records = build_negative_set(&task(), &anchor, size, 8, |sol, ord| {
                Some(ver(sol, Verdict::Wrong, ord))
            })
            .unwrap();
            assert_eq!(records.len(), expect);
            assert!(records.iter().all(|r| r.target == Judgment::Incorrect));
            assert!(records.iter().all(|r| r.solution.sample_index == 9));
        }
    }

    #[test]
    fn corrections_trigger_only_on_rejections() {
        let sols: Vec<Arc<Rollout>> = (0..4).map(|i| Arc::new(gen("a", i))).collect();
        let records: Vec<VerificationRecord> = [1u8, 0, 0, 0]
            .iter()
            .zip(&sols)
            .enumerate()
            .map(|(i, (b, sol))| {
                VerificationRecord::from_trajectory(
                    ver(sol, Verdict::from_bool(*b == 1), i),
                    Judgment::Correct,
                )
                .unwrap()
            })
            .collect();

        // K=6 with one rejecting record
        let sets = collect_corrections(&records[..2], 6, |rec, k| {
            (0..k)
                .map(|i| Rollout {
                    task: rec.task.clone(),
                    role: Role::Correction,
                    answer: canonicalize_answer("a"),
                    verdict: None,
                    parent: Some(Arc::new(rec.trajectory.clone())),
                    format_ok: true,
                    quality: 0.5,
                    sample_index: i,
                    signal: None,
                })
                .collect()
        })
        .unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].revisions.len(), 6);
        assert_eq!(sets[0].feedback_verdict(), Verdict::Wrong);

        // all verdicts accept -> nothing
        let accepting: Vec<VerificationRecord> = sols
            .iter()
            .enumerate()
            .map(|(i, sol)| {
                VerificationRecord::from_trajectory(ver(sol, Verdict::Correct, i), Judgment::Correct)
                    .unwrap()
            })
            .collect();
        assert!(collect_corrections(&accepting, 6, |_, _| vec![]).unwrap().is_empty());

        // 3 rejecting records with K=2 -> 3 sets of 2
        let sets = collect_corrections(&records, 2, |rec, k| {
            (0..k)
                .map(|i| Rollout {
                    task: rec.task.clone(),
                    role: Role::Correction,
                    answer: canonicalize_answer("b"),
                    verdict: None,
                    parent: Some(Arc::new(rec.trajectory.clone())),
                    format_ok: true,
                    quality: 0.5,
                    sample_index: i,
                    signal: None,
                })
                .collect()
        })
        .unwrap();
        assert_eq!(sets.len(), 3);
        assert!(sets.iter().all(|s| s.revisions.len() == 2));
        // count identity: one set per rejecting record
        let rejecting = records.iter().filter(|r| r.verdict == Verdict::Wrong).count();
        assert_eq!(sets.len(), rejecting);
    }
}
