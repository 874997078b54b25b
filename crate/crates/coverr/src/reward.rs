//! Format and accuracy rewards, assigned per role against the pseudo-label.
//!
//! Each trained rollout earns `r = r_format + r_accuracy`, both binary:
//!
//! - generation and correction rollouts earn the accuracy reward when their
//!   answer equals the pseudo-label;
//! - verification rollouts earn it when their verdict matches the judgment
//!   their record targets (`Correct` for positive records, `Incorrect` for
//!   negative records);
//! - the format reward marks structural validity (always granted to
//!   simulated rollouts, which have no surface form; derived from the text
//!   for ingested ones).
//!
//! When ground truth is available, the same indicator is evaluated against
//! the truth and kept alongside as `oracle_r_accuracy` for diagnostics; it
//! never influences training.

use crate::core::{CanonicalAnswer, Judgment, Role, Rollout};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("verification rollout {sample_index} is missing a {missing}")]
    MalformedVerification {
        sample_index: usize,
        missing: &'static str,
    },
}

/// A rollout with its rewards attached.
#[derive(Clone, Debug)]
pub struct RewardedItem {
    pub rollout: Rollout,
    pub r_format: u8,
    pub r_accuracy: u8,
    /// `r_format + r_accuracy`, in {0, 1, 2}.
    pub r_total: u8,
    /// The accuracy indicator evaluated against ground truth instead of the
    /// pseudo-label, when truth is known. Metrics only.
    pub oracle_r_accuracy: Option<u8>,
}

impl RewardedItem {
    pub fn reward(&self) -> f64 {
        f64::from(self.r_total)
    }

    /// Whether the assigned accuracy reward agrees with the oracle one.
    pub fn reward_matches_oracle(&self) -> Option<bool> {
        self.oracle_r_accuracy.map(|o| o == self.r_accuracy)
    }
}

/// The judgment a verification rollout is trained toward, recovered from the
/// solution it judges: records whose solution hit the pseudo-label target
/// `Correct`, all others `Incorrect`.
pub fn verification_target(
    verification: &Rollout,
    pseudo_label: &CanonicalAnswer,
) -> Result<Judgment, RewardError> {
    let parent = verification
        .parent
        .as_ref()
        .ok_or(RewardError::MalformedVerification {
            sample_index: verification.sample_index,
            missing: "parent solution",
        })?;
    Ok(if parent.answer == *pseudo_label {
        Judgment::Correct
    } else {
        Judgment::Incorrect
    })
}

/// Assign rewards to all of one retained task's training rollouts.
///
/// `truth`, when present, additionally fills `oracle_r_accuracy` with the
/// indicator evaluated against the true answer.
pub fn assign_rewards(
    items: &[Rollout],
    pseudo_label: &CanonicalAnswer,
    truth: Option<&CanonicalAnswer>,
) -> Result<Vec<RewardedItem>, RewardError> {
    items
        .iter()
        .map(|rollout| assign_reward(rollout, pseudo_label, truth))
        .collect()
}

/// Reward one rollout per its role.
pub fn assign_reward(
    rollout: &Rollout,
    pseudo_label: &CanonicalAnswer,
    truth: Option<&CanonicalAnswer>,
) -> Result<RewardedItem, RewardError> {
    let (r_accuracy, oracle_r_accuracy) = match rollout.role {
        Role::Generation | Role::Correction => {
            let hit = u8::from(rollout.answer == *pseudo_label);
            let oracle = truth.map(|t| u8::from(rollout.answer == *t));
            (hit, oracle)
        }
        Role::Verification => {
            let verdict = rollout
                .verdict
                .ok_or(RewardError::MalformedVerification {
                    sample_index: rollout.sample_index,
                    missing: "verdict",
                })?;
            let target = verification_target(rollout, pseudo_label)?;
            let hit = u8::from(verdict == target.desired_verdict());
            let oracle = truth.map(|t| {
                let solution = rollout.parent.as_ref().expect("checked above");
                let oracle_target = if solution.answer == *t {
                    Judgment::Correct
                } else {
                    Judgment::Incorrect
                };
                u8::from(verdict == oracle_target.desired_verdict())
            });
            (hit, oracle)
        }
    };
    let r_format = u8::from(rollout.format_ok);
    Ok(RewardedItem {
        rollout: rollout.clone(),
        r_format,
        r_accuracy,
        r_total: r_format + r_accuracy,
        oracle_r_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{canonicalize_answer, TaskId, Verdict};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn label() -> CanonicalAnswer {
        canonicalize_answer("42")
    }

    fn gen(answer: &str, format_ok: bool) -> Rollout {
        let mut r = Rollout::generation(TaskId::new("t"), canonicalize_answer(answer), 0.5, 0);
        r.format_ok = format_ok;
        r
    }

    fn ver(solution_answer: &str, verdict: Verdict) -> Rollout {
        Rollout {
            task: TaskId::new("t"),
            role: Role::Verification,
            answer: CanonicalAnswer::empty(),
            verdict: Some(verdict),
            parent: Some(Arc::new(gen(solution_answer, true))),
            format_ok: true,
            quality: 0.5,
            sample_index: 0,
            signal: Some(0.5),
        }
    }

    #[test]
    fn generation_hit_with_format_earns_two() {
        // indicator(ans = label) + format = 1 + 1
        let item = assign_reward(&gen("42", true), &label(), None).unwrap();
        assert_eq!((item.r_format, item.r_accuracy, item.r_total), (1, 1, 2));
        assert_eq!(item.oracle_r_accuracy, None);
    }

    #[test]
    fn negative_record_rewarded_for_rejecting() {
        // solution answers 7 != label 42 -> target Incorrect -> verdict 0 earns the reward
        let item = assign_reward(&ver("7", Verdict::Wrong), &label(), None).unwrap();
        assert_eq!(item.r_accuracy, 1);
        let item = assign_reward(&ver("7", Verdict::Correct), &label(), None).unwrap();
        assert_eq!(item.r_accuracy, 0);
    }

    #[test]
    fn positive_record_rewarded_for_accepting() {
        let item = assign_reward(&ver("42", Verdict::Correct), &label(), None).unwrap();
        assert_eq!(item.r_accuracy, 1);
    }

    #[test]
    fn correction_missing_label_earns_zero_accuracy() {
        let mut z = gen("41", true);
        z.role = Role::Correction;
        let item = assign_reward(&z, &label(), None).unwrap();
        assert_eq!(item.r_accuracy, 0);
        assert_eq!(item.r_total, 1); // format only
    }

    #[test]
    fn verification_without_verdict_is_an_error() {
        let mut v = ver("42", Verdict::Correct);
        v.verdict = None;
        assert!(matches!(
            assign_reward(&v, &label(), None),
            Err(RewardError::MalformedVerification { missing: "verdict", .. })
        ));
        let mut v = ver("42", Verdict::Correct);
        v.parent = None;
        assert!(matches!(
            assign_reward(&v, &label(), None),
            Err(RewardError::MalformedVerification { missing: "parent solution", .. })
        ));
    }

    #[test]
    fn oracle_agreement_when_label_is_true() {
        // label == truth: reward and oracle indicators coincide for every item
        let truth = label();
        for rollout in [
            gen("42", true),
            gen("7", true),
            ver("42", Verdict::Correct),
            ver("42", Verdict::Wrong),
            ver("7", Verdict::Wrong),
            ver("7", Verdict::Correct),
        ] {
            let item = assign_reward(&rollout, &label(), Some(&truth)).unwrap();
            assert_eq!(item.reward_matches_oracle(), Some(true));
        }
    }

    #[test]
    fn lucky_hit_agreement_when_label_is_wrong() {
        // label 42, truth 8: a generation answering neither still gets a
        // correct negative reward, so reward and oracle agree exactly.
        let truth = canonicalize_answer("8");
        let item = assign_reward(&gen("3", true), &label(), Some(&truth)).unwrap();
        assert_eq!(item.r_accuracy, 0);
        assert_eq!(item.oracle_r_accuracy, Some(0));
        assert_eq!(item.reward_matches_oracle(), Some(true));

        // while answers hitting the wrong label, or hitting the truth, disagree
        let hit_label = assign_reward(&gen("42", true), &label(), Some(&truth)).unwrap();
        assert_eq!(hit_label.reward_matches_oracle(), Some(false));
        let hit_truth = assign_reward(&gen("8", true), &label(), Some(&truth)).unwrap();
        assert_eq!(hit_truth.reward_matches_oracle(), Some(false));
    }

    proptest! {
        #[test]
        fn totals_stay_in_range(answer in "[0-9]", format_ok in any::<bool>()) {
            let item = assign_reward(&gen(&answer, format_ok), &label(), None).unwrap();
            prop_assert_eq!(item.r_total, item.r_format + item.r_accuracy);
            prop_assert!(item.r_total <= 2);
        }

        #[test]
        fn items_differing_from_both_label_and_truth_always_agree(
            answer in "[0-9]{2}", truth in "[0-9]{2}"
        ) {
            let truth = canonicalize_answer(&truth);
            let item = assign_reward(&gen(&answer, true), &label(), Some(&truth)).unwrap();
            let ans = canonicalize_answer(&answer);
            if ans != label() && ans != truth {
                prop_assert_eq!(item.reward_matches_oracle(), Some(true));
                prop_assert_eq!(item.r_accuracy, 0);
            }
        }
    }
}
