//! Ground-truth-aware diagnostics: label and reward accuracy, filter rates,
//! verifier recalls, and output diversity.
//!
//! These quantities never feed back into training; they exist to observe
//! whether the label-free signal stays healthy. Rates with an empty
//! denominator are reported as absent, never as zero, so downstream plots
//! cannot mistake "no data" for "zero rate".

use crate::coevolve::VerificationRecord;
use crate::core::{CanonicalAnswer, Role, TaskId};
use crate::filter::FilterDecision;
use crate::reward::RewardedItem;
use crate::voting::VotingResult;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no ground truth for task {0}")]
    MissingTruth(TaskId),
    #[error("item is missing its oracle reward")]
    MissingOracle,
}

/// Ground-truth lookup, task id to canonical answer.
pub type TruthMap = BTreeMap<TaskId, CanonicalAnswer>;

/// One step's diagnostics, in the order they appear in the metrics CSV.
///
/// `label_accuracy` is reported as 1 by convention when no tasks were
/// retained; `retained_fraction == 0` flags those steps. Optional rates are
/// absent when their denominator was empty (or the method never produces
/// them, e.g. filter rates under vote-only training).
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub label_accuracy: f64,
    pub reward_accuracy: Option<f64>,
    pub tnr: Option<f64>,
    pub fpr: Option<f64>,
    pub correct_recall: Option<f64>,
    pub wrong_recall: Option<f64>,
    pub mean_majority_ratio: f64,
    pub answer_entropy: f64,
    pub retained_fraction: f64,
    /// Label accuracy over every voted task, before any filtering.
    pub label_accuracy_prefilter: f64,
    pub reward_accuracy_generation: Option<f64>,
    pub reward_accuracy_verification: Option<f64>,
    pub reward_accuracy_correction: Option<f64>,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,label_accuracy,reward_accuracy,tnr,fpr,correct_recall,wrong_recall,mean_majority_ratio,answer_entropy,retained_fraction,label_accuracy_prefilter,reward_accuracy_generation,reward_accuracy_verification,reward_accuracy_correction";

    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.label_accuracy,
            opt(self.reward_accuracy),
            opt(self.tnr),
            opt(self.fpr),
            opt(self.correct_recall),
            opt(self.wrong_recall),
            self.mean_majority_ratio,
            self.answer_entropy,
            self.retained_fraction,
            self.label_accuracy_prefilter,
            opt(self.reward_accuracy_generation),
            opt(self.reward_accuracy_verification),
            opt(self.reward_accuracy_correction),
        )
    }

    /// Parse a row written by [`StepMetrics::csv_row`].
    pub fn from_csv_row(row: &str) -> Option<StepMetrics> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 14 {
            return None;
        }
        fn opt(s: &str) -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        }
        Some(StepMetrics {
            step: fields[0].parse().ok()?,
            label_accuracy: fields[1].parse().ok()?,
            reward_accuracy: opt(fields[2]),
            tnr: opt(fields[3]),
            fpr: opt(fields[4]),
            correct_recall: opt(fields[5]),
            wrong_recall: opt(fields[6]),
            mean_majority_ratio: fields[7].parse().ok()?,
            answer_entropy: fields[8].parse().ok()?,
            retained_fraction: fields[9].parse().ok()?,
            label_accuracy_prefilter: fields[10].parse().ok()?,
            reward_accuracy_generation: opt(fields[11]),
            reward_accuracy_verification: opt(fields[12]),
            reward_accuracy_correction: opt(fields[13]),
        })
    }
}

/// Fraction of the given (already method-filtered) voted tasks whose
/// pseudo-label equals the truth. Returns `(1.0, false)` when the slice is
/// empty: the value is defined by convention and the flag marks the step.
pub fn label_accuracy<'a>(
    votes: impl IntoIterator<Item = &'a VotingResult>,
    truths: &TruthMap,
) -> Result<(f64, bool), MetricsError> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for vote in votes {
        let truth = truths
            .get(&vote.task)
            .ok_or_else(|| MetricsError::MissingTruth(vote.task.clone()))?;
        total += 1;
        if vote.pseudo_label == *truth {
            hits += 1;
        }
    }
    if total == 0 {
        Ok((1.0, false))
    } else {
        Ok((hits as f64 / total as f64, true))
    }
}

/// Pooled and per-role fractions of items whose assigned accuracy reward
/// matches the oracle one. Every item must carry an oracle reward.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardAccuracy {
    pub pooled: Option<f64>,
    pub generation: Option<f64>,
    pub verification: Option<f64>,
    pub correction: Option<f64>,
}

pub fn reward_accuracy<'a>(
    items: impl IntoIterator<Item = &'a RewardedItem>,
) -> Result<RewardAccuracy, MetricsError> {
    let mut totals = [0usize; 3];
    let mut hits = [0usize; 3];
    for item in items {
        let agree = item.reward_matches_oracle().ok_or(MetricsError::MissingOracle)?;
        let slot = match item.rollout.role {
            Role::Generation => 0,
            Role::Verification => 1,
            Role::Correction => 2,
        };
        totals[slot] += 1;
        hits[slot] += usize::from(agree);
    }
    let rate = |h: usize, t: usize| if t == 0 { None } else { Some(h as f64 / t as f64) };
    Ok(RewardAccuracy {
        pooled: rate(hits.iter().sum(), totals.iter().sum()),
        generation: rate(hits[0], totals[0]),
        verification: rate(hits[1], totals[1]),
        correction: rate(hits[2], totals[2]),
    })
}

/// Filter quality against ground truth: TNR is the fraction of wrong-label
/// tasks that were dropped, FPR the fraction of correct-label tasks that
/// were dropped. Either rate is absent when its class is empty.
pub fn filter_rates<'a>(
    decisions: impl IntoIterator<Item = &'a FilterDecision>,
    truths: &TruthMap,
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    let mut wrong_total = 0usize;
    let mut wrong_dropped = 0usize;
    let mut correct_total = 0usize;
    let mut correct_dropped = 0usize;
    for decision in decisions {
        let truth = truths
            .get(&decision.task)
            .ok_or_else(|| MetricsError::MissingTruth(decision.task.clone()))?;
        let label_correct = decision.pseudo_label() == truth;
        if label_correct {
            correct_total += 1;
            correct_dropped += usize::from(!decision.retained);
        } else {
            wrong_total += 1;
            wrong_dropped += usize::from(!decision.retained);
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    Ok((rate(wrong_dropped, wrong_total), rate(correct_dropped, correct_total)))
}

/// Verifier accuracy per solution class over a step's records:
/// `correct_recall` is P(accept | solution actually correct) and
/// `wrong_recall` is P(reject | solution actually wrong). A rate is absent
/// when its class is empty.
pub fn verifier_recalls<'a>(
    records: impl IntoIterator<Item = &'a VerificationRecord>,
    truths: &TruthMap,
) -> Result<(Option<f64>, Option<f64>), MetricsError> {
    let mut correct_total = 0usize;
    let mut correct_accepted = 0usize;
    let mut wrong_total = 0usize;
    let mut wrong_rejected = 0usize;
    for record in records {
        let truth = truths
            .get(&record.task)
            .ok_or_else(|| MetricsError::MissingTruth(record.task.clone()))?;
        if record.solution.answer == *truth {
            correct_total += 1;
            correct_accepted += usize::from(record.verdict == crate::core::Verdict::Correct);
        } else {
            wrong_total += 1;
            wrong_rejected += usize::from(record.verdict == crate::core::Verdict::Wrong);
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    Ok((rate(correct_accepted, correct_total), rate(wrong_rejected, wrong_total)))
}

/// Output diversity across tasks: mean Shannon entropy of the answer
/// histograms (nats) and mean majority ratio.
pub fn diversity<'a>(
    votes: impl IntoIterator<Item = &'a VotingResult>,
) -> (f64, f64) {
    let mut entropy_sum = 0.0;
    let mut ratio_sum = 0.0;
    let mut count = 0usize;
    for vote in votes {
        let n = vote.n as f64;
        let h: f64 = vote
            .histogram
            .values()
            .map(|c| {
                let p = *c as f64 / n;
                -p * p.ln()
            })
            .sum();
        entropy_sum += h;
        ratio_sum += vote.majority_ratio;
        count += 1;
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (entropy_sum / count as f64, ratio_sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coevolve::VerificationRecord;
    use crate::core::{canonicalize_answer, CanonicalAnswer, Judgment, Rollout, Verdict};
    use crate::voting::majority_vote;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn vote_for(task: usize, answers: &[&str]) -> VotingResult {
        let id = TaskId::from(task);
        let rollouts: Vec<Rollout> = answers
            .iter()
            .enumerate()
            .map(|(i, a)| Rollout::generation(id.clone(), canonicalize_answer(a), 0.5, i))
            .collect();
        majority_vote(rollouts).unwrap()
    }

    fn truths_for(n: usize, answer: &str) -> TruthMap {
        (0..n).map(|i| (TaskId::from(i), canonicalize_answer(answer))).collect()
    }

    #[test]
    fn label_accuracy_counts_matches() {
        // 9 of 10 retained tasks vote the truth
        let votes: Vec<VotingResult> = (0..10)
            .map(|i| vote_for(i, if i < 9 { &["t", "t", "x"] } else { &["x", "x", "t"] }))
            .collect();
        let truths = truths_for(10, "t");
        let (acc, defined) = label_accuracy(&votes, &truths).unwrap();
        assert!((acc - 0.9).abs() < 1e-15);
        assert!(defined);

        let all_wrong: Vec<VotingResult> = (0..4).map(|i| vote_for(i, &["x", "x"])).collect();
        let (acc, _) = label_accuracy(&all_wrong, &truths_for(4, "t")).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn label_accuracy_flags_empty_step() {
        let truths = truths_for(1, "t");
        assert_eq!(label_accuracy([], &truths).unwrap(), (1.0, false));
    }

    #[test]
    fn label_accuracy_requires_truths() {
        let votes = vec![vote_for(0, &["t", "t"])];
        assert!(matches!(
            label_accuracy(&votes, &TruthMap::new()),
            Err(MetricsError::MissingTruth(_))
        ));
    }

    fn item(role: Role, r_accuracy: u8, oracle: Option<u8>) -> RewardedItem {
        let mut rollout =
            Rollout::generation(TaskId::from(0usize), canonicalize_answer("a"), 0.5, 0);
        rollout.role = role;
        RewardedItem {
            rollout,
            r_format: 1,
            r_accuracy,
            r_total: 1 + r_accuracy,
            oracle_r_accuracy: oracle,
        }
    }

    #[test]
    fn reward_accuracy_pools_and_splits_roles() {
        // 3 agreeing, 1 disagreeing -> 0.75 pooled
        let items = vec![
            item(Role::Generation, 1, Some(1)),
            item(Role::Generation, 0, Some(0)),
            item(Role::Verification, 1, Some(1)),
            item(Role::Correction, 1, Some(0)),
        ];
        let acc = reward_accuracy(&items).unwrap();
        assert_eq!(acc.pooled, Some(0.75));
        assert_eq!(acc.generation, Some(1.0));
        assert_eq!(acc.verification, Some(1.0));
        assert_eq!(acc.correction, Some(0.0));
    }

    #[test]
    fn reward_accuracy_requires_oracle() {
        let items = vec![item(Role::Generation, 1, None)];
        assert_eq!(reward_accuracy(&items), Err(MetricsError::MissingOracle));
    }

    fn decision_for(task: usize, label: &str, retained: bool) -> FilterDecision {
        let id = TaskId::from(task);
        let solution = Arc::new(Rollout::generation(
            id.clone(),
            canonicalize_answer(label),
            0.5,
            0,
        ));
        let trajectory = Rollout {
            task: id.clone(),
            role: Role::Verification,
            answer: CanonicalAnswer::empty(),
            verdict: Some(Verdict::from_bool(retained)),
            parent: Some(solution),
            format_ok: true,
            quality: 0.5,
            sample_index: 0,
            signal: Some(0.5),
        };
        let record = VerificationRecord::from_trajectory(trajectory, Judgment::Correct).unwrap();
        FilterDecision::from_records(id, vec![record]).unwrap()
    }

    #[test]
    fn filter_rates_split_by_label_correctness() {
        // 10 wrong-label tasks, 5 dropped -> TNR 0.5; no correct-label task
        // dropped -> FPR 0
        let mut decisions: Vec<FilterDecision> =
            (0..10).map(|i| decision_for(i, "x", i < 5)).collect();
        decisions.extend((10..14).map(|i| decision_for(i, "t", true)));
        let truths = truths_for(14, "t");
        let (tnr, fpr) = filter_rates(&decisions, &truths).unwrap();
        assert_eq!(tnr, Some(0.5));
        assert_eq!(fpr, Some(0.0));
    }

    #[test]
    fn filter_rates_absent_on_empty_classes() {
        let decisions: Vec<FilterDecision> = (0..3).map(|i| decision_for(i, "t", true)).collect();
        let truths = truths_for(3, "t");
        let (tnr, fpr) = filter_rates(&decisions, &truths).unwrap();
        assert_eq!(tnr, None);
        assert_eq!(fpr, Some(0.0));
    }

    fn record_for(task: usize, solution_answer: &str, verdict: Verdict) -> VerificationRecord {
        let id = TaskId::from(task);
        let solution = Arc::new(Rollout::generation(
            id.clone(),
            canonicalize_answer(solution_answer),
            0.5,
            0,
        ));
        let trajectory = Rollout {
            task: id,
            role: Role::Verification,
            answer: CanonicalAnswer::empty(),
            verdict: Some(verdict),
            parent: Some(solution),
            format_ok: true,
            quality: 0.5,
            sample_index: 0,
            signal: Some(0.5),
        };
        VerificationRecord::from_trajectory(trajectory, Judgment::Correct).unwrap()
    }

    #[test]
    fn recalls_of_perfect_and_degenerate_verifiers() {
        let truths = truths_for(4, "t");
        // perfect verifier
        let records = vec![
            record_for(0, "t", Verdict::Correct),
            record_for(1, "x", Verdict::Wrong),
        ];
        assert_eq!(verifier_recalls(&records, &truths).unwrap(), (Some(1.0), Some(1.0)));

        // constant-reject verifier: the collapse signature
        let records = vec![
            record_for(0, "t", Verdict::Wrong),
            record_for(1, "x", Verdict::Wrong),
        ];
        assert_eq!(verifier_recalls(&records, &truths).unwrap(), (Some(0.0), Some(1.0)));

        // empty class is absent
        let records = vec![record_for(0, "t", Verdict::Correct)];
        assert_eq!(verifier_recalls(&records, &truths).unwrap(), (Some(1.0), None));
    }

    #[test]
    fn coin_flip_verifier_recalls_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truths = truths_for(1, "t");
        let records: Vec<VerificationRecord> = (0..10_000)
            .map(|_| {
                let answer = if rng.gen_bool(0.5) { "t" } else { "x" };
                record_for(0, answer, Verdict::from_bool(rng.gen_bool(0.5)))
            })
            .collect();
        let (correct, wrong) = verifier_recalls(&records, &truths).unwrap();
        let sigma3 = 3.0 * (0.25f64 / 5000.0).sqrt();
        assert!((correct.unwrap() - 0.5).abs() < sigma3 * 1.5);
        assert!((wrong.unwrap() - 0.5).abs() < sigma3 * 1.5);
    }

    #[test]
    fn diversity_of_point_mass_and_uniform() {
        let unanimous = vote_for(0, &["a", "a", "a", "a"]);
        let (h, ratio) = diversity([&unanimous]);
        assert!(h.abs() < 1e-15);
        assert!((ratio - 1.0).abs() < 1e-15);

        let uniform = vote_for(0, &["a", "b", "c", "d"]);
        let (h, _) = diversity([&uniform]);
        assert!((h - 4.0f64.ln()).abs() < 1e-12);

        // [A, A, B]: H = -(2/3) ln(2/3) - (1/3) ln(1/3)
        let skewed = vote_for(0, &["a", "a", "b"]);
        let (h, _) = diversity([&skewed]);
        let expected = -(2.0 / 3.0) * (2.0f64 / 3.0).ln() - (1.0 / 3.0) * (1.0f64 / 3.0).ln();
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounded_by_log_answer_count() {
        let vote = vote_for(0, &["a", "b", "b", "c", "a", "c", "d"]);
        let (h, ratio) = diversity([&vote]);
        assert!(h <= (vote.histogram.len() as f64).ln() + 1e-12);
        assert!((0.0..=1.0).contains(&ratio));
    }

    #[test]
    fn csv_row_round_trips() {
        let metrics = StepMetrics {
            step: 7,
            label_accuracy: 0.875,
            reward_accuracy: Some(0.9375),
            tnr: None,
            fpr: Some(0.05),
            correct_recall: Some(0.75),
            wrong_recall: None,
            mean_majority_ratio: 0.625,
            answer_entropy: 1.0986122886681098,
            retained_fraction: 0.5,
            label_accuracy_prefilter: 0.7,
            reward_accuracy_generation: Some(0.9),
            reward_accuracy_verification: None,
            reward_accuracy_correction: Some(1.0),
        };
        let parsed = StepMetrics::from_csv_row(&metrics.csv_row()).unwrap();
        assert_eq!(parsed, metrics);
    }
}
