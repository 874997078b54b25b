//! The per-task training-signal pipeline shared by the online simulator and
//! the offline ingest path.
//!
//! One pipeline, two front ends: the simulator samples verifications and
//! corrections from live policies, while ingest replays trajectories parsed
//! from a dump. Everything downstream of trajectory acquisition — voting,
//! consensus filtering, contrastive set construction, reward assignment,
//! grouping and normalization — is literally the same code, so diagnostics
//! computed over either front end agree on the same logical data.
//!
//! Determinism: every random decision draws from its own stream derived
//! from (seed, step, slot, task, purpose). Tasks never share streams, so
//! they can be processed in any order, and a task drawn twice into a batch
//! (slots differ) gets independent draws.

use crate::advantage::{group_and_normalize, AdvantageGroup, AdvantageError, GroupingMode};
use crate::coevolve::{
    build_negative_set, build_positive_set, collect_corrections, select_negative_anchor,
    CoevolveError, CorrectionSet, VerificationRecord,
};
use crate::core::{CanonicalAnswer, Judgment, Rollout};
use crate::filter::{select_verification_subset, FilterDecision, FilterError};
use crate::policysim::{
    sample_correction, sample_verification, GeneratorModel, PolicySimError, SyntheticTask,
    VerifierModel,
};
use crate::reward::{assign_rewards, RewardError, RewardedItem};
use crate::voting::{downsample_for_training, majority_vote, VotingError, VotingResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Voting(#[from] VotingError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Coevolve(#[from] CoevolveError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Policy(#[from] PolicySimError),
}

/// Which consumer a derived random stream feeds. Separating purposes keeps
/// the simulator and the replayed offline path aligned on the draws they
/// share (downsampling, grouping) regardless of what else each one samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    SuiteBuild,
    BatchSelect,
    Generation,
    Downsample,
    SubsetSelect,
    VerifyPositive,
    VerifyNegative,
    Correction,
    GroupSample,
    TheoryCheck,
}

/// A reproducible stream for one (seed, step, slot, task, purpose) tuple.
pub fn stream_rng(seed: u64, step: u64, slot: u64, task: &str, purpose: Purpose) -> ChaCha8Rng {
    // FNV-1a over the tuple, then a splitmix64 finalizer for avalanche.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(&step.to_le_bytes());
    eat(&slot.to_le_bytes());
    eat(task.as_bytes());
    eat(&[purpose as u8]);

    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Trajectory acquisition, the part that differs between front ends.
pub trait TaskSampler {
    /// The judged positive subset: pick up to `budget` positive solutions
    /// and return their verification records, targets `Correct`, ordinals
    /// 0..len.
    fn positive_records(
        &mut self,
        vote: &VotingResult,
        budget: usize,
    ) -> Result<Vec<VerificationRecord>, PipelineError>;

    /// The next verification trajectory of the negative anchor, or `None`
    /// when the front end has no more (replayed dumps can run dry).
    fn negative_trajectory(
        &mut self,
        anchor: &std::sync::Arc<Rollout>,
        ordinal: usize,
    ) -> Result<Option<Rollout>, PipelineError>;

    /// Up to `k` revisions for one rejecting record.
    fn corrections(
        &mut self,
        trigger: &VerificationRecord,
        k: usize,
    ) -> Result<Vec<Rollout>, PipelineError>;
}

/// Pipeline knobs, a method-resolved subset of the experiment config.
#[derive(Clone, Copy, Debug)]
pub struct PipelineSettings {
    pub m_budget: usize,
    pub k_corrections: usize,
    pub downsample: usize,
    pub grouping: GroupingMode,
    /// 1 for balanced training; the collapse ablation sets it higher, making
    /// the negative set `multiplier * |positive set|`.
    pub unbalance_multiplier: usize,
}

/// The co-evolution data built for one retained task.
#[derive(Clone, Debug)]
pub struct TaskTraining {
    /// The downsampled generation rollouts that receive rewards.
    pub training_generations: Vec<Rollout>,
    /// The contrastive negative anchor, when the vote was not unanimous.
    pub anchor: Option<std::sync::Arc<Rollout>>,
    pub positive: Vec<VerificationRecord>,
    pub negative: Vec<VerificationRecord>,
    pub corrections: Vec<CorrectionSet>,
    pub items: Vec<RewardedItem>,
    pub groups: Vec<AdvantageGroup>,
}

/// Everything the pipeline produced for one task in one step.
#[derive(Clone, Debug)]
pub struct TaskOutput {
    pub vote: VotingResult,
    pub decision: FilterDecision,
    /// `None` when the consensus filter dropped the task; dropped tasks
    /// contribute no training data of any role this iteration.
    pub training: Option<TaskTraining>,
}

impl TaskOutput {
    /// All verification records produced for the task this step, including
    /// the filter-stage ones of dropped tasks.
    pub fn verification_records(&self) -> impl Iterator<Item = &VerificationRecord> {
        let negatives = self.training.iter().flat_map(|t| t.negative.iter());
        self.decision.verified.iter().chain(negatives)
    }
}

/// Run one task through vote, filter, contrastive construction, correction
/// collection, rewards, and advantage normalization.
///
/// `truth` is carried through to oracle rewards when known; it never
/// influences the training signal itself.
pub fn process_task<S: TaskSampler>(
    generations: Vec<Rollout>,
    settings: &PipelineSettings,
    sampler: &mut S,
    truth: Option<&CanonicalAnswer>,
    rng_downsample: &mut ChaCha8Rng,
    rng_group: &mut ChaCha8Rng,
) -> Result<TaskOutput, PipelineError> {
    let vote = majority_vote(generations)?;
    let task = vote.task.clone();

    let positive_records = sampler.positive_records(&vote, settings.m_budget)?;
    let decision = FilterDecision::from_records(task.clone(), positive_records)?;
    if !decision.retained {
        return Ok(TaskOutput { vote, decision, training: None });
    }

    let training_generations =
        downsample_for_training(&vote, settings.downsample, rng_downsample);
    let positive = build_positive_set(&decision)?;

    let anchor = select_negative_anchor(&vote.negatives, &vote.histogram);
    let negative = match &anchor {
        Some(anchor) => {
            let size = decision.budget_used * settings.unbalance_multiplier;
            let mut failed: Option<PipelineError> = None;
            let records = build_negative_set(&task, anchor, size, decision.budget_used, |a, ord| {
                match sampler.negative_trajectory(a, ord) {
                    Ok(t) => t,
                    Err(e) => {
                        failed = Some(e);
                        None
                    }
                }
            })?;
            if let Some(e) = failed {
                return Err(e);
            }
            records
        }
        None => Vec::new(), // unanimous vote: no contrastive negatives
    };

    let mut correction_error: Option<PipelineError> = None;
    let corrections = collect_corrections(
        positive.iter().chain(negative.iter()),
        settings.k_corrections,
        |record, k| match sampler.corrections(record, k) {
            Ok(revisions) => revisions,
            Err(e) => {
                correction_error = Some(e);
                Vec::new()
            }
        },
    )?;
    if let Some(e) = correction_error {
        return Err(e);
    }

    let mut rollouts: Vec<Rollout> = training_generations.clone();
    rollouts.extend(positive.iter().map(|r| r.trajectory.clone()));
    rollouts.extend(negative.iter().map(|r| r.trajectory.clone()));
    rollouts.extend(corrections.iter().flat_map(|set| set.revisions.iter().cloned()));

    let items = assign_rewards(&rollouts, &vote.pseudo_label, truth)?;
    let groups = group_and_normalize(items.clone(), &vote.pseudo_label, settings.grouping, rng_group)?;

    Ok(TaskOutput {
        vote,
        decision,
        training: Some(TaskTraining {
            training_generations,
            anchor,
            positive,
            negative,
            corrections,
            items,
            groups,
        }),
    })
}

/// The live front end: trajectories come from the synthetic policies.
pub struct SimSampler<'a> {
    pub generator: &'a GeneratorModel,
    pub verifier: &'a VerifierModel,
    pub task: &'a SyntheticTask,
    rng_subset: ChaCha8Rng,
    rng_verify_positive: ChaCha8Rng,
    rng_verify_negative: ChaCha8Rng,
    rng_correction: ChaCha8Rng,
}

impl<'a> SimSampler<'a> {
    pub fn new(
        generator: &'a GeneratorModel,
        verifier: &'a VerifierModel,
        task: &'a SyntheticTask,
        seed: u64,
        step: u64,
        slot: u64,
    ) -> Self {
        let id = task.task.as_str();
        SimSampler {
            generator,
            verifier,
            task,
            rng_subset: stream_rng(seed, step, slot, id, Purpose::SubsetSelect),
            rng_verify_positive: stream_rng(seed, step, slot, id, Purpose::VerifyPositive),
            rng_verify_negative: stream_rng(seed, step, slot, id, Purpose::VerifyNegative),
            rng_correction: stream_rng(seed, step, slot, id, Purpose::Correction),
        }
    }
}

impl TaskSampler for SimSampler<'_> {
    fn positive_records(
        &mut self,
        vote: &VotingResult,
        budget: usize,
    ) -> Result<Vec<VerificationRecord>, PipelineError> {
        let subset = select_verification_subset(&vote.positives, budget, &mut self.rng_subset)?;
        let mut records = Vec::with_capacity(subset.len());
        for (ordinal, solution) in subset.iter().enumerate() {
            let trajectory =
                sample_verification(self.verifier, solution, ordinal, &mut self.rng_verify_positive);
            records.push(VerificationRecord::from_trajectory(trajectory, Judgment::Correct)?);
        }
        Ok(records)
    }

    fn negative_trajectory(
        &mut self,
        anchor: &std::sync::Arc<Rollout>,
        ordinal: usize,
    ) -> Result<Option<Rollout>, PipelineError> {
        Ok(Some(sample_verification(
            self.verifier,
            anchor,
            ordinal,
            &mut self.rng_verify_negative,
        )))
    }

    fn corrections(
        &mut self,
        trigger: &VerificationRecord,
        k: usize,
    ) -> Result<Vec<Rollout>, PipelineError> {
        Ok(sample_correction(
            self.generator,
            self.task,
            &trigger.trajectory,
            k,
            &mut self.rng_correction,
        )?)
    }
}

/// The replay front end: trajectories were parsed from a dump and are
/// served back in file order.
pub struct ReplaySampler {
    /// Verification trajectories in file order, with the file ordinal they
    /// had (corrections reference that ordinal).
    verifications: Vec<(usize, Rollout)>,
    /// Correction rollouts keyed by the file ordinal of their verification.
    corrections: std::collections::BTreeMap<usize, Vec<Rollout>>,
    /// file ordinals already handed out, by pipeline ordinal
    served: std::collections::BTreeMap<usize, usize>,
}

impl ReplaySampler {
    pub fn new(
        verifications: Vec<(usize, Rollout)>,
        corrections: std::collections::BTreeMap<usize, Vec<Rollout>>,
    ) -> Self {
        ReplaySampler { verifications, corrections, served: Default::default() }
    }

    /// Serve the next unserved verification of `solution_index` (by parent
    /// sample index), rebuilt with the pipeline's ordinal.
    fn serve(&mut self, solution_index: Option<usize>, ordinal: usize) -> Option<Rollout> {
        let served: Vec<usize> = self.served.values().copied().collect();
        let next = self.verifications.iter().find(|(file_ordinal, t)| {
            if served.contains(file_ordinal) {
                return false;
            }
            match solution_index {
                Some(idx) => t
                    .parent
                    .as_ref()
                    .is_some_and(|p| p.sample_index == idx),
                None => true,
            }
        });
        let (file_ordinal, trajectory) = next?;
        let file_ordinal = *file_ordinal;
        let mut trajectory = trajectory.clone();
        trajectory.sample_index = ordinal;
        self.served.insert(ordinal, file_ordinal);
        Some(trajectory)
    }
}

impl TaskSampler for ReplaySampler {
    fn positive_records(
        &mut self,
        vote: &VotingResult,
        budget: usize,
    ) -> Result<Vec<VerificationRecord>, PipelineError> {
        // The dump already chose which solutions were verified; take its
        // records of pseudo-label solutions in file order, up to the budget.
        let label = vote.pseudo_label.clone();
        let mut records = Vec::new();
        for ordinal in 0..budget {
            let candidate = {
                let served: Vec<usize> = self.served.values().copied().collect();
                self.verifications
                    .iter()
                    .find(|(file_ordinal, t)| {
                        !served.contains(file_ordinal)
                            && t.parent.as_ref().is_some_and(|p| p.answer == label)
                    })
                    .map(|(fo, t)| (*fo, t.clone()))
            };
            let Some((file_ordinal, mut trajectory)) = candidate else {
                break;
            };
            trajectory.sample_index = ordinal;
            self.served.insert(ordinal, file_ordinal);
            records.push(VerificationRecord::from_trajectory(trajectory, Judgment::Correct)?);
        }
        Ok(records)
    }

    fn negative_trajectory(
        &mut self,
        anchor: &std::sync::Arc<Rollout>,
        ordinal: usize,
    ) -> Result<Option<Rollout>, PipelineError> {
        Ok(self.serve(Some(anchor.sample_index), ordinal))
    }

    fn corrections(
        &mut self,
        trigger: &VerificationRecord,
        k: usize,
    ) -> Result<Vec<Rollout>, PipelineError> {
        let Some(file_ordinal) = self.served.get(&trigger.ordinal).copied() else {
            return Ok(Vec::new());
        };
        let Some(available) = self.corrections.get(&file_ordinal) else {
            return Ok(Vec::new());
        };
        let parent = std::sync::Arc::new(trigger.trajectory.clone());
        Ok(available
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, z)| {
                let mut z = z.clone();
                z.parent = Some(parent.clone());
                z.sample_index = i;
                z
            })
            .collect())
    }
}
