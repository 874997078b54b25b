//! Label-free co-evolution of generator and verifier policies.
//!
//! This crate implements a training-signal pipeline for reinforcement
//! learning without ground-truth labels, together with a deterministic
//! desk-scale simulator that closes the loop:
//!
//! 1. **Voting** — sample N solutions per task, take the most frequent answer
//!    as the pseudo-label, and partition solutions into positives/negatives.
//! 2. **Filtering** — have the verifier judge a budgeted subset of the
//!    positives; keep the task only if a strict majority of judgments accept.
//!    This targets self-consistent errors that plain consensus cannot detect.
//! 3. **Co-evolution** — build balanced contrastive verification sets (the
//!    accepted positives vs. repeated judgments of the rarest negative) and
//!    collect self-correction rollouts for every rejecting judgment.
//! 4. **Rewards and advantages** — binary format/accuracy rewards per role,
//!    normalized into group-relative advantages. Positive verifications are
//!    grouped by the answer they target (answer-anchored) rather than by
//!    shared prompt prefix.
//! 5. **Updates** — plain advantage-weighted log-likelihood gradients on a
//!    tabular softmax generator and a one-feature logistic verifier.
//!
//! The [`harness`] module runs seeded experiments (co-evolution, vote-only
//! baselines, threshold filtering, and ablations) and emits per-step metric
//! CSVs. The [`ingest`] module runs the same pipeline offline over
//! line-delimited rollout dumps and emits training-ready batches. The
//! [`theory`] module numerically checks the group-relative gradient algebra
//! the balanced construction relies on.
//!
//! Every sampling decision draws from a stream derived from (seed, step,
//! slot, task, purpose), so runs are bit-reproducible and tasks are
//! order-independent.
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod advantage;
pub mod coevolve;
pub mod core;
pub mod filter;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod policysim;
pub mod reward;
pub mod theory;
pub mod voting;

pub use crate::core::{
    canonicalize_answer, parse_verdict, CanonicalAnswer, Judgment, ParsedVerdict, Role, Rollout,
    TaskId, Verdict,
};
pub use advantage::{AdvantageGroup, GroupAnchor, GroupKey, GroupingMode};
pub use coevolve::{CorrectionSet, VerificationRecord};
pub use filter::FilterDecision;
pub use harness::{compare_runs, run_experiment, ExperimentConfig, Method, RunArtifacts};
pub use metrics::StepMetrics;
pub use policysim::{GeneratorModel, SyntheticTask, VerifierModel};
pub use reward::RewardedItem;
pub use voting::VotingResult;

/// Version tag written into every file this crate emits.
pub const SCHEMA_VERSION: &str = "coverr.v1";
