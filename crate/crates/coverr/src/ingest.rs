//! Offline mode: run the training-signal pipeline over line-delimited
//! rollout dumps from external inference systems and emit training-ready
//! batches.
//!
//! # Input format (`#schema=coverr.v1`)
//!
//! UTF-8, one JSON object per line. Lines starting with `#` are headers or
//! comments; a `#schema=` header, when present, must name a supported
//! version. Fields:
//!
//! ```json
//! {"task_id": "q17", "role": "generation", "text": "... \\boxed{33}",
//!  "parent_id": null, "ground_truth": "33"}
//! ```
//!
//! - `role` is `generation`, `verification`, or `correction`.
//! - `parent_id` links a verification to the generation it judges, and a
//!   correction to the verification that triggered it, as the 0-based
//!   position (decimal string) of the referenced record among the task's
//!   records of that role, in file order.
//! - verification `text` is scanned for a final judgment phrase; records
//!   whose judgment cannot be parsed count as rejections (and are tallied).
//! - generation/correction answers come from canonicalizing `text`; the
//!   format reward requires a boxed answer (generations/corrections) or a
//!   parseable judgment (verifications).
//!
//! Malformed lines are skipped with a counted warning; the load fails if
//! more than 10% of data lines are malformed.
//!
//! # Output format
//!
//! One JSON object per rewarded item, ordered by (task, role, group key,
//! item index), after a `#schema=coverr.v1` header. Identical input and
//! seed produce byte-identical output. Offline mode performs no policy
//! updates; emission is the last stage.

use crate::core::{
    canonicalize_answer, has_boxed_answer, parse_verdict, CanonicalAnswer, ParsedVerdict, Role,
    Rollout, TaskId, Verdict,
};
use crate::metrics::TruthMap;
use crate::pipeline::{
    process_task, stream_rng, PipelineError, PipelineSettings, Purpose, ReplaySampler, TaskOutput,
};
use crate::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        source: std::io::Error,
    },
    #[error("no records")]
    NoRecords,
    #[error("unsupported schema {0}, expected {SCHEMA_VERSION}")]
    UnsupportedSchema(String),
    #[error("{malformed} of {total} lines malformed, above the 10% threshold")]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("non-finite number in batch for task {0}")]
    NonFiniteBatch(TaskId),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One input line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task_id: String,
    pub role: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

/// One output line: a rewarded item with its normalized advantage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub task_id: String,
    pub role: String,
    pub group_key: String,
    pub reward: f64,
    pub advantage: f64,
    pub item_ref: String,
}

/// Counters accumulated while loading a dump.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub data_lines: usize,
    pub records: usize,
    pub malformed_skipped: usize,
    pub undecided_verdicts: usize,
    pub dangling_parents: usize,
    pub conflicting_truths: usize,
    pub tasks: usize,
}

/// Everything parsed for one task, in file order.
#[derive(Clone, Debug, Default)]
pub struct TaskDump {
    pub generations: Vec<Rollout>,
    /// (file ordinal among the task's verifications, trajectory)
    pub verifications: Vec<(usize, Rollout)>,
    /// corrections keyed by the file ordinal of their verification
    pub corrections: BTreeMap<usize, Vec<Rollout>>,
    pub truth: Option<CanonicalAnswer>,
}

/// A parsed dump: per-task collections plus load counters.
#[derive(Clone, Debug)]
pub struct LoadedDump {
    /// Tasks in order of first appearance; that order assigns the slot each
    /// task's random streams derive from.
    pub order: Vec<TaskId>,
    pub tasks: BTreeMap<TaskId, TaskDump>,
    pub summary: LoadSummary,
}

impl LoadedDump {
    pub fn truths(&self) -> TruthMap {
        self.tasks
            .iter()
            .filter_map(|(id, dump)| dump.truth.clone().map(|t| (id.clone(), t)))
            .collect()
    }
}

/// Parse a line-delimited rollout dump.
pub fn load_rollouts(path: impl AsRef<Path>) -> Result<LoadedDump, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut order: Vec<TaskId> = Vec::new();
    let mut tasks: BTreeMap<TaskId, TaskDump> = BTreeMap::new();
    let mut summary = LoadSummary::default();

    for line in reader.lines() {
        let line = line.map_err(|source| IngestError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            if let Some(schema) = header.trim().strip_prefix("schema=") {
                if schema != SCHEMA_VERSION {
                    return Err(IngestError::UnsupportedSchema(schema.to_string()));
                }
            }
            continue;
        }
        summary.data_lines += 1;

        let Ok(record) = serde_json::from_str::<RolloutRecord>(trimmed) else {
            summary.malformed_skipped += 1;
            continue;
        };
        if record.task_id.is_empty() {
            summary.malformed_skipped += 1;
            continue;
        }
        let task_id = TaskId::new(record.task_id.clone());
        if !tasks.contains_key(&task_id) {
            order.push(task_id.clone());
            tasks.insert(task_id.clone(), TaskDump::default());
        }
        let dump = tasks.get_mut(&task_id).expect("inserted above");

        if let Some(raw_truth) = &record.ground_truth {
            let truth = canonicalize_answer(raw_truth);
            match &dump.truth {
                None => dump.truth = Some(truth),
                Some(existing) if *existing != truth => summary.conflicting_truths += 1,
                _ => {}
            }
        }

        match record.role.as_str() {
            "generation" => {
                let answer = canonicalize_answer(&record.text);
                let mut rollout = Rollout::generation(
                    task_id.clone(),
                    answer,
                    0.0,
                    dump.generations.len(),
                );
                rollout.format_ok = has_boxed_answer(&record.text);
                dump.generations.push(rollout);
                summary.records += 1;
            }
            "verification" => {
                let Some(parent) = record
                    .parent_id
                    .as_deref()
                    .and_then(|p| p.parse::<usize>().ok())
                    .and_then(|idx| dump.generations.get(idx))
                else {
                    summary.malformed_skipped += 1;
                    summary.dangling_parents += 1;
                    continue;
                };
                let verdict = match parse_verdict(&record.text) {
                    ParsedVerdict::Verdict(v) => v,
                    ParsedVerdict::Undecided => {
                        // conservative rejection: an unparseable judgment
                        // must not pass a solution
                        summary.undecided_verdicts += 1;
                        Verdict::Wrong
                    }
                };
                let file_ordinal = dump.verifications.len();
                let trajectory = Rollout {
                    task: task_id.clone(),
                    role: Role::Verification,
                    answer: CanonicalAnswer::empty(),
                    verdict: Some(verdict),
                    parent: Some(Arc::new(parent.clone())),
                    format_ok: matches!(parse_verdict(&record.text), ParsedVerdict::Verdict(_)),
                    quality: 0.0,
                    sample_index: file_ordinal,
                    signal: None,
                };
                dump.verifications.push((file_ordinal, trajectory));
                summary.records += 1;
            }
            "correction" => {
                let Some(parent_ordinal) = record
                    .parent_id
                    .as_deref()
                    .and_then(|p| p.parse::<usize>().ok())
                    .filter(|idx| *idx < dump.verifications.len())
                else {
                    summary.malformed_skipped += 1;
                    summary.dangling_parents += 1;
                    continue;
                };
                let siblings = dump.corrections.entry(parent_ordinal).or_default();
                let mut rollout = Rollout::generation(
                    task_id.clone(),
                    canonicalize_answer(&record.text),
                    0.0,
                    siblings.len(),
                );
                rollout.role = Role::Correction;
                rollout.format_ok = has_boxed_answer(&record.text);
                // the parent link is attached at replay time
                siblings.push(rollout);
                summary.records += 1;
            }
            _ => {
                summary.malformed_skipped += 1;
            }
        }
    }

    if summary.records == 0 {
        return Err(IngestError::NoRecords);
    }
    if summary.malformed_skipped * 10 > summary.data_lines {
        return Err(IngestError::TooManyMalformed {
            malformed: summary.malformed_skipped,
            total: summary.data_lines,
        });
    }
    summary.tasks = tasks.len();
    Ok(LoadedDump { order, tasks, summary })
}

/// Run the shared pipeline over a loaded dump. Tasks without generation
/// rollouts are skipped. Returns outputs in first-appearance order.
pub fn run_offline_pipeline(
    dump: &LoadedDump,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<Vec<TaskOutput>, IngestError> {
    let mut outputs = Vec::new();
    for (slot, task_id) in dump.order.iter().enumerate() {
        let task_dump = &dump.tasks[task_id];
        if task_dump.generations.is_empty() {
            continue;
        }
        let mut sampler =
            ReplaySampler::new(task_dump.verifications.clone(), task_dump.corrections.clone());
        let mut rng_downsample =
            stream_rng(seed, 0, slot as u64, task_id.as_str(), Purpose::Downsample);
        let mut rng_group =
            stream_rng(seed, 0, slot as u64, task_id.as_str(), Purpose::GroupSample);
        let output = process_task(
            task_dump.generations.clone(),
            settings,
            &mut sampler,
            task_dump.truth.as_ref(),
            &mut rng_downsample,
            &mut rng_group,
        )?;
        outputs.push(output);
    }
    Ok(outputs)
}

/// Write one batch line per rewarded item, ordered by (task, role, group
/// key, item index). Returns the number of records written.
pub fn emit_batches(
    outputs: &[TaskOutput],
    path: impl AsRef<Path>,
) -> Result<usize, IngestError> {
    let path = path.as_ref();
    let records = batch_records(outputs)?;
    let mut file = std::fs::File::create(path).map_err(|source| IngestError::Unwritable {
        path: path.display().to_string(),
        source,
    })?;
    let mut write = |s: &str| -> Result<(), IngestError> {
        file.write_all(s.as_bytes()).map_err(|source| IngestError::Unwritable {
            path: path.display().to_string(),
            source,
        })
    };
    write(&format!("#schema={SCHEMA_VERSION}\n"))?;
    for record in &records {
        write(&serde_json::to_string(record).expect("batch records serialize"))?;
        write("\n")?;
    }
    Ok(records.len())
}

/// The batch lines for a pipeline run, in emission order.
pub fn batch_records(outputs: &[TaskOutput]) -> Result<Vec<BatchRecord>, IngestError> {
    let mut ordered: Vec<&TaskOutput> = outputs.iter().collect();
    ordered.sort_by(|a, b| a.vote.task.cmp(&b.vote.task));
    let mut records = Vec::new();
    for output in ordered {
        let Some(training) = &output.training else {
            continue;
        };
        // groups come out of normalization sorted by key: role then anchor
        for group in &training.groups {
            for (index, (item, advantage)) in
                group.items.iter().zip(&group.advantages).enumerate()
            {
                let reward = item.reward();
                if !reward.is_finite() || !advantage.is_finite() {
                    return Err(IngestError::NonFiniteBatch(output.vote.task.clone()));
                }
                records.push(BatchRecord {
                    task_id: output.vote.task.as_str().to_string(),
                    role: item.rollout.role.as_str().to_string(),
                    group_key: group_key_string(&group.key),
                    reward,
                    advantage: *advantage,
                    item_ref: item_ref_string(item, index),
                });
            }
        }
    }
    Ok(records)
}

/// Re-parse an emitted batch file.
pub fn load_batches(path: impl AsRef<Path>) -> Result<Vec<BatchRecord>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| IngestError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            if let Some(schema) = header.trim().strip_prefix("schema=") {
                if schema != SCHEMA_VERSION {
                    return Err(IngestError::UnsupportedSchema(schema.to_string()));
                }
            }
            continue;
        }
        match serde_json::from_str::<BatchRecord>(trimmed) {
            Ok(record) => records.push(record),
            Err(_) => continue,
        }
    }
    if records.is_empty() {
        return Err(IngestError::NoRecords);
    }
    Ok(records)
}

fn group_key_string(key: &crate::advantage::GroupKey) -> String {
    use crate::advantage::GroupAnchor;
    match (&key.role, &key.anchor) {
        (Role::Generation, _) => "generation".to_string(),
        (role, GroupAnchor::Answer(a)) => format!("{}:answer={a}", role.as_str()),
        (role, GroupAnchor::Prefix(i)) => format!("{}:prefix={i}", role.as_str()),
        (role, GroupAnchor::Whole) => role.as_str().to_string(),
    }
}

fn item_ref_string(item: &crate::reward::RewardedItem, index_in_group: usize) -> String {
    let rollout = &item.rollout;
    match rollout.role {
        Role::Generation => format!("gen:{}", rollout.sample_index),
        Role::Verification => format!("ver:{}", rollout.sample_index),
        Role::Correction => {
            let trigger = rollout
                .parent
                .as_ref()
                .map(|p| p.sample_index)
                .unwrap_or(index_in_group);
            format!("cor:{}:{}", trigger, rollout.sample_index)
        }
    }
}

/// Serialize simulator rollouts into dump lines, so simulated data can be
/// replayed through the offline path (and users have a format example).
pub mod dump_writer {
    use super::*;
    use crate::coevolve::{CorrectionSet, VerificationRecord};

    pub fn generation_line(rollout: &Rollout, truth: Option<&CanonicalAnswer>) -> String {
        let record = RolloutRecord {
            task_id: rollout.task.as_str().to_string(),
            role: "generation".to_string(),
            text: format!("The answer is \\boxed{{{}}}", rollout.answer),
            parent_id: None,
            ground_truth: truth.map(|t| t.as_str().to_string()),
        };
        serde_json::to_string(&record).expect("records serialize")
    }

    pub fn verification_line(record: &VerificationRecord, generation_ordinal: usize) -> String {
        let text = match record.verdict {
            Verdict::Correct => "Checked every step. The answer is correct.",
            Verdict::Wrong => "Found a flaw. The answer is wrong.",
        };
        let line = RolloutRecord {
            task_id: record.task.as_str().to_string(),
            role: "verification".to_string(),
            text: text.to_string(),
            parent_id: Some(generation_ordinal.to_string()),
            ground_truth: None,
        };
        serde_json::to_string(&line).expect("records serialize")
    }

    pub fn correction_lines(set: &CorrectionSet, verification_ordinal: usize) -> Vec<String> {
        set.revisions
            .iter()
            .map(|z| {
                let record = RolloutRecord {
                    task_id: z.task.as_str().to_string(),
                    role: "correction".to_string(),
                    text: format!("Revised: the answer is \\boxed{{{}}}", z.answer),
                    parent_id: Some(verification_ordinal.to_string()),
                    ground_truth: None,
                };
                serde_json::to_string(&record).expect("records serialize")
            })
            .collect()
    }
}
