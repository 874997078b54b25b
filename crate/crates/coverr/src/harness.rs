//! Experiment runner: configures a method, runs a seeded training loop over
//! a synthetic task suite, and emits per-step metric series.
//!
//! Methods:
//!
//! - `coverrl` — the full co-evolution loop: vote, verify-and-filter,
//!   contrastive verifier sets, self-correction, answer-anchored grouping,
//!   joint update.
//! - `ttrl` — vote-only baseline: vote, downsample, reward against the raw
//!   pseudo-label, prefix grouping, generator update. No filter, no
//!   verifier training, no corrections.
//! - `ttrl_filter` — `ttrl` with tasks dropped when the majority ratio
//!   falls below `tau`.
//! - `coverrl_unbalanced` — co-evolution with the negative verification set
//!   inflated by `unbalance_multiplier`; reproduces verifier collapse.
//! - `coverrl_no_aagrpo` — co-evolution with standard prefix grouping for
//!   positive verifications instead of answer anchoring.
//!
//! Each step draws a batch of `tasks` task slots uniformly with replacement
//! from the suite, processes every slot, and applies one batched update.
//! Identical config and seed give byte-identical metric CSVs.

use crate::advantage::{group_and_normalize, AdvantageGroup, GroupingMode};
use crate::metrics::{
    diversity, filter_rates, label_accuracy, reward_accuracy, verifier_recalls, MetricsError,
    StepMetrics, TruthMap,
};
use crate::pipeline::{
    process_task, stream_rng, PipelineError, PipelineSettings, Purpose, SimSampler, TaskOutput,
};
use crate::policysim::{
    apply_update, build_suite, sample_generation, GeneratorModel, PolicySimError, SuiteParams,
    SyntheticTask, VerifierModel,
};
use crate::reward::assign_rewards;
use crate::voting::{downsample_for_training, majority_vote, VotingResult};
use crate::SCHEMA_VERSION;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Policy(#[from] PolicySimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("comparison needs at least 2 runs")]
    NeedTwoRuns,
    #[error("mismatched step counts: {0} vs {1}")]
    StepMismatch(usize, usize),
    #[error("runs are not paired: tasks and seed must match for comparison")]
    UnpairedRuns,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// True when the failure is a runtime divergence rather than bad usage.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            HarnessError::Policy(PolicySimError::Diverged)
                | HarnessError::Pipeline(PipelineError::Policy(PolicySimError::Diverged))
        )
    }
}

/// The training method to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coverrl,
    Ttrl,
    TtrlFilter,
    CoverrlUnbalanced,
    CoverrlNoAagrpo,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Coverrl,
        Method::Ttrl,
        Method::TtrlFilter,
        Method::CoverrlUnbalanced,
        Method::CoverrlNoAagrpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Coverrl => "coverrl",
            Method::Ttrl => "ttrl",
            Method::TtrlFilter => "ttrl_filter",
            Method::CoverrlUnbalanced => "coverrl_unbalanced",
            Method::CoverrlNoAagrpo => "coverrl_no_aagrpo",
        }
    }

    fn runs_coevolution(self) -> bool {
        matches!(
            self,
            Method::Coverrl | Method::CoverrlUnbalanced | Method::CoverrlNoAagrpo
        )
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully resolved experiment configuration.
///
/// Defaults depend on the method: co-evolution methods sample 32 first
/// generations, verify at most 8 positives, and collect 6 corrections per
/// rejection; the vote-only baselines sample 64 and downsample 32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// First-turn generation count N.
    pub n_first: usize,
    /// Verification budget M.
    pub m_budget: usize,
    /// Corrections per rejecting judgment K.
    pub k_corrections: usize,
    /// Majority-ratio threshold; used by `ttrl_filter` only.
    pub tau: f64,
    /// Generations kept for training after voting.
    pub downsample: usize,
    /// Training iterations I.
    pub steps: usize,
    /// Suite size; also the per-step batch size (drawn with replacement).
    pub tasks: usize,
    /// Answers per task (3..=10).
    pub answer_space: usize,
    /// Fraction of tasks initialized with a dominant wrong answer.
    pub distractor_fraction: f64,
    /// Initial logit of the dominant wrong answer on those tasks.
    pub distractor_strength: f64,
    /// Learning rate for both policies.
    pub lr: f64,
    pub seed: u64,
    /// Negative-set multiplier; 1 is balanced. Used by `coverrl_unbalanced`.
    pub unbalance_multiplier: usize,
    /// Distance between the quality distributions of correct and incorrect
    /// solutions (simulation knob).
    pub quality_coupling: f64,
    /// Verifier observation noise (simulation knob, > 0).
    pub verifier_noise: f64,
}

impl ExperimentConfig {
    /// Method-appropriate defaults. The seed is a placeholder; `simulate`
    /// requires it explicitly.
    pub fn defaults_for(method: Method) -> Self {
        let coevolution = method.runs_coevolution();
        ExperimentConfig {
            method,
            n_first: if coevolution { 32 } else { 64 },
            m_budget: 8,
            k_corrections: 6,
            tau: 0.2,
            downsample: if coevolution { 16 } else { 32 },
            steps: 300,
            tasks: 200,
            answer_space: 8,
            distractor_fraction: 0.3,
            distractor_strength: 1.2,
            lr: 3e-3,
            seed: 0,
            unbalance_multiplier: if method == Method::CoverrlUnbalanced { 4 } else { 1 },
            quality_coupling: 0.6,
            verifier_noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.n_first < 2 {
            return err(format!("n_first must be >= 2, got {}", self.n_first));
        }
        if self.m_budget < 1 {
            return err("m_budget must be >= 1".into());
        }
        if self.k_corrections < 1 {
            return err("k_corrections must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return err(format!("tau must be in [0, 1], got {}", self.tau));
        }
        if self.downsample < 1 {
            return err("downsample must be >= 1".into());
        }
        if self.steps < 1 {
            return err("steps must be >= 1".into());
        }
        if self.tasks < 1 {
            return err("tasks must be >= 1".into());
        }
        if !(3..=10).contains(&self.answer_space) {
            return err(format!("answer_space must be in 3..=10, got {}", self.answer_space));
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return err("distractor_fraction must be in [0, 1]".into());
        }
        if !self.distractor_strength.is_finite() || self.distractor_strength < 0.0 {
            return err("distractor_strength must be a finite number >= 0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr must be a positive finite number".into());
        }
        if self.unbalance_multiplier < 1 {
            return err("unbalance_multiplier must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.quality_coupling) {
            return err("quality_coupling must be in [0, 1]".into());
        }
        if !self.verifier_noise.is_finite() || self.verifier_noise <= 0.0 {
            return err("verifier_noise must be a finite number > 0".into());
        }
        Ok(())
    }

    /// The resolved config as a TOML document, prefixed with the schema
    /// version. Feeding the echo back in as a config file reproduces the
    /// run.
    pub fn echo(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!("#schema={SCHEMA_VERSION}\n{body}")
    }

    pub fn from_toml_str(text: &str) -> Result<PartialConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }

    /// Resolve defaults, then a config file, then flag overrides, in that
    /// order. The method may come from either layer and decides the
    /// defaults.
    pub fn resolve(
        file: Option<PartialConfig>,
        flags: PartialConfig,
    ) -> Result<ExperimentConfig, HarnessError> {
        let file = file.unwrap_or_default();
        let method = flags.method.or(file.method).unwrap_or(Method::Coverrl);
        let mut config = ExperimentConfig::defaults_for(method);
        config.apply(&file);
        config.apply(&flags);
        config.method = method;
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, partial: &PartialConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = partial.$field.clone() { self.$field = v; })*
            };
        }
        take!(
            method,
            n_first,
            m_budget,
            k_corrections,
            tau,
            downsample,
            steps,
            tasks,
            answer_space,
            distractor_fraction,
            distractor_strength,
            lr,
            seed,
            unbalance_multiplier,
            quality_coupling,
            verifier_noise
        );
    }

    fn suite_params(&self) -> SuiteParams {
        SuiteParams {
            tasks: self.tasks,
            answer_space: self.answer_space,
            distractor_fraction: self.distractor_fraction,
            distractor_strength: self.distractor_strength,
            quality_coupling: self.quality_coupling,
        }
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            m_budget: self.m_budget,
            k_corrections: self.k_corrections,
            downsample: self.downsample,
            grouping: if self.method == Method::CoverrlNoAagrpo {
                GroupingMode::Standard
            } else {
                GroupingMode::AnswerAnchored
            },
            unbalance_multiplier: if self.method == Method::CoverrlUnbalanced {
                self.unbalance_multiplier
            } else {
                1
            },
        }
    }
}

/// A config with every field optional: the shape of config files and flag
/// sets before resolution.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub method: Option<Method>,
    pub n_first: Option<usize>,
    pub m_budget: Option<usize>,
    pub k_corrections: Option<usize>,
    pub tau: Option<f64>,
    pub downsample: Option<usize>,
    pub steps: Option<usize>,
    pub tasks: Option<usize>,
    pub answer_space: Option<usize>,
    pub distractor_fraction: Option<f64>,
    pub distractor_strength: Option<f64>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub unbalance_multiplier: Option<usize>,
    pub quality_coupling: Option<f64>,
    pub verifier_noise: Option<f64>,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub series: Vec<StepMetrics>,
    pub generator: GeneratorModel,
    pub verifier: VerifierModel,
    pub schema: &'static str,
}

impl RunArtifacts {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.series.len() + 1));
        out.push_str(StepMetrics::CSV_HEADER);
        out.push('\n');
        for step in &self.series {
            out.push_str(&step.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn final_metrics(&self) -> &StepMetrics {
        self.series.last().expect("series is never empty")
    }

    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        write_file(path, &self.metrics_csv())
    }

    pub fn write_config_echo(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        write_file(path, &self.config.echo())
    }
}

fn write_file(path: impl AsRef<Path>, content: &str) -> Result<(), HarnessError> {
    let path = path.as_ref();
    std::fs::write(path, content).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Build the synthetic suite and fresh models a config describes. The suite
/// depends only on the config, so a finished run's suite can be rebuilt for
/// inspection.
pub fn build_suite_for(
    config: &ExperimentConfig,
) -> (Vec<SyntheticTask>, GeneratorModel, VerifierModel) {
    let mut rng = stream_rng(config.seed, 0, 0, "suite", Purpose::SuiteBuild);
    let (suite, generator) = build_suite(&config.suite_params(), &mut rng);
    (suite, generator, VerifierModel::new(config.verifier_noise))
}

/// Run one experiment to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, HarnessError> {
    config.validate()?;
    let (suite, mut generator, mut verifier) = build_suite_for(config);
    let truths: TruthMap = suite.iter().map(|t| (t.task.clone(), t.truth.clone())).collect();
    let settings = config.pipeline_settings();

    let mut series = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let step_u64 = step as u64;
        let mut rng_batch = stream_rng(config.seed, step_u64, 0, "batch", Purpose::BatchSelect);
        let batch: Vec<usize> = (0..config.tasks)
            .map(|_| rand::Rng::gen_range(&mut rng_batch, 0..suite.len()))
            .collect();

        if config.method.runs_coevolution() {
            let mut outputs: Vec<TaskOutput> = Vec::with_capacity(batch.len());
            for (slot, task_index) in batch.iter().enumerate() {
                let task = &suite[*task_index];
                let slot_u64 = slot as u64;
                let mut rng_gen = stream_rng(
                    config.seed,
                    step_u64,
                    slot_u64,
                    task.task.as_str(),
                    Purpose::Generation,
                );
                let generations =
                    sample_generation(&generator, task, config.n_first, &mut rng_gen)?;
                let mut sampler = SimSampler::new(
                    &generator,
                    &verifier,
                    task,
                    config.seed,
                    step_u64,
                    slot_u64,
                );
                let mut rng_downsample = stream_rng(
                    config.seed,
                    step_u64,
                    slot_u64,
                    task.task.as_str(),
                    Purpose::Downsample,
                );
                let mut rng_group = stream_rng(
                    config.seed,
                    step_u64,
                    slot_u64,
                    task.task.as_str(),
                    Purpose::GroupSample,
                );
                outputs.push(process_task(
                    generations,
                    &settings,
                    &mut sampler,
                    Some(&task.truth),
                    &mut rng_downsample,
                    &mut rng_group,
                )?);
            }

            series.push(step_metrics_from_outputs(step, &outputs, &truths)?);

            let groups: Vec<AdvantageGroup> = outputs
                .iter_mut()
                .filter_map(|o| o.training.take())
                .flat_map(|t| t.groups)
                .collect();
            apply_update(&mut generator, &mut verifier, &groups, config.lr)?;
        } else {
            let tau = if config.method == Method::TtrlFilter { config.tau } else { 0.0 };
            let mut votes: Vec<VotingResult> = Vec::with_capacity(batch.len());
            let mut retained_flags: Vec<bool> = Vec::with_capacity(batch.len());
            let mut items = Vec::new();
            let mut groups = Vec::new();
            for (slot, task_index) in batch.iter().enumerate() {
                let task = &suite[*task_index];
                let slot_u64 = slot as u64;
                let mut rng_gen = stream_rng(
                    config.seed,
                    step_u64,
                    slot_u64,
                    task.task.as_str(),
                    Purpose::Generation,
                );
                let generations =
                    sample_generation(&generator, task, config.n_first, &mut rng_gen)?;
                let vote = majority_vote(generations).map_err(PipelineError::from)?;
                let retained = vote.majority_ratio >= tau;
                if retained {
                    let mut rng_downsample = stream_rng(
                        config.seed,
                        step_u64,
                        slot_u64,
                        task.task.as_str(),
                        Purpose::Downsample,
                    );
                    let training =
                        downsample_for_training(&vote, config.downsample, &mut rng_downsample);
                    let rewarded =
                        assign_rewards(&training, &vote.pseudo_label, Some(&task.truth))
                            .map_err(PipelineError::from)?;
                    let mut rng_group = stream_rng(
                        config.seed,
                        step_u64,
                        slot_u64,
                        task.task.as_str(),
                        Purpose::GroupSample,
                    );
                    let task_groups = group_and_normalize(
                        rewarded.clone(),
                        &vote.pseudo_label,
                        GroupingMode::AnswerAnchored,
                        &mut rng_group,
                    )
                    .map_err(PipelineError::from)?;
                    items.extend(rewarded);
                    groups.extend(task_groups);
                }
                retained_flags.push(retained);
                votes.push(vote);
            }

            series.push(vote_only_step_metrics(step, &votes, &retained_flags, &items, &truths)?);
            apply_update(&mut generator, &mut verifier, &groups, config.lr)?;
        }
    }

    Ok(RunArtifacts {
        config: config.clone(),
        series,
        generator,
        verifier,
        schema: SCHEMA_VERSION,
    })
}

/// Aggregate one step's task outputs into a metrics row. Public so that
/// offline pipeline runs can be summarized identically to simulated steps.
pub fn step_metrics_from_outputs(
    step: usize,
    outputs: &[TaskOutput],
    truths: &TruthMap,
) -> Result<StepMetrics, HarnessError> {
    let retained_votes = outputs
        .iter()
        .filter(|o| o.training.is_some())
        .map(|o| &o.vote);
    let (label, _defined) = label_accuracy(retained_votes, truths)?;
    let (label_prefilter, _) = label_accuracy(outputs.iter().map(|o| &o.vote), truths)?;
    let (tnr, fpr) = filter_rates(outputs.iter().map(|o| &o.decision), truths)?;
    let records = outputs.iter().flat_map(|o| o.verification_records());
    let (correct_recall, wrong_recall) = verifier_recalls(records, truths)?;
    let items = outputs
        .iter()
        .filter_map(|o| o.training.as_ref())
        .flat_map(|t| t.items.iter());
    let acc = reward_accuracy(items)?;
    let (answer_entropy, mean_majority_ratio) = diversity(outputs.iter().map(|o| &o.vote));
    let retained = outputs.iter().filter(|o| o.training.is_some()).count();

    Ok(StepMetrics {
        step,
        label_accuracy: label,
        reward_accuracy: acc.pooled,
        tnr,
        fpr,
        correct_recall,
        wrong_recall,
        mean_majority_ratio,
        answer_entropy,
        retained_fraction: retained as f64 / outputs.len() as f64,
        label_accuracy_prefilter: label_prefilter,
        reward_accuracy_generation: acc.generation,
        reward_accuracy_verification: acc.verification,
        reward_accuracy_correction: acc.correction,
    })
}

fn vote_only_step_metrics(
    step: usize,
    votes: &[VotingResult],
    retained_flags: &[bool],
    items: &[crate::reward::RewardedItem],
    truths: &TruthMap,
) -> Result<StepMetrics, HarnessError> {
    let retained_votes = votes
        .iter()
        .zip(retained_flags)
        .filter(|(_, kept)| **kept)
        .map(|(v, _)| v);
    let (label, _defined) = label_accuracy(retained_votes, truths)?;
    let (label_prefilter, _) = label_accuracy(votes.iter(), truths)?;
    let acc = reward_accuracy(items.iter())?;
    let (answer_entropy, mean_majority_ratio) = diversity(votes.iter());
    let retained = retained_flags.iter().filter(|k| **k).count();

    Ok(StepMetrics {
        step,
        label_accuracy: label,
        reward_accuracy: acc.pooled,
        tnr: None,
        fpr: None,
        correct_recall: None,
        wrong_recall: None,
        mean_majority_ratio,
        answer_entropy,
        retained_fraction: retained as f64 / votes.len() as f64,
        label_accuracy_prefilter: label_prefilter,
        reward_accuracy_generation: acc.generation,
        reward_accuracy_verification: acc.verification,
        reward_accuracy_correction: acc.correction,
    })
}

/// A labeled metric series; what [`compare_series`] consumes. Runs carry
/// their config, series read back from bare CSVs may not.
#[derive(Clone, Debug)]
pub struct MetricsSeries {
    pub label: String,
    pub config: Option<ExperimentConfig>,
    pub steps: Vec<StepMetrics>,
}

impl From<&RunArtifacts> for MetricsSeries {
    fn from(run: &RunArtifacts) -> Self {
        MetricsSeries {
            label: format!("{}_seed{}", run.config.method, run.config.seed),
            config: Some(run.config.clone()),
            steps: run.series.clone(),
        }
    }
}

/// Pair up runs and emit per-step label/reward-accuracy deltas against the
/// first run, plus a final-step summary row (step column `final`).
///
/// Runs must share the task suite and seed; series with configs are
/// validated, and all series must have equal step counts.
pub fn compare_runs(runs: &[&RunArtifacts]) -> Result<String, HarnessError> {
    let series: Vec<MetricsSeries> = runs.iter().map(|r| MetricsSeries::from(*r)).collect();
    compare_series(&series)
}

pub fn compare_series(series: &[MetricsSeries]) -> Result<String, HarnessError> {
    if series.len() < 2 {
        return Err(HarnessError::NeedTwoRuns);
    }
    let steps = series[0].steps.len();
    for s in &series[1..] {
        if s.steps.len() != steps {
            return Err(HarnessError::StepMismatch(steps, s.steps.len()));
        }
    }
    let configs: Vec<&ExperimentConfig> = series.iter().filter_map(|s| s.config.as_ref()).collect();
    if configs.len() == series.len() {
        let (tasks, seed) = (configs[0].tasks, configs[0].seed);
        if configs.iter().any(|c| c.tasks != tasks || c.seed != seed) {
            return Err(HarnessError::UnpairedRuns);
        }
    }

    let mut out = String::new();
    out.push_str("step");
    for s in series {
        out.push_str(&format!(",label_{0},reward_{0}", s.label));
    }
    for s in &series[1..] {
        out.push_str(&format!(",delta_label_{0},delta_reward_{0}", s.label));
    }
    out.push('\n');

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut push_row = |tag: &str, index: usize| {
        let mut row = tag.to_string();
        for s in series {
            let m = &s.steps[index];
            row.push_str(&format!(",{},{}", m.label_accuracy, opt(m.reward_accuracy)));
        }
        let base = &series[0].steps[index];
        for s in &series[1..] {
            let m = &s.steps[index];
            let dl = m.label_accuracy - base.label_accuracy;
            let dr = match (m.reward_accuracy, base.reward_accuracy) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            };
            row.push_str(&format!(",{},{}", dl, opt(dr)));
        }
        row.push('\n');
        out.push_str(&row);
    };
    for index in 0..steps {
        push_row(&series[0].steps[index].step.to_string(), index);
    }
    push_row("final", steps - 1);
    Ok(out)
}

/// Read a metrics CSV produced by [`RunArtifacts::write_metrics_csv`]. If a
/// config echo sits next to it (`config.echo`), it is attached for pairing
/// validation.
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<MetricsSeries, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let steps: Vec<StepMetrics> = text
        .lines()
        .skip(1)
        .filter_map(StepMetrics::from_csv_row)
        .collect();
    if steps.is_empty() {
        return Err(HarnessError::InvalidConfig(format!(
            "{} contains no metric rows",
            path.display()
        )));
    }
    let config = path
        .parent()
        .map(|dir| dir.join("config.echo"))
        .filter(|p| p.exists())
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|text| ExperimentConfig::from_toml_str(&text).ok())
        .and_then(|partial| ExperimentConfig::resolve(Some(partial), PartialConfig::default()).ok());
    let label = path
        .parent()
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(MetricsSeries { label, config, steps })
}

/// Build the config one sweep cell runs: the method's own defaults for the
/// sampling-shape knobs (`n_first`, `downsample`) unless the cell runs the
/// base method itself, everything suite- and loop-shaped carried over from
/// the base.
pub fn sweep_cell(base: &ExperimentConfig, method: Method, seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig::defaults_for(method);
    if method == base.method {
        config.n_first = base.n_first;
        config.downsample = base.downsample;
        config.unbalance_multiplier = base.unbalance_multiplier;
    }
    config.m_budget = base.m_budget;
    config.k_corrections = base.k_corrections;
    config.tau = base.tau;
    config.steps = base.steps;
    config.tasks = base.tasks;
    config.answer_space = base.answer_space;
    config.distractor_fraction = base.distractor_fraction;
    config.distractor_strength = base.distractor_strength;
    config.lr = base.lr;
    config.quality_coupling = base.quality_coupling;
    config.verifier_noise = base.verifier_noise;
    config.seed = seed;
    config
}

/// Run a (method x seed) grid in parallel. Results come back ordered by
/// (method order in `methods`, seed order in `seeds`), independent of
/// scheduling.
pub fn run_sweep(
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<Vec<RunArtifacts>, HarnessError> {
    let mut cells = Vec::new();
    for method in methods {
        for seed in seeds {
            cells.push(sweep_cell(base, *method, *seed));
        }
    }
    cells
        .par_iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>, _>>()
}

/// Per-run summary rows plus a median row per method.
pub fn summarize_sweep(runs: &[RunArtifacts]) -> String {
    let mut out = String::from(
        "method,seed,final_label_accuracy,final_reward_accuracy,peak_reward_accuracy,reward_decline,final_tnr,final_fpr,final_correct_recall,final_wrong_recall\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    #[derive(Default)]
    struct Agg {
        label: Vec<f64>,
        reward: Vec<f64>,
        peak: Vec<f64>,
        decline: Vec<f64>,
        tnr: Vec<f64>,
        fpr: Vec<f64>,
        correct: Vec<f64>,
        wrong: Vec<f64>,
    }
    let mut by_method: std::collections::BTreeMap<&str, Agg> = Default::default();

    for run in runs {
        let last = run.final_metrics();
        let peak = run
            .series
            .iter()
            .filter_map(|m| m.reward_accuracy)
            .fold(f64::NAN, f64::max);
        let decline = last.reward_accuracy.map(|r| peak - r);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            run.config.method,
            run.config.seed,
            last.label_accuracy,
            opt(last.reward_accuracy),
            if peak.is_nan() { String::new() } else { peak.to_string() },
            opt(decline),
            opt(last.tnr),
            opt(last.fpr),
            opt(last.correct_recall),
            opt(last.wrong_recall),
        ));
        let agg = by_method.entry(run.config.method.as_str()).or_default();
        agg.label.push(last.label_accuracy);
        if let Some(r) = last.reward_accuracy {
            agg.reward.push(r);
        }
        if !peak.is_nan() {
            agg.peak.push(peak);
        }
        if let Some(d) = decline {
            agg.decline.push(d);
        }
        if let Some(v) = last.tnr {
            agg.tnr.push(v);
        }
        if let Some(v) = last.fpr {
            agg.fpr.push(v);
        }
        if let Some(v) = last.correct_recall {
            agg.correct.push(v);
        }
        if let Some(v) = last.wrong_recall {
            agg.wrong.push(v);
        }
    }

    let med = |values: &[f64]| -> String {
        median(values).map(|m| m.to_string()).unwrap_or_default()
    };
    for (method, agg) in by_method {
        out.push_str(&format!(
            "{},median,{},{},{},{},{},{},{},{}\n",
            method,
            med(&agg.label),
            med(&agg.reward),
            med(&agg.peak),
            med(&agg.decline),
            med(&agg.tnr),
            med(&agg.fpr),
            med(&agg.correct),
            med(&agg.wrong),
        ));
    }
    out
}

/// Median of a sample; `None` when empty. Averages the middle pair for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are comparable"));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(method: Method, seed: u64) -> ExperimentConfig {
        let mut config = ExperimentConfig::defaults_for(method);
        config.tasks = 24;
        config.steps = 8;
        config.n_first = 16;
        config.downsample = 8;
        config.seed = seed;
        config.lr = 5e-3;
        config
    }

    #[test]
    fn defaults_mirror_method_presets() {
        let coverrl = ExperimentConfig::defaults_for(Method::Coverrl);
        assert_eq!((coverrl.n_first, coverrl.m_budget, coverrl.k_corrections), (32, 8, 6));
        assert_eq!(coverrl.downsample, 16);
        let ttrl = ExperimentConfig::defaults_for(Method::Ttrl);
        assert_eq!((ttrl.n_first, ttrl.downsample), (64, 32));
        let unbalanced = ExperimentConfig::defaults_for(Method::CoverrlUnbalanced);
        assert_eq!(unbalanced.unbalance_multiplier, 4);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
        config.n_first = 1;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
        config.tau = 1.5;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
        config.answer_space = 2;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_echo_round_trips() {
        let mut config = ExperimentConfig::defaults_for(Method::TtrlFilter);
        config.seed = 99;
        config.tau = 0.1;
        let echo = config.echo();
        let partial = ExperimentConfig::from_toml_str(&echo).unwrap();
        let resolved = ExperimentConfig::resolve(Some(partial), PartialConfig::default()).unwrap();
        assert_eq!(resolved, config);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let file = ExperimentConfig::from_toml_str("method = \"ttrl\"\nsteps = 50\n").unwrap();
        let flags = PartialConfig { steps: Some(7), seed: Some(3), ..Default::default() };
        let resolved = ExperimentConfig::resolve(Some(file), flags).unwrap();
        assert_eq!(resolved.method, Method::Ttrl);
        assert_eq!(resolved.steps, 7);
        assert_eq!(resolved.seed, 3);
        assert_eq!(resolved.n_first, 64); // ttrl default
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("nfirst = 3\n").is_err());
    }

    #[test]
    fn identical_config_and_seed_give_identical_csv() {
        let config = tiny_config(Method::Coverrl, 11);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        let other = run_experiment(&tiny_config(Method::Coverrl, 12)).unwrap();
        assert_ne!(a.metrics_csv(), other.metrics_csv());
    }

    #[test]
    fn ttrl_with_zero_tau_equals_plain_ttrl() {
        let mut filter_config = tiny_config(Method::TtrlFilter, 5);
        filter_config.tau = 0.0;
        let mut plain_config = tiny_config(Method::Ttrl, 5);
        plain_config.tau = 0.0;
        let filtered = run_experiment(&filter_config).unwrap();
        let plain = run_experiment(&plain_config).unwrap();
        assert_eq!(filtered.metrics_csv(), plain.metrics_csv());
    }

    #[test]
    fn unit_multiplier_equals_balanced_coverrl() {
        let mut unbalanced = tiny_config(Method::CoverrlUnbalanced, 5);
        unbalanced.unbalance_multiplier = 1;
        let balanced = tiny_config(Method::Coverrl, 5);
        let a = run_experiment(&unbalanced).unwrap();
        let b = run_experiment(&balanced).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }

    #[test]
    fn compare_requires_two_paired_runs() {
        let a = run_experiment(&tiny_config(Method::Coverrl, 5)).unwrap();
        assert!(matches!(compare_runs(&[&a]), Err(HarnessError::NeedTwoRuns)));

        let b = run_experiment(&tiny_config(Method::Ttrl, 5)).unwrap();
        let table = compare_runs(&[&a, &b]).unwrap();
        // header + one row per step + final summary
        assert_eq!(table.lines().count(), 1 + a.series.len() + 1);
        assert!(table.lines().last().unwrap().starts_with("final,"));

        let unpaired = run_experiment(&tiny_config(Method::Ttrl, 6)).unwrap();
        assert!(matches!(compare_runs(&[&a, &unpaired]), Err(HarnessError::UnpairedRuns)));

        let mut short = tiny_config(Method::Ttrl, 5);
        short.steps = 3;
        let short_run = run_experiment(&short).unwrap();
        assert!(matches!(
            compare_runs(&[&a, &short_run]),
            Err(HarnessError::StepMismatch(_, _))
        ));
    }

    #[test]
    fn truth_probability_rises_without_distractors() {
        // distractor_strength = 0 with adequate lr: the generator's mass on
        // the truth must rise (median over 20 seeds).
        let mut deltas = Vec::new();
        for seed in 0..20 {
            let mut config = tiny_config(Method::Coverrl, seed);
            config.distractor_strength = 0.0;
            config.steps = 12;
            let (suite, initial_gen, _) = build_suite_for(&config);
            let initial = initial_gen.mean_truth_probability(&suite);
            let run = run_experiment(&config).unwrap();
            let final_p = run.generator.mean_truth_probability(&suite);
            deltas.push(final_p - initial);
        }
        let med = median(&deltas).unwrap();
        assert!(med > 0.0, "median truth-probability delta {med} should be positive");
    }

    #[test]
    fn vote_only_training_keeps_every_voted_task() {
        let run = run_experiment(&tiny_config(Method::Ttrl, 2)).unwrap();
        assert!(run.series.iter().all(|m| m.retained_fraction == 1.0));
        assert!(run
            .series
            .iter()
            .all(|m| m.label_accuracy == m.label_accuracy_prefilter));
        assert!(run.series.iter().all(|m| m.tnr.is_none() && m.fpr.is_none()));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[1.0, 2.0, 4.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), Some(2.5));
    }
}
