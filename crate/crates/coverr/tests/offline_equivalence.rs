//! The offline path must be the same pipeline as the simulator, just with a
//! different trajectory source: replaying a dump of a simulated pass through
//! the ingest front end has to reproduce the simulated pass exactly, metric
//! for metric and advantage for advantage. Plus the dump-format edge cases.

use coverr::harness::{build_suite_for, step_metrics_from_outputs, ExperimentConfig, Method};
use coverr::ingest::{
    batch_records, dump_writer, emit_batches, load_rollouts, run_offline_pipeline, IngestError,
    RolloutRecord,
};
use coverr::metrics::TruthMap;
use coverr::pipeline::{process_task, stream_rng, Purpose, SimSampler, TaskOutput};
use coverr::policysim::sample_generation;
use std::io::Write;

/// One deterministic pass over the suite (step 0, slot = suite order),
/// returning both the outputs and the dump text describing them.
fn simulate_pass(config: &ExperimentConfig) -> (Vec<TaskOutput>, String, TruthMap) {
    let (suite, generator, mut verifier) = build_suite_for(config);
    verifier.weight = 1.5;
    verifier.bias = -0.75;
    let settings = config.pipeline_settings();
    let truths: TruthMap = suite.iter().map(|t| (t.task.clone(), t.truth.clone())).collect();

    let mut outputs = Vec::new();
    let mut dump = format!("#schema={}\n", coverr::SCHEMA_VERSION);
    for (slot, task) in suite.iter().enumerate() {
        let mut rng_gen =
            stream_rng(config.seed, 0, slot as u64, task.task.as_str(), Purpose::Generation);
        let generations =
            sample_generation(&generator, task, config.n_first, &mut rng_gen).unwrap();
        for rollout in &generations {
            dump.push_str(&dump_writer::generation_line(rollout, Some(&task.truth)));
            dump.push('\n');
        }
        let mut sampler = SimSampler::new(&generator, &verifier, task, config.seed, 0, slot as u64);
        let mut rng_down =
            stream_rng(config.seed, 0, slot as u64, task.task.as_str(), Purpose::Downsample);
        let mut rng_group =
            stream_rng(config.seed, 0, slot as u64, task.task.as_str(), Purpose::GroupSample);
        let output = process_task(
            generations,
            &settings,
            &mut sampler,
            Some(&task.truth),
            &mut rng_down,
            &mut rng_group,
        )
        .unwrap();

        for record in &output.decision.verified {
            dump.push_str(&dump_writer::verification_line(record, record.solution.sample_index));
            dump.push('\n');
        }
        if let Some(training) = &output.training {
            for record in &training.negative {
                dump.push_str(&dump_writer::verification_line(
                    record,
                    record.solution.sample_index,
                ));
                dump.push('\n');
            }
            for set in &training.corrections {
                for line in dump_writer::correction_lines(set, set.trigger_ordinal) {
                    dump.push_str(&line);
                    dump.push('\n');
                }
            }
        }
        outputs.push(output);
    }
    (outputs, dump, truths)
}

#[test]
fn replayed_dump_reproduces_the_simulated_pass() {
    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.tasks = 40;
    config.n_first = 16;
    config.m_budget = 5;
    config.k_corrections = 3;
    config.downsample = 8;
    config.seed = 21;

    let (sim_outputs, dump, truths) = simulate_pass(&config);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pass.jsonl");
    std::fs::write(&path, &dump).unwrap();
    let loaded = load_rollouts(&path).unwrap();
    assert_eq!(loaded.summary.tasks, config.tasks);
    assert_eq!(loaded.summary.malformed_skipped, 0);
    assert_eq!(loaded.summary.undecided_verdicts, 0);
    assert_eq!(loaded.truths(), truths);

    let replay_outputs =
        run_offline_pipeline(&loaded, &config.pipeline_settings(), config.seed).unwrap();
    assert_eq!(replay_outputs.len(), sim_outputs.len());

    // metric-for-metric equality over the whole pass
    let sim_metrics = step_metrics_from_outputs(0, &sim_outputs, &truths).unwrap();
    let replay_metrics = step_metrics_from_outputs(0, &replay_outputs, &truths).unwrap();
    assert_eq!(sim_metrics, replay_metrics);

    // and advantage-for-advantage equality of the training batches
    let sim_batches = batch_records(&sim_outputs).unwrap();
    let replay_batches = batch_records(&replay_outputs).unwrap();
    assert_eq!(sim_batches.len(), replay_batches.len());
    for (a, b) in sim_batches.iter().zip(&replay_batches) {
        assert_eq!(a, b);
        assert_eq!(a.advantage.to_bits(), b.advantage.to_bits());
    }
}

#[test]
fn pipeline_reward_accuracy_is_exact_when_labels_are() {
    // whenever a step's retained pseudo-labels are all correct, assigned
    // rewards agree with oracle rewards exactly
    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.tasks = 30;
    config.steps = 80;
    config.seed = 5;
    let run = coverr::harness::run_experiment(&config).unwrap();
    let mut exercised = 0;
    for m in &run.series {
        if m.label_accuracy == 1.0 && m.retained_fraction > 0.0 {
            assert_eq!(m.reward_accuracy, Some(1.0), "step {}", m.step);
            exercised += 1;
        }
    }
    assert!(exercised > 0, "no fully-correct steps exercised");
}

fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.jsonl");
    let mut file = std::fs::File::create(&path).unwrap();
    for line in lines {
        writeln!(file, "{line}").unwrap();
    }
    (dir, path)
}

fn gen_line(task: &str, answer: &str) -> String {
    serde_json::to_string(&RolloutRecord {
        task_id: task.to_string(),
        role: "generation".to_string(),
        text: format!("The answer is \\boxed{{{answer}}}"),
        parent_id: None,
        ground_truth: None,
    })
    .unwrap()
}

#[test]
fn loader_counts_and_skips_malformed_lines() {
    let a = gen_line("q1", "5");
    let b = gen_line("q1", "5");
    let missing_task = serde_json::to_string(&RolloutRecord {
        task_id: String::new(),
        role: "generation".to_string(),
        text: "The answer is \\boxed{5}".to_string(),
        parent_id: None,
        ground_truth: None,
    })
    .unwrap();
    let lines: Vec<&str> = vec![&a, &b, &missing_task];
    let (_dir, path) = write_lines(&lines);
    // 1 malformed of 3 lines is above 10%: loading fails...
    assert!(matches!(
        load_rollouts(&path),
        Err(IngestError::TooManyMalformed { malformed: 1, total: 3 })
    ));

    // ...but below the threshold it is skipped with a counted warning
    let good: Vec<String> = (0..20).map(|i| gen_line("q1", &i.to_string())).collect();
    let mut lines: Vec<&str> = good.iter().map(|s| s.as_str()).collect();
    lines.push(&missing_task);
    let (_dir, path) = write_lines(&lines);
    let loaded = load_rollouts(&path).unwrap();
    assert_eq!(loaded.summary.malformed_skipped, 1);
    assert_eq!(loaded.summary.records, 20);
}

#[test]
fn loader_rejects_empty_and_unknown_schema() {
    let (_dir, path) = write_lines(&[]);
    assert!(matches!(load_rollouts(&path), Err(IngestError::NoRecords)));

    let (_dir, path) = write_lines(&["#schema=coverr.v0", &gen_line("q1", "5")]);
    assert!(matches!(load_rollouts(&path), Err(IngestError::UnsupportedSchema(_))));
}

#[test]
fn undecided_judgments_count_and_reject() {
    let gens: Vec<String> = (0..4).map(|_| gen_line("q1", "5")).collect();
    let vague = serde_json::to_string(&RolloutRecord {
        task_id: "q1".to_string(),
        role: "verification".to_string(),
        text: "hard to say, really".to_string(),
        parent_id: Some("0".to_string()),
        ground_truth: None,
    })
    .unwrap();
    let mut lines: Vec<&str> = gens.iter().map(|s| s.as_str()).collect();
    lines.push(&vague);
    let (_dir, path) = write_lines(&lines);
    let loaded = load_rollouts(&path).unwrap();
    assert_eq!(loaded.summary.undecided_verdicts, 1);
    let dump = &loaded.tasks[&coverr::TaskId::new("q1")];
    assert_eq!(dump.verifications.len(), 1);
    assert_eq!(dump.verifications[0].1.verdict, Some(coverr::Verdict::Wrong));
    // an unparseable judgment also fails the format requirement
    assert!(!dump.verifications[0].1.format_ok);
}

#[test]
fn format_reward_comes_from_the_text() {
    let boxed = gen_line("q1", "5");
    let bare = serde_json::to_string(&RolloutRecord {
        task_id: "q1".to_string(),
        role: "generation".to_string(),
        text: "it is probably 5".to_string(),
        parent_id: None,
        ground_truth: None,
    })
    .unwrap();
    let (_dir, path) = write_lines(&[&boxed, &bare]);
    let loaded = load_rollouts(&path).unwrap();
    let dump = &loaded.tasks[&coverr::TaskId::new("q1")];
    assert!(dump.generations[0].format_ok);
    assert!(!dump.generations[1].format_ok);
    // both still canonicalize to an answer
    assert_eq!(dump.generations[0].answer.as_str(), "5");
    assert_eq!(dump.generations[1].answer.as_str(), "it is probably 5");
}

#[test]
fn batch_counts_follow_the_pipeline_arithmetic() {
    // A retained task with |V+| = |V-| = 8, K = 6 and exactly one rejecting
    // judgment emits: downsampled generations + 16 verifications + 6
    // corrections.
    let mut lines: Vec<String> = Vec::new();
    // 20 generations: 12 for the majority answer, 8 spread over others
    for i in 0..20 {
        let answer = match i % 5 {
            0..=2 => "7",
            3 => "3",
            _ => "4",
        };
        lines.push(gen_line("q1", answer));
    }
    // 8 accepting verifications of majority solutions (indices of answer-7
    // generations: i % 5 in {0,1,2} -> 0,1,2,5,6,7,10,11)
    for idx in [0, 1, 2, 5, 6, 7, 10, 11] {
        lines.push(
            serde_json::to_string(&RolloutRecord {
                task_id: "q1".to_string(),
                role: "verification".to_string(),
                text: "Looks right. The answer is correct.".to_string(),
                parent_id: Some(idx.to_string()),
                ground_truth: None,
            })
            .unwrap(),
        );
    }
    // negative anchor: answers {3: 4, 4: 4} tie -> "3" wins, lowest index 3.
    // 7 accepting + 1 rejecting verifications of it (the single rejection).
    for i in 0..8 {
        let text = if i == 0 {
            "Step two is invalid. The answer is wrong."
        } else {
            "Seems fine. The answer is correct."
        };
        lines.push(
            serde_json::to_string(&RolloutRecord {
                task_id: "q1".to_string(),
                role: "verification".to_string(),
                text: text.to_string(),
                parent_id: Some("3".to_string()),
                ground_truth: None,
            })
            .unwrap(),
        );
    }
    // 6 corrections for the rejecting judgment, which is verification #8
    // in file order (0-7 are the positives)
    for _ in 0..6 {
        lines.push(
            serde_json::to_string(&RolloutRecord {
                task_id: "q1".to_string(),
                role: "correction".to_string(),
                text: "Redoing it: the answer is \\boxed{7}".to_string(),
                parent_id: Some("8".to_string()),
                ground_truth: None,
            })
            .unwrap(),
        );
    }

    let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
    let (dir, path) = write_lines(&refs);

    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.m_budget = 8;
    config.k_corrections = 6;
    config.downsample = 10;
    config.seed = 2;
    let loaded = load_rollouts(&path).unwrap();
    let outputs = run_offline_pipeline(&loaded, &config.pipeline_settings(), config.seed).unwrap();
    assert_eq!(outputs.len(), 1);
    let training = outputs[0].training.as_ref().expect("8/8 accepts retain the task");
    assert_eq!(training.positive.len(), 8);
    assert_eq!(training.negative.len(), 8);
    assert_eq!(training.corrections.len(), 1);
    assert_eq!(training.corrections[0].revisions.len(), 6);

    let batch_path = dir.path().join("batches.jsonl");
    let written = emit_batches(&outputs, &batch_path).unwrap();
    assert_eq!(written, 10 + 16 + 6);

    let records = batch_records(&outputs).unwrap();
    let count = |role: &str| records.iter().filter(|r| r.role == role).count();
    assert_eq!(count("generation"), 10);
    assert_eq!(count("verification"), 16);
    assert_eq!(count("correction"), 6);
}

#[test]
fn no_retained_tasks_emit_zero_records() {
    // every verification rejects: the consensus filter drops the task
    let mut lines: Vec<String> = (0..6).map(|_| gen_line("q1", "7")).collect();
    for idx in 0..3 {
        lines.push(
            serde_json::to_string(&RolloutRecord {
                task_id: "q1".to_string(),
                role: "verification".to_string(),
                text: "No. The answer is wrong.".to_string(),
                parent_id: Some(idx.to_string()),
                ground_truth: None,
            })
            .unwrap(),
        );
    }
    let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
    let (dir, path) = write_lines(&refs);
    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.m_budget = 3;
    config.seed = 0;
    let loaded = load_rollouts(&path).unwrap();
    let outputs = run_offline_pipeline(&loaded, &config.pipeline_settings(), config.seed).unwrap();
    assert!(outputs[0].training.is_none());
    let batch_path = dir.path().join("batches.jsonl");
    assert_eq!(emit_batches(&outputs, &batch_path).unwrap(), 0);
    // the file still carries its schema header
    let content = std::fs::read_to_string(&batch_path).unwrap();
    assert_eq!(content, format!("#schema={}\n", coverr::SCHEMA_VERSION));
}
