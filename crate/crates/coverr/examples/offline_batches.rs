//! The offline path: parse a line-delimited rollout dump, run the same
//! voting / filtering / contrastive / reward / advantage pipeline that the
//! simulator uses, and emit training-ready batch records. No policy lives
//! here; a downstream trainer consumes the batches.
//!
//! ```bash
//! cargo run --release --example offline_batches
//! ```

use coverr::harness::{ExperimentConfig, Method};
use coverr::ingest::{
    batch_records, emit_batches, load_batches, load_rollouts, run_offline_pipeline, RolloutRecord,
};

fn record(task: &str, role: &str, text: &str, parent: Option<usize>) -> String {
    serde_json::to_string(&RolloutRecord {
        task_id: task.to_string(),
        role: role.to_string(),
        text: text.to_string(),
        parent_id: parent.map(|p| p.to_string()),
        ground_truth: Some("33".to_string()),
    })
    .unwrap()
}

fn main() {
    // A miniature dump: one task, eight solution attempts, five judgments of
    // the majority answer, five of the rarest minority answer, and revisions
    // for the one rejecting judgment.
    let mut lines = vec![format!("#schema={}", coverr::SCHEMA_VERSION)];
    let answers = ["33", "33", "33", "33", "33", "35", "34", "34"];
    for answer in answers {
        lines.push(record("q17", "generation", &format!("m+n = 25+8 = \\boxed{{{answer}}}"), None));
    }
    for solution in [0usize, 1, 2, 3, 4] {
        lines.push(record(
            "q17",
            "verification",
            "Each step checks out. The answer is correct.",
            Some(solution),
        ));
    }
    // the minority anchor is the lone "35" (generation #5)
    for i in 0..5 {
        let text = if i < 4 {
            "The logarithm step is inconsistent. The answer is wrong."
        } else {
            "Hmm. The answer is correct."
        };
        lines.push(record("q17", "verification", text, Some(5)));
    }
    // corrections for the first rejecting judgment (verification #5 in file order)
    for _ in 0..3 {
        lines.push(record("q17", "correction", "Fixing step 3: \\boxed{33}", Some(5)));
    }

    let dir = tempfile::tempdir().unwrap();
    let dump_path = dir.path().join("rollouts.jsonl");
    std::fs::write(&dump_path, lines.join("\n") + "\n").unwrap();

    let dump = load_rollouts(&dump_path).unwrap();
    println!(
        "loaded {} records, {} task(s), {} malformed line(s), {} undecided judgment(s)",
        dump.summary.records, dump.summary.tasks, dump.summary.malformed_skipped, dump.summary.undecided_verdicts
    );

    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.m_budget = 5;
    config.k_corrections = 3;
    config.downsample = 6;
    config.seed = 0;

    let outputs = run_offline_pipeline(&dump, &config.pipeline_settings(), config.seed).unwrap();
    let output = &outputs[0];
    println!(
        "\npseudo-label '{}' with ratio {:.3}; filter kept the task: {}",
        output.vote.pseudo_label, output.vote.majority_ratio, output.decision.retained
    );

    let batch_path = dir.path().join("batches.jsonl");
    let written = emit_batches(&outputs, &batch_path).unwrap();
    println!("wrote {written} batch records:");
    for record in batch_records(&outputs).unwrap() {
        println!(
            "   {} {:12} {:24} reward {} advantage {:+.4} ({})",
            record.task_id, record.role, record.group_key, record.reward, record.advantage, record.item_ref
        );
    }

    let reloaded = load_batches(&batch_path).unwrap();
    println!(
        "\nre-parsed {} records; rewards and advantages round-trip exactly: {}",
        reloaded.len(),
        reloaded == batch_records(&outputs).unwrap()
    );
}
