//! Walk one task through every stage of the training-signal pipeline:
//! sampling, majority voting, budgeted verification with the strict-majority
//! filter, contrastive set construction, self-correction, rewards, and
//! group-relative advantages.
//!
//! ```bash
//! cargo run --release --example single_task_walkthrough
//! ```

use coverr::advantage::GroupAnchor;
use coverr::core::Verdict;
use coverr::harness::{build_suite_for, ExperimentConfig, Method};
use coverr::pipeline::{process_task, stream_rng, Purpose, SimSampler};
use coverr::policysim::sample_generation;

fn main() {
    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.tasks = 4;
    config.seed = 42;
    config.k_corrections = 3;

    let (suite, generator, mut verifier) = build_suite_for(&config);
    // give the verifier a head start (as if mid-training) so the
    // walkthrough shows a working filter instead of coin flips
    verifier.weight = 10.0;
    verifier.bias = -5.0;

    // task 0 is a distractor task (a wrong answer starts with the highest
    // logit and wins the vote); task 1 is clean. Walking both shows the
    // filter rejecting a self-consistent error and the full co-evolution
    // data built for a retained task.
    for task_index in [0usize, 1] {
        walk(&config, &suite[task_index], &generator, &verifier, task_index as u64);
        println!();
    }
}

fn walk(
    config: &ExperimentConfig,
    task: &coverr::SyntheticTask,
    generator: &coverr::GeneratorModel,
    verifier: &coverr::VerifierModel,
    slot: u64,
) {
    println!("task {}", task.task);
    println!("  answer space: {:?}", task.answer_space.iter().map(|a| a.to_string()).collect::<Vec<_>>());
    println!("  true answer:  {}", task.truth);
    println!("  distractor strength: {}", task.distractor_strength);

    let mut rng_gen = stream_rng(config.seed, 0, slot, task.task.as_str(), Purpose::Generation);
    let generations = sample_generation(generator, task, config.n_first, &mut rng_gen).unwrap();

    let mut sampler = SimSampler::new(generator, verifier, task, config.seed, 0, slot);
    let mut rng_down = stream_rng(config.seed, 0, slot, task.task.as_str(), Purpose::Downsample);
    let mut rng_group = stream_rng(config.seed, 0, slot, task.task.as_str(), Purpose::GroupSample);
    let output = process_task(
        generations,
        &config.pipeline_settings(),
        &mut sampler,
        Some(&task.truth),
        &mut rng_down,
        &mut rng_group,
    )
    .unwrap();

    println!("\nmajority vote over {} samples:", output.vote.n);
    for (answer, count) in &output.vote.histogram {
        let marker = if *answer == output.vote.pseudo_label { " <- pseudo-label" } else { "" };
        println!("  {answer}: {count}{marker}");
    }
    println!("  majority ratio {:.3}", output.vote.majority_ratio);
    println!(
        "  pseudo-label {} the true answer",
        if output.vote.pseudo_label == task.truth { "matches" } else { "MISSES" }
    );

    let verdicts: Vec<u8> = output.decision.verified.iter().map(|r| r.verdict.as_bit()).collect();
    println!(
        "\nconsensus filter: {} accepts of {} judgments {:?} -> {}",
        output.decision.votes_for,
        output.decision.budget_used,
        verdicts,
        if output.decision.retained { "retained" } else { "dropped" },
    );

    let Some(training) = &output.training else {
        println!("task dropped: it contributes no training data this iteration");
        return;
    };

    println!("\ncontrastive verification sets:");
    println!("  positive set: {} records targeting '{}'", training.positive.len(), output.vote.pseudo_label);
    if let Some(anchor) = &training.anchor {
        println!(
            "  negative set: {} records targeting '{}' (least-frequent negative)",
            training.negative.len(),
            anchor.answer
        );
    }

    let rejections = training
        .positive
        .iter()
        .chain(&training.negative)
        .filter(|r| r.verdict == Verdict::Wrong)
        .count();
    println!("\nself-correction: {rejections} rejecting judgments -> {} sets of {} revisions", training.corrections.len(), config.k_corrections);

    println!("\nadvantage groups:");
    for group in &training.groups {
        let anchor = match &group.key.anchor {
            GroupAnchor::Whole => "whole batch".to_string(),
            GroupAnchor::Answer(a) => format!("answer '{a}'"),
            GroupAnchor::Prefix(i) => format!("prefix #{i}"),
        };
        let rewards: Vec<u8> = group.items.iter().map(|i| i.r_total).collect();
        println!(
            "  {:?} / {anchor}: {} items, rewards {:?}, mean {:.3}, std {:.3}",
            group.key.role,
            group.items.len(),
            rewards,
            group.mean,
            group.std,
        );
        let advantages: Vec<String> = group.advantages.iter().map(|a| format!("{a:+.3}")).collect();
        println!("      advantages [{}]", advantages.join(", "));
    }
}
