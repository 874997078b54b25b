//! Why the contrastive sets must be balanced. Inflating the negative
//! verification set (here 4x) floods the verifier with reject-side gradient:
//! it degenerates into rejecting everything, the consensus filter then drops
//! every task, and training starves. Balanced sets keep both recalls healthy.
//!
//! ```bash
//! cargo run --release --example balance_ablation
//! ```

use coverr::harness::{run_experiment, sweep_cell, ExperimentConfig, Method};

fn main() {
    let mut base = ExperimentConfig::defaults_for(Method::Coverrl);
    base.tasks = 120;
    base.steps = 120;

    let balanced = run_experiment(&sweep_cell(&base, Method::Coverrl, 1)).unwrap();
    let unbalanced = run_experiment(&sweep_cell(&base, Method::CoverrlUnbalanced, 1)).unwrap();
    println!(
        "negative set size: balanced = positive set; unbalanced = {}x positive set\n",
        unbalanced.config.unbalance_multiplier
    );

    println!("        |        balanced             |        unbalanced");
    println!("   step | corr-rec  wrong-rec  kept   | corr-rec  wrong-rec  kept");
    for step in (0..base.steps).step_by(10).chain([base.steps - 1]) {
        let b = &balanced.series[step];
        let u = &unbalanced.series[step];
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "  -  ".into());
        println!(
            "   {step:4} |  {}     {}    {:.2}  |  {}     {}    {:.2}",
            fmt(b.correct_recall),
            fmt(b.wrong_recall),
            b.retained_fraction,
            fmt(u.correct_recall),
            fmt(u.wrong_recall),
            u.retained_fraction,
        );
    }

    let b = balanced.final_metrics();
    let u = unbalanced.final_metrics();
    println!(
        "\nbalanced final:   correct recall {:.3}, wrong recall {:.3}",
        b.correct_recall.unwrap_or(f64::NAN),
        b.wrong_recall.unwrap_or(f64::NAN)
    );
    println!(
        "unbalanced final: correct recall {:.3}, wrong recall {:.3}  <- rejects everything",
        u.correct_recall.unwrap_or(f64::NAN),
        u.wrong_recall.unwrap_or(f64::NAN)
    );
    println!(
        "unbalanced verifier parameters: weight {:.2}, bias {:.2} (bias plunged)",
        unbalanced.verifier.weight, unbalanced.verifier.bias
    );
}
