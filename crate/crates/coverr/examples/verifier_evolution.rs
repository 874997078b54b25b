//! Watch the verifier's filtering quality evolve during co-evolution: the
//! true-negative rate (wrong-label tasks correctly dropped) climbs while the
//! false-positive rate (correct-label tasks wrongly dropped) falls toward
//! zero, and both verdict recalls improve from coin-flip to sharp.
//!
//! ```bash
//! cargo run --release --example verifier_evolution
//! ```

use coverr::harness::{run_experiment, ExperimentConfig, Method};

fn main() {
    let mut config = ExperimentConfig::defaults_for(Method::Coverrl);
    config.tasks = 120;
    config.steps = 120;
    config.seed = 3;

    println!("co-evolution on {} tasks, {} steps, seed {}", config.tasks, config.steps, config.seed);
    let run = run_experiment(&config).unwrap();

    println!("\n   step |   TNR     FPR   | correct-recall  wrong-recall | retained");
    for step in (0..config.steps).step_by(10).chain([config.steps - 1]) {
        let m = &run.series[step];
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "  -  ".into());
        println!(
            "   {step:4} |  {}   {}  |     {}          {}    |  {:.3}",
            fmt(m.tnr),
            fmt(m.fpr),
            fmt(m.correct_recall),
            fmt(m.wrong_recall),
            m.retained_fraction,
        );
    }

    let first = &run.series[0];
    let last = run.final_metrics();
    println!(
        "\nfinal verifier: weight {:.2}, bias {:.2} (started at 0, 0)",
        run.verifier.weight, run.verifier.bias
    );
    println!(
        "TNR went {:.3} -> {:.3}; FPR went {:.3} -> {:.3}",
        first.tnr.unwrap_or(f64::NAN),
        last.tnr.unwrap_or(f64::NAN),
        first.fpr.unwrap_or(f64::NAN),
        last.fpr.unwrap_or(f64::NAN),
    );
    println!("early filtering is a coin flip, so both rates start high; contrastive");
    println!("training sharpens the verifier until only wrong-label tasks get dropped");
}
