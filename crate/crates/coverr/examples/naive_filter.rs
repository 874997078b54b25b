//! Threshold filtering vs verification filtering. Dropping tasks whose
//! majority ratio sits below a constant threshold looks like a cheaper
//! substitute for a trained verifier, but it can only see consistency: as
//! training concentrates the output distribution, every task clears the
//! threshold and the method converges back to the vote-only baseline.
//!
//! ```bash
//! cargo run --release --example naive_filter
//! ```

use coverr::harness::{median, run_sweep, sweep_cell, ExperimentConfig, Method};

fn main() {
    let mut base = ExperimentConfig::defaults_for(Method::Coverrl);
    base.tasks = 120;
    base.steps = 150;
    let seeds: Vec<u64> = (0..3).collect();

    println!("comparing final label accuracy over {} seeds:", seeds.len());

    let ttrl = run_sweep(&base, &[Method::Ttrl], &seeds).unwrap();
    let coverrl = run_sweep(&base, &[Method::Coverrl], &seeds).unwrap();

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    rows.push((
        "vote-only".into(),
        ttrl.iter().map(|r| r.final_metrics().label_accuracy).collect(),
    ));
    for tau in [0.1, 0.2] {
        let runs: Vec<_> = seeds
            .iter()
            .map(|seed| {
                let mut config = sweep_cell(&base, Method::TtrlFilter, *seed);
                config.tau = tau;
                coverr::harness::run_experiment(&config).unwrap()
            })
            .collect();
        rows.push((
            format!("threshold tau={tau}"),
            runs.iter().map(|r| r.final_metrics().label_accuracy).collect(),
        ));
    }
    rows.push((
        "co-evolution".into(),
        coverrl.iter().map(|r| r.final_metrics().label_accuracy).collect(),
    ));

    println!("\n   method              | per-seed final label accuracy | median");
    for (name, values) in &rows {
        let cells: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
        println!("   {name:20} | {}          | {:.3}", cells.join("  "), median(values).unwrap());
    }

    println!("\nthreshold filtering tracks the vote-only baseline: confident errors pass");
    println!("any consistency bar. Verification filtering judges the reasoning instead");
    println!("of the agreement, so it keeps improving the training pool.");
}
