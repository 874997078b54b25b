//! The gradient algebra behind balanced verifier training, checked
//! numerically: enumerated group-relative gradient coefficients against
//! their closed form, the reduction of a balanced positive/negative pair to
//! a preference-style gradient, and the auto-curriculum ordering that
//! down-weights whichever set the verifier already masters.
//!
//! ```bash
//! cargo run --release --example theory_checks
//! ```

use coverr::core::Judgment;
use coverr::pipeline::{stream_rng, Purpose};
use coverr::theory::{
    check_auto_curriculum, check_dpo_equivalence, expected_gradient_coefficient,
    expected_gradient_coefficient_exact, run_checks, sigma, BinaryVerifierPoint,
};

fn main() {
    println!("expected gradient coefficient on grad log pi(v=1), enumerated per outcome:");
    println!("      p | target Correct | 2*sigma(p) | exact-form sqrt(p/(1-p))");
    for p in [0.1, 0.25, 0.5, 0.6, 0.75, 0.9] {
        let coef = expected_gradient_coefficient(p, Judgment::Correct).unwrap();
        let exact = expected_gradient_coefficient_exact(p, Judgment::Correct).unwrap();
        println!("   {p:.2} |     {coef:+.4}    |   {:+.4}  |  {exact:+.4}", 2.0 * sigma(p));
    }
    println!("(the opposite-sign treatment of the two outcome gradients gives 2*sigma;");
    println!(" the exact Bernoulli identity gives sqrt(p/(1-p)); they meet at p = 1/2)");

    println!("\npreference-pair reduction at equal proficiency (residual per p):");
    for p in [0.3, 0.5, 0.7, 0.9] {
        println!("   p = {p:.1}: residual {:.2e}", check_dpo_equivalence(p).unwrap());
    }

    println!("\nauto-curriculum: the easier set gets the smaller weight");
    for (p_plus, p_minus) in [(0.9, 0.6), (0.8, 0.55), (0.51, 0.5)] {
        let point = BinaryVerifierPoint::new(p_plus, p_minus).unwrap();
        println!(
            "   2*sigma({p_plus:.2}) = {:.4}  <  2*sigma({p_minus:.2}) = {:.4}  -> {}",
            2.0 * sigma(p_plus),
            2.0 * sigma(p_minus),
            check_auto_curriculum(&point).unwrap(),
        );
    }

    let mut rng = stream_rng(0, 0, 0, "theory", Purpose::TheoryCheck);
    let (report, _grid) = run_checks(1000, 10_000, &mut rng).unwrap();
    println!("\nfull check battery:");
    println!("   1000-point grid, max coefficient residual: {:.2e}", report.max_coefficient_residual);
    println!("   1000-point grid, max preference residual:  {:.2e}", report.max_dpo_residual);
    println!(
        "   10000 sampled operating points, curriculum violations: {}",
        report.curriculum_violations
    );
    println!("   largest gap between the two enumeration forms: {:.3}", report.max_form_gap);
    println!("   => {}", if report.passed() { "all checks PASS" } else { "FAILURE" });
}
