//! Numerical checks of the group-relative gradient algebra behind balanced
//! verifier training.
//!
//! For a binary verdict with acceptance probability p, the group-normalized
//! advantages of the two outcomes have closed forms, and the expected
//! policy gradient collapses to a scalar coefficient on
//! `grad log pi(v=1)`:
//!
//! - treating the two outcomes' gradient directions as opposite
//!   (`grad log pi(v=0) ~ -grad log pi(v=1)`), the coefficient is
//!   `+-2 sigma(p)` with `sigma(p) = sqrt(p (1-p))`;
//! - using the exact Bernoulli identity
//!   `grad log pi(v=0) = -(p/(1-p)) grad log pi(v=1)`, it is
//!   `+-sqrt(p/(1-p))`.
//!
//! Both forms are evaluated here by explicit two-outcome enumeration rather
//! than by substituting the closed forms, so the derivation itself is what
//! gets checked. Three consequences follow and are verified numerically:
//! the balanced positive/negative pair reduces to a preference-gradient
//! (DPO-style) update at equal proficiency; the `2 sigma` weights
//! down-weight whichever set the verifier already masters
//! (auto-curriculum); and the finite-group Monte Carlo gradient converges
//! to the enumerated expectation as the group grows.

use crate::core::Judgment;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("auto-curriculum precondition violated: need p_plus > p_minus >= 0.5, got ({p_plus}, {p_minus})")]
    CurriculumPrecondition { p_plus: f64, p_minus: f64 },
}

/// A verifier operating point: acceptance probabilities on the positive and
/// the negative input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryVerifierPoint {
    /// P(v=1) on the positive input.
    pub p_plus: f64,
    /// P(v=1) on the negative input.
    pub p_minus: f64,
}

impl BinaryVerifierPoint {
    pub fn new(p_plus: f64, p_minus: f64) -> Result<Self, TheoryError> {
        check_probability(p_plus)?;
        check_probability(p_minus)?;
        Ok(BinaryVerifierPoint { p_plus, p_minus })
    }
}

/// `sigma(p) = sqrt(p (1-p))`: the population reward deviation of a binary
/// verdict group in the infinite-group limit.
pub fn sigma(p: f64) -> f64 {
    (p * (1.0 - p)).sqrt()
}

fn check_probability(p: f64) -> Result<(), TheoryError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TheoryError::ProbabilityOutOfRange(p));
    }
    Ok(())
}

/// Advantages of the two verdict outcomes under group normalization with
/// analytic (infinite-group) statistics, for a record whose desired verdict
/// is `target`. Returned as (advantage when v=1, advantage when v=0).
fn analytic_advantages(p: f64, target: Judgment) -> (f64, f64) {
    let sd = sigma(p);
    match target {
        // reward = 1 iff v=1: mean p
        Judgment::Correct => ((1.0 - p) / sd, -p / sd),
        // reward = 1 iff v=0: mean 1-p
        Judgment::Incorrect => (-(1.0 - p) / sd, p / sd),
    }
}

/// Expected policy-gradient coefficient on `grad log pi(v=1)`, enumerated
/// over both outcomes with the analytic advantages and the opposite-sign
/// treatment of the two log-gradients.
///
/// Evaluates to `+2 sigma(p)` for target `Correct` and `-2 sigma(p)` for
/// target `Incorrect`, but by construction the closed form is never
/// substituted: the enumeration is the point.
pub fn expected_gradient_coefficient(p: f64, target: Judgment) -> Result<f64, TheoryError> {
    check_probability(p)?;
    let (a_accept, a_reject) = analytic_advantages(p, target);
    // as coefficients on grad log pi(v=1): the accept outcome contributes
    // along +1, the reject outcome along -1
    let direction_accept = 1.0;
    let direction_reject = -1.0;
    Ok(p * a_accept * direction_accept + (1.0 - p) * a_reject * direction_reject)
}

/// Same enumeration with the exact Bernoulli log-gradient identity
/// `grad log pi(v=0) = -(p/(1-p)) grad log pi(v=1)`. Evaluates to
/// `+-sqrt(p/(1-p))`; the gap to [`expected_gradient_coefficient`] is the
/// price of the opposite-sign approximation.
pub fn expected_gradient_coefficient_exact(p: f64, target: Judgment) -> Result<f64, TheoryError> {
    check_probability(p)?;
    let (a_accept, a_reject) = analytic_advantages(p, target);
    let reject_direction = -(p / (1.0 - p));
    Ok(p * a_accept * 1.0 + (1.0 - p) * a_reject * reject_direction)
}

/// Residual of the preference-gradient reduction at equal proficiency.
///
/// With `p_plus = p` on the positive input and `1 - p_minus = p` on the
/// negative one, the two set coefficients must collapse to
/// `2 sigma * (grad log pi(v=1 | positive) - grad log pi(v=1 | negative))`.
/// Returns `|coef_plus - 2 sigma| + |coef_minus + 2 sigma|`, both
/// coefficients computed by the enumeration above.
pub fn check_dpo_equivalence(p: f64) -> Result<f64, TheoryError> {
    check_probability(p)?;
    let two_sigma = 2.0 * sigma(p);
    let coef_plus = expected_gradient_coefficient(p, Judgment::Correct)?;
    // equal proficiency: P(v=1 | negative) = 1 - p
    let coef_minus = expected_gradient_coefficient(1.0 - p, Judgment::Incorrect)?;
    Ok((coef_plus - two_sigma).abs() + (coef_minus + two_sigma).abs())
}

/// Does the gradient weighting down-weight the already-mastered positive
/// set? Requires `p_plus > p_minus >= 0.5`; true iff
/// `2 sigma(p_plus) < 2 sigma(p_minus)`.
pub fn check_auto_curriculum(point: &BinaryVerifierPoint) -> Result<bool, TheoryError> {
    if !(point.p_plus > point.p_minus && point.p_minus >= 0.5) {
        return Err(TheoryError::CurriculumPrecondition {
            p_plus: point.p_plus,
            p_minus: point.p_minus,
        });
    }
    Ok(2.0 * sigma(point.p_plus) < 2.0 * sigma(point.p_minus))
}

/// One row of the residual grid emitted by the `theory` subcommand.
#[derive(Clone, Debug)]
pub struct GridRow {
    pub p: f64,
    pub coefficient_correct: f64,
    pub coefficient_incorrect: f64,
    pub closed_form: f64,
    pub residual_correct: f64,
    pub residual_incorrect: f64,
    pub dpo_residual: f64,
    pub exact_correct: f64,
    pub exact_incorrect: f64,
}

/// Evaluate the enumerated coefficients against the closed form on an
/// interior grid of `points` probabilities.
pub fn residual_grid(points: usize) -> Result<Vec<GridRow>, TheoryError> {
    assert!(points >= 1);
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let p = (i as f64 + 1.0) / (points as f64 + 1.0);
        let closed_form = 2.0 * sigma(p);
        let coefficient_correct = expected_gradient_coefficient(p, Judgment::Correct)?;
        let coefficient_incorrect = expected_gradient_coefficient(p, Judgment::Incorrect)?;
        rows.push(GridRow {
            p,
            coefficient_correct,
            coefficient_incorrect,
            closed_form,
            residual_correct: (coefficient_correct - closed_form).abs(),
            residual_incorrect: (coefficient_incorrect + closed_form).abs(),
            dpo_residual: check_dpo_equivalence(p)?,
            exact_correct: expected_gradient_coefficient_exact(p, Judgment::Correct)?,
            exact_incorrect: expected_gradient_coefficient_exact(p, Judgment::Incorrect)?,
        });
    }
    Ok(rows)
}

pub fn grid_csv_header() -> &'static str {
    "p,coefficient_correct,coefficient_incorrect,closed_form,residual_correct,residual_incorrect,dpo_residual,exact_correct,exact_incorrect"
}

pub fn grid_csv_row(row: &GridRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.p,
        row.coefficient_correct,
        row.coefficient_incorrect,
        row.closed_form,
        row.residual_correct,
        row.residual_incorrect,
        row.dpo_residual,
        row.exact_correct,
        row.exact_incorrect
    )
}

/// Summary of all theory checks, as printed by the `theory` subcommand.
#[derive(Clone, Debug)]
pub struct TheoryReport {
    pub grid_points: usize,
    pub max_coefficient_residual: f64,
    pub max_dpo_residual: f64,
    pub curriculum_samples: usize,
    pub curriculum_violations: usize,
    /// Largest gap between the opposite-sign and exact enumeration across
    /// the grid, reported because the two differ by design.
    pub max_form_gap: f64,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.max_coefficient_residual < 1e-12
            && self.max_dpo_residual < 1e-12
            && self.curriculum_violations == 0
    }
}

/// Run the full grid and sampled-curriculum checks.
pub fn run_checks<R: rand::Rng>(
    grid_points: usize,
    curriculum_samples: usize,
    rng: &mut R,
) -> Result<(TheoryReport, Vec<GridRow>), TheoryError> {
    let rows = residual_grid(grid_points)?;
    let max_coefficient_residual = rows
        .iter()
        .map(|r| r.residual_correct.max(r.residual_incorrect))
        .fold(0.0, f64::max);
    let max_dpo_residual = rows.iter().map(|r| r.dpo_residual).fold(0.0, f64::max);
    let max_form_gap = rows
        .iter()
        .map(|r| {
            (r.coefficient_correct - r.exact_correct)
                .abs()
                .max((r.coefficient_incorrect - r.exact_incorrect).abs())
        })
        .fold(0.0, f64::max);

    let mut curriculum_violations = 0;
    for _ in 0..curriculum_samples {
        // p_minus in [0.5, 1), p_plus strictly above it
        let p_minus: f64 = rng.gen_range(0.5..0.999);
        let p_plus: f64 = rng.gen_range(p_minus..1.0 - 1e-9) + 1e-9;
        let point = BinaryVerifierPoint::new(p_plus.min(1.0 - 1e-12), p_minus)?;
        if point.p_plus <= point.p_minus {
            continue;
        }
        if !check_auto_curriculum(&point)? {
            curriculum_violations += 1;
        }
    }

    Ok((
        TheoryReport {
            grid_points,
            max_coefficient_residual,
            max_dpo_residual,
            curriculum_samples,
            curriculum_violations,
            max_form_gap,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coefficient_spot_values() {
        // p = 0.5: 2 * sigma = 2 * 0.5 = 1
        let c = expected_gradient_coefficient(0.5, Judgment::Correct).unwrap();
        assert!((c - 1.0).abs() < 1e-15);

        // p = 0.9 -> 0.6; p = 0.6 -> ~0.9798 (so the easy set gets the
        // smaller weight)
        let c09 = expected_gradient_coefficient(0.9, Judgment::Correct).unwrap();
        assert!((c09 - 0.6).abs() < 1e-12);
        let c06 = expected_gradient_coefficient(0.6, Judgment::Correct).unwrap();
        assert!((c06 - 0.979_795_897_113_271_2).abs() < 1e-12);
        assert!(c09 < c06);
    }

    #[test]
    fn coefficient_vanishes_as_p_approaches_one() {
        let c = expected_gradient_coefficient(1.0 - 1e-9, Judgment::Correct).unwrap();
        assert!(c.abs() < 1e-4);
    }

    #[test]
    fn coefficient_rejects_boundary_probabilities() {
        for p in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(expected_gradient_coefficient(p, Judgment::Correct).is_err());
        }
    }

    #[test]
    fn incorrect_target_mirrors_correct() {
        for p in [0.1, 0.37, 0.5, 0.82] {
            let plus = expected_gradient_coefficient(p, Judgment::Correct).unwrap();
            let minus = expected_gradient_coefficient(p, Judgment::Incorrect).unwrap();
            assert!((plus + minus).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_form_is_sqrt_odds() {
        for p in [0.2, 0.5, 0.75] {
            let exact = expected_gradient_coefficient_exact(p, Judgment::Correct).unwrap();
            assert!((exact - (p / (1.0 - p)).sqrt()).abs() < 1e-12);
        }
        // the two forms agree only at p = 1/2
        let approx = expected_gradient_coefficient(0.5, Judgment::Correct).unwrap();
        let exact = expected_gradient_coefficient_exact(0.5, Judgment::Correct).unwrap();
        assert!((approx - exact).abs() < 1e-15);
    }

    #[test]
    fn dpo_residual_vanishes() {
        assert!(check_dpo_equivalence(0.7).unwrap() < 1e-12);
        assert!(check_dpo_equivalence(0.5).unwrap() < 1e-12);
        let mut max = 0.0f64;
        for i in 1..=19 {
            let p = 0.05 * i as f64;
            max = max.max(check_dpo_equivalence(p).unwrap());
        }
        assert!(max < 1e-12, "max residual {max}");
    }

    #[test]
    fn auto_curriculum_examples() {
        let point = BinaryVerifierPoint::new(0.9, 0.6).unwrap();
        assert!(check_auto_curriculum(&point).unwrap()); // 0.6 < 0.9798
        let tight = BinaryVerifierPoint::new(0.51, 0.50).unwrap();
        assert!(check_auto_curriculum(&tight).unwrap());
        let equal = BinaryVerifierPoint::new(0.8, 0.8).unwrap();
        assert!(matches!(
            check_auto_curriculum(&equal),
            Err(TheoryError::CurriculumPrecondition { .. })
        ));
    }

    #[test]
    fn grid_is_interior_and_clean() {
        let rows = residual_grid(1000).unwrap();
        assert_eq!(rows.len(), 1000);
        for row in &rows {
            assert!(row.p > 0.0 && row.p < 1.0);
            assert!(row.residual_correct < 1e-12);
            assert!(row.residual_incorrect < 1e-12);
            assert!(row.dpo_residual < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_gradient_converges_to_exact_enumeration() {
        // Finite groups of M judgments of one solution, empirical group
        // statistics, exact per-outcome log-gradients: the averaged gradient
        // must approach the exact enumeration sigma(p) * (s, 1) as M grows.
        use crate::core::{canonicalize_answer, Rollout, TaskId, Verdict};
        use crate::policysim::{logistic, sample_verdict_with_signal, VerifierModel};
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        let ver = VerifierModel { weight: 1.2, bias: -0.5, noise: 1e-9 };
        let quality = 0.7;
        let p = logistic(1.2 * quality - 0.5);
        let solution =
            Rollout::generation(TaskId::new("t"), canonicalize_answer("1"), quality, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);

        let mut relative_error_at = |m: usize| -> f64 {
            let draws: Vec<(Verdict, f64)> =
                (0..m).map(|_| sample_verdict_with_signal(&ver, &solution, &mut rng)).collect();
            let rewards: Vec<f64> =
                draws.iter().map(|(v, _)| f64::from(v.as_bit())).collect();
            let mean = rewards.iter().sum::<f64>() / m as f64;
            let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / m as f64;
            let std = var.sqrt();
            if std <= 1e-8 {
                return f64::INFINITY; // degenerate sample; larger M fixes it
            }
            let mut grad = [0.0f64; 2];
            for ((verdict, signal), reward) in draws.iter().zip(&rewards) {
                let advantage = (reward - mean) / std;
                let p_s = ver.accept_probability(*signal);
                let coef = match verdict {
                    Verdict::Correct => advantage * (1.0 - p_s),
                    Verdict::Wrong => -advantage * p_s,
                };
                grad[0] += coef * signal;
                grad[1] += coef;
            }
            grad[0] /= m as f64;
            grad[1] /= m as f64;
            // exact enumeration: sqrt(p/(1-p)) * grad log pi(v=1)
            //                  = sigma(p) * (s, 1)
            let target = [sigma(p) * quality, sigma(p)];
            let err = ((grad[0] - target[0]).powi(2) + (grad[1] - target[1]).powi(2)).sqrt();
            let norm = (target[0].powi(2) + target[1].powi(2)).sqrt();
            err / norm
        };

        let coarse = relative_error_at(100);
        let fine = relative_error_at(10_000);
        assert!(fine < 0.05, "relative error {fine} at M = 10^4");
        assert!(fine < coarse, "error should shrink with M ({coarse} -> {fine})");
    }

    proptest! {
        #[test]
        fn enumeration_matches_closed_form(p in 1e-6f64..1.0) {
            prop_assume!(p < 1.0 - 1e-6);
            let c = expected_gradient_coefficient(p, Judgment::Correct).unwrap();
            prop_assert!((c - 2.0 * sigma(p)).abs() < 1e-12);
        }

        #[test]
        fn curriculum_holds_everywhere(p_minus in 0.5f64..0.99, gap in 1e-6f64..0.4) {
            let p_plus = (p_minus + gap).min(1.0 - 1e-9);
            prop_assume!(p_plus > p_minus);
            let point = BinaryVerifierPoint::new(p_plus, p_minus).unwrap();
            prop_assert!(check_auto_curriculum(&point).unwrap());
        }
    }
}
