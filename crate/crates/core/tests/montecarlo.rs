//! Monte-Carlo estimates against closed-form answers.

use std::path::Path;

use reachcert::mcsim::{estimate_reach_avoid, estimate_value_occupation, simulate_path, validate_certificate, OutcomeKind};
use reachcert::problem::{LoadedProblem, ProblemFile};
use reachcert::sdp::SolverConfig;
use reachcert::sos::solve_reach_avoid;

fn load(name: &str) -> LoadedProblem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    ProblemFile::load(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// For dX = -X dt + X/√2 dW the scale function is x⁵, so the chance of
/// reaching 0.1 before 1 from x is (1 - x⁵) / (1 - 0.1⁵).
fn scale_function_probability(x: f64) -> f64 {
    (1.0 - x.abs().powi(5)) / (1.0 - 0.1f64.powi(5))
}

#[test]
fn population_hitting_matches_scale_function() {
    let lp = load("ex1_population.json");
    for (k, x0) in [0.3, -0.5, 0.65].into_iter().enumerate() {
        let est = estimate_reach_avoid(&lp.problem, &[x0], 4000, 1e-3, 20.0, k as u64).unwrap();
        let exact = scale_function_probability(x0);
        // a little room for the Euler bias on top of the interval
        assert!(est.lower - 0.01 <= exact && exact <= est.upper + 0.01, "x0 = {x0}: {est:?} vs {exact}");
    }
}

#[test]
fn boundary_overshoot_shrinks_with_the_step() {
    // Near ∂X, crossings between steps go unseen and the estimate is biased
    // up; the bias falls roughly like sqrt(dt).
    let lp = load("ex1_population.json");
    let exact = scale_function_probability(0.9);
    let coarse = estimate_reach_avoid(&lp.problem, &[0.9], 4000, 1e-2, 20.0, 5).unwrap();
    let fine = estimate_reach_avoid(&lp.problem, &[0.9], 4000, 1e-4, 20.0, 5).unwrap();
    assert!(coarse.estimate - exact > fine.estimate - exact, "{} vs {}", coarse.estimate, fine.estimate);
    assert!(fine.lower - 0.01 <= exact && exact <= fine.upper + 0.01, "{fine:?} vs {exact}");
}

#[test]
fn decay_reaches_target_at_log_five() {
    let lp = load("ode_decay.json");
    let out = simulate_path(&lp.problem, &[0.5], 1e-3, 20.0, 0).unwrap();
    assert_eq!(out.kind, OutcomeKind::HitTarget);
    // x(t) = 0.5 e^{-t} = 0.1 at t = ln 5; explicit Euler is a step or so early
    assert!((out.stop_time - 5f64.ln()).abs() <= 2e-3, "{}", out.stop_time);
    let est = estimate_reach_avoid(&lp.problem, &[-0.9], 100, 1e-3, 20.0, 0).unwrap();
    assert_eq!((est.estimate, est.lower, est.upper, est.n_paths), (1.0, 1.0, 1.0, 1));
}

#[test]
fn longer_horizons_never_lower_the_hit_fraction() {
    let lp = load("ex1_population.json");
    let mut last = 0.0;
    for t_max in [0.5, 2.0, 8.0, 20.0] {
        // same seed: each path is a prefix of the longer one
        let est = estimate_reach_avoid(&lp.problem, &[0.7], 2000, 1e-3, t_max, 9).unwrap();
        assert!(est.estimate >= last, "{t_max}: {} < {last}", est.estimate);
        last = est.estimate;
    }
}

#[test]
fn occupation_is_below_hitting_at_finite_horizon() {
    // every hit path contributes (N - k) / N <= 1 to the occupation estimate
    let lp = load("ex1_population.json");
    let hit = estimate_reach_avoid(&lp.problem, &[0.5], 2000, 1e-3, 10.0, 4).unwrap();
    let occ = estimate_value_occupation(&lp.problem, &[0.5], 2000, 1e-3, 10.0, 4).unwrap();
    assert!(occ.estimate <= hit.estimate);
    assert!(occ.estimate > 0.5 * hit.estimate);
}

#[test]
fn population_certificate_survives_simulation() {
    let lp = load("ex1_population.json");
    let cert = solve_reach_avoid(&lp.problem, lp.file.degrees, &SolverConfig::default()).unwrap();
    let report = validate_certificate(&cert, &lp.problem, 8, 2000, 1e-3, 20.0, 1).unwrap();
    assert_eq!(report.points.len(), 8);
    assert!(report.passed(), "{report:?}");
    for pt in &report.points {
        assert!(pt.v > cert.p_threshold);
        assert!(scale_function_probability(pt.x0[0]) > cert.p_threshold);
    }
}
