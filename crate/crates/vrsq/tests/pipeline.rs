//! Cross-checks between command outputs.

use vrsq::commands::{execute, Command};
use vrsq::config::RunConfig;
use vrsq_core::math::from_db;

#[test]
fn model_weight_is_near_optimal() {
    let mut c = RunConfig::default();
    c.squeeze.trials = 5000;
    let o = execute(Command::Squeeze, &c).unwrap();
    let (w, we) = (o.number("weight").unwrap(), o.number("weight_empirical").unwrap());
    assert!((w / we - 1.0).abs() < 0.02, "{w} vs {we}");
}

#[test]
fn empirical_weight_lowers_the_residual_variance() {
    let mut c = RunConfig::default();
    c.squeeze.trials = 3000;
    let model = execute(Command::Squeeze, &c).unwrap().number("var_diff_db").unwrap();
    c.budget.empirical_weight = true;
    let emp = execute(Command::Squeeze, &c).unwrap();
    assert_eq!(emp.value("weight_mode"), Some("empirical"));
    assert!(emp.number("var_diff_db").unwrap() <= model + 1e-12);
}

#[test]
fn readout_subtraction_is_consistent() {
    let mut c = RunConfig::default();
    c.squeeze.trials = 2000;
    let o = execute(Command::Squeeze, &c).unwrap();
    let gap = from_db(o.number("var_diff_db").unwrap()) - from_db(o.number("var_cond_db").unwrap());
    assert!((gap - c.budget.readout_frac).abs() < 1e-9, "{gap}");
}

#[test]
fn solved_budget_feeds_back_into_the_squeeze_run() {
    let b = execute(Command::SolveBudget, &RunConfig::default()).unwrap();
    let mut c = RunConfig::default();
    c.budget.readout_frac = b.number("readout_frac").unwrap();
    c.budget.classical_frac = b.number("classical_frac").unwrap();
    c.squeeze.trials = 4000;
    let o = execute(Command::Squeeze, &c).unwrap();
    assert!((o.number("var_diff_db").unwrap() + 2.6).abs() < 0.3);
}

#[test]
fn backaction_calibration_recovers_readout_noise() {
    let mut c = RunConfig::default();
    c.backaction_scan.points = 3;
    c.backaction_scan.trials = 300;
    c.backaction_scan.calibration_trials = 3000;
    let o = execute(Command::BackactionScan, &c).unwrap();
    let m = o.number("readout_var_over_projection").unwrap();
    assert!((m - 0.226).abs() < 0.03, "{m}");
}

#[test]
fn physics_errors_carry_context() {
    let mut c = RunConfig::default();
    c.projection_scan.n = vec![1e4, 2e4, 3e4];
    c.projection_scan.trials = 50;
    let e = execute(Command::ProjectionScan, &c).unwrap_err().to_string();
    assert!(e.starts_with("projection fit"), "{e}");
}

#[test]
fn exhausted_contrast_is_an_error_not_nan() {
    let mut c = RunConfig::default();
    c.sweep.photons = 2e5;
    c.backaction_scan.points = 3;
    c.backaction_scan.trials = 50;
    c.backaction_scan.calibration_trials = 50;
    let e = execute(Command::BackactionScan, &c).unwrap_err().to_string();
    assert!(e.starts_with("back-action trials kept by the contrast cut"), "{e}");
}
