mod common;

use common::random_model;
use hawkes_mitigation::hawkes::{fit_mle, log_likelihood, simulate_stage, EventLog, HistoryCarry, MleOptions, Process};
use nalgebra::DVector;

fn windows(seed: u64, count: u64, span: f64) -> (hawkes_mitigation::hawkes::NetworkModel, Vec<EventLog>) {
    let model = random_model(seed, 5, 0.5, 1.0);
    let zero = DVector::zeros(5);
    let carry = HistoryCarry::zeros(5);
    let logs = (0..count)
        .map(|w| simulate_stage(&model, Process::Fake, &carry, &zero, (0.0, span), seed * 1_000_000 + w).unwrap())
        .collect();
    (model, logs)
}

#[test]
fn five_node_parameters_are_recovered() {
    let (model, logs) = windows(21, 500, 10.0);
    let fit = fit_mle(&logs, 5, 1.0, MleOptions::default()).unwrap();
    assert!(fit.converged);
    let err = fit.relative_error(&model, Process::Fake);
    assert!(err < 0.2, "relative error {err}");
}

#[test]
fn fit_does_not_lose_to_truth() {
    let (model, logs) = windows(4, 100, 10.0);
    let fit = fit_mle(&logs, 5, 1.0, MleOptions::default()).unwrap();
    let carry = HistoryCarry::zeros(5);
    let zero = DVector::zeros(5);
    let truth: f64 = logs.iter().map(|l| log_likelihood(&model, l, Process::Fake, &carry, &zero).unwrap()).sum();
    assert!(fit.log_likelihood >= truth - 1e-6, "{} < {truth}", fit.log_likelihood);
    assert!(fit.log_likelihood >= fit.initial_log_likelihood);
}

#[test]
fn error_shrinks_with_more_windows() {
    let (model, logs) = windows(9, 400, 10.0);
    let small = fit_mle(&logs[..40], 5, 1.0, MleOptions::default()).unwrap().relative_error(&model, Process::Fake);
    let large = fit_mle(&logs, 5, 1.0, MleOptions::default()).unwrap().relative_error(&model, Process::Fake);
    assert!(large < small, "{large} vs {small}");
}
