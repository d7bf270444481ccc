//! Every hand-written backward pass against central finite differences on
//! small random instances.

mod common;

use common::gradcheck::{self, Pair, REL_TOL, REL_TOL_END_TO_END};

fn assert_close(what: &str, pair: &Pair, tol: f64) {
    let worst = gradcheck::worst(pair);
    for (a, n) in pair.0.iter().zip(&pair.1) {
        if gradcheck::rel_err(*a, *n) >= tol {
            eprintln!("{what}: analytic {a:.6e} numeric {n:.6e}");
        }
    }
    assert!(worst < tol, "{what}: worst relative error {worst:.3e}");
}

#[test]
fn trilinear_backward() {
    for (name, pair) in gradcheck::trilinear_cases() {
        assert_close(&name, &pair, REL_TOL);
    }
}

#[test]
fn quadrilinear_backward_through_pyramid() {
    for (name, pair) in gradcheck::pyramid_cases() {
        assert_close(&name, &pair, REL_TOL);
    }
}

#[test]
fn compositing_backward() {
    for seed in 0..8 {
        assert_close(&format!("seed {seed}"), &gradcheck::compositing_case(seed), REL_TOL);
    }
}

#[test]
fn mlp_backward() {
    for seed in 0..6 {
        let [params, features] = gradcheck::mlp_case(seed);
        assert_close(&format!("seed {seed} params"), &params, REL_TOL);
        assert_close(&format!("seed {seed} features"), &features, REL_TOL);
    }
}

#[test]
fn end_to_end_batch_gradient() {
    for (group, pair) in gradcheck::end_to_end_case() {
        assert_close(group, &pair, REL_TOL_END_TO_END);
    }
}
