//! Analytic gradients against central finite differences.

mod common;

use common::grad::{classifier_case, head_case, infonce_case, TOL};
use t4v_core::headnet::HeadKind;

fn check(name: &str, case: impl Fn(u64) -> f64) {
    for seed in 0..20 {
        let err = case(seed);
        assert!(err < TOL, "{name} seed {seed}: rel err {err:e}");
    }
}

#[test]
fn tap_gradients() {
    check("tap", |s| head_case(HeadKind::Tap, 1, s));
}

#[test]
fn t1d_gradients() {
    check("t1d", |s| head_case(HeadKind::T1d, 1, s));
}

#[test]
fn ttrans_gradients() {
    check("ttrans", |s| head_case(HeadKind::TTrans, 1, s));
}

#[test]
fn ttrans_two_layers() {
    for seed in 100..103 {
        assert!(head_case(HeadKind::TTrans, 2, seed) < TOL);
    }
}

#[test]
fn learnable_classifier_gradients() {
    check("classifier", classifier_case);
}

#[test]
fn infonce_gradients_with_logit_scale() {
    check("infonce", infonce_case);
}
