//! Analytic gradients against central finite differences (step 1e-5).

mod common;

use common::*;
use wgsr::loss::CrossEntropyVariant;
use wgsr::nn::NetworkConfig;

const TOL: f64 = 1e-5;

fn assert_all(errors: Vec<(String, f64)>) {
    for (name, err) in errors {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn network_parameter_gradients_match_finite_differences() {
    assert_all(network_errors(&tiny_config(), 11));
}

#[test]
fn single_hidden_layer_and_wide_kernel() {
    assert_all(network_errors(&NetworkConfig::new((2, 2), (4, 7), 3, 1, 5).unwrap(), 21));
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    for variant in [CrossEntropyVariant::TwoSided, CrossEntropyVariant::OneSided] {
        let err = cross_entropy_error(variant);
        assert!(err < TOL, "{variant:?}: {err:e}");
    }
}

#[test]
fn pi_loss_gradients_match_finite_differences() {
    let err = pi_loss_error();
    assert!(err < TOL, "{err:e}");
}

#[test]
fn combined_objective_gradients_match_finite_differences() {
    assert_all(combined_errors());
}
