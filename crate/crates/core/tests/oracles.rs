//! Library routines against straightforward loop implementations written
//! from the formulas alone.

mod common;

#[test]
fn km_image_matches_direct_sum() {
    let err = common::km_oracle_error();
    assert!(err <= 1e-12, "{err:e}");
}

#[test]
fn field_operator_matches_direct_sum() {
    let err = common::field_operator_oracle_error();
    assert!(err <= 1e-12, "{err:e}");
}

#[test]
fn pi_loss_matches_direct_sum() {
    let err = common::pi_loss_oracle_error();
    assert!(err <= 1e-12, "{err:e}");
}
