//! Layer kernels against brute-force and finite-difference oracles (64-bit).

mod common;

use common::gradients::*;

const TOL: f64 = 1e-4;

#[test]
fn conv3d_matches_nested_loops() {
    let gap = conv3d_oracle_gap(&CONV_ORACLE_SHAPES);
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn conv3d_gradients() {
    assert!(conv3d_error(2, [2, 2, 5, 4, 6], [3, 2, 3, 2, 3]) < TOL);
}

#[test]
fn wide_conv3d_gradients() {
    assert!(conv3d_error(10, [1, 9, 5, 4, 6], [3, 9, 3, 2, 3]) < TOL);
}

#[test]
fn maxpool3d_gradients() {
    assert!(maxpool3d_error() < TOL);
}

#[test]
fn batchnorm3d_gradients() {
    assert!(batchnorm3d_error() < TOL);
}

#[test]
fn relu_gradient_away_from_zero() {
    assert!(relu_error() < TOL);
}

#[test]
fn fc_matches_dot_products_and_gradients() {
    assert!(fc_error() < TOL);
}

#[test]
fn l2normalize_gradient() {
    assert!(l2normalize_error() < TOL);
}

#[test]
fn softmax_head_gradients() {
    assert!(softmax_head_error() < TOL);
}
