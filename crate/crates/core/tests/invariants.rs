//! Property suites for the module invariants.

mod common;

use common::properties::{self as p, CASES};

#[test]
fn exact_plans_conserve_marginals() {
    p::exact_plans_conserve_marginals(CASES).unwrap();
}

#[test]
fn exact_duals_certify_optimality() {
    p::exact_duals_certify_optimality(CASES).unwrap();
}

#[test]
fn entropic_plans_conserve_marginals() {
    p::entropic_plans_conserve_marginals(CASES).unwrap();
}

#[test]
fn cover_weights_partition_unity() {
    p::cover_weights_partition_unity(CASES).unwrap();
}

#[test]
fn quantiles_monotone_and_inverse() {
    p::quantiles_monotone_and_inverse(CASES).unwrap();
}

#[test]
fn sparse_quantile_maps_monotone() {
    p::sparse_quantile_maps_monotone(CASES).unwrap();
}

#[test]
fn dkr_below_w1_tv_two() {
    p::dkr_below_w1_tv_two(CASES).unwrap();
}

#[test]
fn quantile_maps_converge_ae() {
    p::quantile_maps_converge_ae(CASES).unwrap();
}
