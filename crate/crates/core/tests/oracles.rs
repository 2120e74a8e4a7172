//! Oracle suite, shared with the acceptance runner.

mod common;

#[test]
fn connectivity_matches_closure_exhaustively_up_to_three() {
    common::connectivity_matches_closure_exhaustively_up_to_three();
}

#[test]
fn connectivity_matches_closure_on_random_graphs() {
    common::connectivity_matches_closure_on_random_graphs();
}

#[test]
fn union_graph_matches_brute_force() {
    common::union_graph_matches_brute_force();
}

#[test]
fn integrator_matches_two_agent_closed_form() {
    common::integrator_matches_two_agent_closed_form();
}

#[test]
fn dini_analytic_agrees_with_finite_difference() {
    common::dini_analytic_agrees_with_finite_difference();
}

#[test]
fn consensus_distance_matches_grid_search() {
    common::consensus_distance_matches_grid_search();
}

#[test]
fn so3_matrix_matches_cotangent_form() {
    common::so3_matrix_matches_cotangent_form();
}

#[test]
fn time_varying_mode_has_reset_clock() {
    common::time_varying_mode_has_reset_clock();
}
