mod props;

#[test]
fn maps_are_even() {
    props::maps_are_even();
}

#[test]
fn chain_rule_for_iterates() {
    props::chain_rule_for_iterates();
}

#[test]
fn affine_conjugacy_preserves_critical_derivatives() {
    props::affine_conjugacy_preserves_critical_derivatives();
}

#[test]
fn log_products_are_additive() {
    props::log_products_are_additive();
}

#[test]
fn precision_does_not_change_signs() {
    props::precision_does_not_change_signs();
}

#[test]
fn bisection_keeps_a_sign_change() {
    props::bisection_keeps_a_sign_change();
}

#[test]
fn ce_series_reconstructs_single_steps() {
    props::ce_series_reconstructs_single_steps();
}

#[test]
fn capacity_dominates_lebesgue_and_grows_with_gamma() {
    props::capacity_dominates_lebesgue_and_grows_with_gamma();
}

#[test]
fn nu_is_linear_and_termwise() {
    props::nu_is_linear_and_termwise();
}

#[test]
fn kneading_is_monotone_in_a() {
    props::kneading_is_monotone_in_a();
}

#[test]
fn window_samples_are_deterministic() {
    props::window_samples_are_deterministic();
}

#[test]
fn taxonomy_labels_are_nested() {
    props::taxonomy_labels_are_nested();
}
