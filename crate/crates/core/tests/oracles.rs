mod common;

#[test]
fn iqr_filter_agrees_with_sorted_quantiles() {
    common::check_iqr(1000).unwrap();
}

#[test]
fn dbscan_agrees_with_brute_force() {
    common::check_dbscan(200).unwrap();
}

#[test]
fn aggregation_agrees_with_weighted_mean() {
    common::check_aggregation(200).unwrap();
}

#[test]
fn analytic_gradient_agrees_with_central_differences() {
    common::check_gradient().unwrap();
}

#[test]
fn clustering_ignores_common_rescaling() {
    common::check_scale_invariance(100).unwrap();
}
