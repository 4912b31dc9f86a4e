mod common;

use common::{check_full_network, check_layer, layer_cases};

#[test]
fn every_layer_matches_central_differences() {
    for (name, arch) in layer_cases() {
        for seed in 0..3 {
            let report = check_layer(&arch, seed);
            assert!(report.checked > 0, "{name}: nothing checked");
            assert!(report.max_relative_error < 1e-5, "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn pooling_checks_input_coordinates_only() {
    let cases = layer_cases();
    let (_, pool) = cases.iter().find(|(n, _)| *n == "maxpool2").unwrap();
    let report = check_layer(pool, 9);
    assert_eq!(report.groups.len(), 1);
    assert_eq!(report.groups[0].name, "input");
    assert_eq!(report.checked + report.skipped_at_kinks, 3 * 31);
}

#[test]
fn classifier_on_features_sampled() {
    let report = check_full_network(11, 4, 8);
    assert!(report.checked > 40, "{report:?}");
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
