mod common;

use common::ops;

#[test]
fn every_operation_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, worst) in ops::worst_errors(17) {
        if !(worst < ops::TOLERANCE) {
            failures.push(format!("{name}: {worst:.3e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}
