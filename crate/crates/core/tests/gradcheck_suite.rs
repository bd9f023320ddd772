use std::time::Instant;

use mmnet_core::suite::{run_gradcheck_suite, SUITE_TOLERANCE};
use mmnet_core::OpKind;

#[test]
fn every_stage_passes_within_a_minute() {
    let start = Instant::now();
    let results = run_gradcheck_suite(None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for r in &results {
        println!("{:<24} {:.3e}", r.name, r.max_error);
        assert!(
            r.max_error < SUITE_TOLERANCE,
            "{} failed: {}",
            r.name,
            r.max_error
        );
    }
    assert_eq!(results.len(), 8);
    assert!(elapsed < 60.0, "suite took {elapsed:.1}s");
}

#[test]
fn broken_product_rule_fails_propagation() {
    let results = run_gradcheck_suite(Some(OpKind::Mul)).unwrap();
    let apm = results
        .iter()
        .find(|r| r.name == "activation propagation")
        .unwrap();
    assert!(!apm.passed(), "{}", apm.max_error);
}
