//! Finite-difference checks for every differentiable layer.

use std::time::Instant;

use deckqa_numerics::gradcheck::{layer_suite, SUITE_TOLERANCE};

#[test]
fn every_layer_matches_finite_differences() {
    let start = Instant::now();
    let reports = layer_suite().unwrap();
    for (name, r) in &reports {
        println!(
            "{name}: {}/{} within {SUITE_TOLERANCE}, max rel err {:.3e} at {:?}",
            r.within, r.checked, r.max_rel_error, r.worst
        );
    }
    for (name, r) in &reports {
        assert!(r.passes_suite(), "{name}: {r:?}");
    }
    assert!(start.elapsed().as_secs() < 60);
}
