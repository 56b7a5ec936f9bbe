mod common;

use common::gradcheck::{run_suite, TOLERANCE};

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in [1, 2, 3] {
        let rows = run_suite(seed);
        assert!(rows.len() > 20);
        let bad: Vec<_> = rows.iter().filter(|(_, _, e)| !(*e < TOLERANCE)).collect();
        assert!(bad.is_empty(), "seed {seed}: {bad:#?}");
    }
}

#[test]
fn every_objective_is_covered() {
    let rows = run_suite(1);
    let mut cases: Vec<&str> = rows.iter().map(|r| r.0).collect();
    cases.dedup();
    assert_eq!(cases.len(), 16);
}

