mod common;

use common::{op_cases, transformer_loss_check};

const TOL: f64 = 1e-6;

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..5 {
        for case in op_cases(seed) {
            let err = case.check(seed);
            assert!(err < TOL, "{} seed {seed}: {err:e}", case.name);
        }
    }
}

#[test]
fn transformer_loss_matches_central_differences() {
    for seed in 0..3 {
        let err = transformer_loss_check(seed, 16);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
