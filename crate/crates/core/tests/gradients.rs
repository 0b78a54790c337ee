mod common;

use common::grad::{check_op, op_cases, EndToEnd};

#[test]
fn every_op_matches_central_differences() {
    for (k, op) in op_cases().iter().enumerate() {
        let err = check_op(op, 20, k as u64).unwrap();
        assert!(err <= op.tolerance, "{}: relative error {err:e} above {:e}", op.name, op.tolerance);
    }
}

#[test]
fn batch_loss_gradients_match_central_differences() {
    let setup = EndToEnd::new();
    for seed in 0..20 {
        let err = setup.check(seed).unwrap();
        assert!(err <= 1e-4, "init seed {seed}: relative error {err:e}");
    }
}
