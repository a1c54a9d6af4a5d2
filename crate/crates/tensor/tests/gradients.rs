mod support;

use support::gradcheck::{check_all_ops, MAX_REL_ERR};

#[test]
fn every_op_matches_finite_differences() {
    let reports = check_all_ops(7);
    for r in &reports {
        println!("{:<20} shapes={:>3} max_rel_err={:.3e}", r.op, r.shapes, r.max_rel_err);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
    assert!(failed.is_empty(), "ops above {MAX_REL_ERR}: {failed:?}");
}
