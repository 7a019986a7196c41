use std::time::Instant;

use agsp_nets::check::{bdcn_check, module_suite, op_suite, scd_check, NETWORK_TOL, OP_TOL};

#[test]
fn every_op_passes_gradcheck() {
    let reports = op_suite(1).unwrap();
    assert!(!reports.is_empty());
    for r in &reports {
        assert!(r.report.tol <= OP_TOL);
        assert!(r.report.passed, "{}: {:?}", r.name, r.report);
        assert!(r.report.checked > 0, "{}", r.name);
    }
}

#[test]
fn modules_pass_gradcheck() {
    for r in module_suite(2).unwrap() {
        assert!(r.report.passed, "{}: {:?}", r.name, r.report);
    }
}

#[test]
fn edge_network_passes_gradcheck() {
    let t = Instant::now();
    let r = bdcn_check(3, 16, 4).unwrap();
    assert!(r.tol <= NETWORK_TOL);
    assert!(r.passed, "{r:?}");
    eprintln!("edge network: {} coords, max rel {:.2e}, {:?}", r.checked, r.max_rel_error, t.elapsed());
}

#[test]
fn change_network_passes_gradcheck() {
    let t = Instant::now();
    let r = scd_check(4, 16, 4).unwrap();
    assert!(r.tol <= NETWORK_TOL);
    assert!(r.passed, "{r:?}");
    eprintln!("change network: {} coords, max rel {:.2e}, {:?}", r.checked, r.max_rel_error, t.elapsed());
}
