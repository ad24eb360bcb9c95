use lpos_core::selftest::run_selftest;

#[test]
fn selftest_suites_pass() {
    for r in run_selftest(7) {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}
