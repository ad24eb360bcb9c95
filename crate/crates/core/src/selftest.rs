//! Quick end-to-end suites over the test profile: oracle equivalence,
//! comparison-count bound and taint scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::protocol::invocation_bound;
use crate::sim::{run_scenario, taint_suite, Clause, RssModel, Scenario};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<String, String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn oracle_equivalence(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rounds = 0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=32);
        let tau = rng.gen_range(0..256);
        let mut s = Scenario::new(n, 10, tau, 8, rng.gen());
        s.rss = RssModel::Uniform { lo: 0, hi: 255 };
        for t in run_scenario(&s).map_err(|e| e.to_string())? {
            rounds += 1;
            if !t.agrees_with_oracle() {
                return Err(format!(
                    "n={n} tau={tau} round {}: {:?} vs {:?}",
                    t.round, t.decision, t.oracle
                ));
            }
        }
    }
    Ok(format!("{rounds} rounds agree"))
}

fn invocation_bound_suite(seed: u64) -> Result<String, String> {
    let mut worst = Scenario::new(64, 1, 0, 8, seed);
    let values: Vec<u64> = (0..64).map(|i| 2 * i + 1).collect();
    worst.tau = values[31] + 1;
    worst.rss = RssModel::Explicit([(1, values)].into());
    let t = &run_scenario(&worst).map_err(|e| e.to_string())?[0];
    let used = t.invocations.len();
    if used > invocation_bound(64) || used < 7 {
        return Err(format!("64 distinct values used {used} comparisons"));
    }
    let mut s = Scenario::new(16, 30, 100, 8, seed);
    s.rss = RssModel::Uniform { lo: 0, hi: 255 };
    for t in run_scenario(&s).map_err(|e| e.to_string())? {
        if t.invocations.len() > invocation_bound(t.distinct_values) {
            return Err(format!("round {} used {}", t.round, t.invocations.len()));
        }
    }
    Ok(format!("worst case {used} <= {}", invocation_bound(64)))
}

fn taint(seed: u64) -> Result<String, String> {
    let mut s = Scenario::new(6, 5, 0x9AC5, 16, seed);
    s.rss = RssModel::Sentinel;
    let honest = taint_suite(&s, 2).map_err(|e| e.to_string())?;
    if !honest.passed() {
        return Err(format!("honest run flagged: {:?}", honest.confirmed));
    }
    s.leak_plaintext_rss = true;
    let leaky = taint_suite(&s, 2).map_err(|e| e.to_string())?;
    if !leaky.clauses().contains(&Clause::ReadingVisible) {
        return Err("leaking build not detected".into());
    }
    Ok(format!(
        "honest: {} raw hits, none confirmed; leak detected",
        honest.raw_hits
    ))
}

pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    vec![
        check("oracle-equivalence", oracle_equivalence(seed)),
        check("invocation-bound", invocation_bound_suite(seed)),
        check("taint", taint(seed)),
    ]
}
