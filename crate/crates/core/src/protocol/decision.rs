//! Half-voting decision over sorted order-preserving ciphertexts.
//!
//! The search is generic over the comparison, so the same code runs against
//! the secure comparison and against a plaintext oracle.

use std::collections::BTreeMap;

use crate::group_key::MemberId;
use crate::ope::OpeCiphertext;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Free,
    Busy,
}

impl Outcome {
    pub fn as_byte(self) -> u8 {
        match self {
            Outcome::Free => 0,
            Outcome::Busy => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Outcome::Free),
            1 => Some(Outcome::Busy),
            _ => None,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Outcome::Free => "free",
            Outcome::Busy => "busy",
        })
    }
}

/// Which exit of the search produced the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exit {
    /// The largest report is at most `tau`.
    MaxShortcut,
    /// The smallest report exceeds `tau`.
    MinShortcut,
    /// Boundary found by binary search, votes counted.
    VoteCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub outcome: Outcome,
    pub exit: Exit,
    /// Number of users counted as above threshold.
    pub votes: usize,
    pub lambda: usize,
}

/// One distinct ciphertext value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistinctReport {
    pub ciphertext: OpeCiphertext,
    pub multiplicity: usize,
    /// Lowest user id holding this value; the comparison partner.
    pub representative: MemberId,
}

/// Reports grouped by value, ascending.
pub fn sort_reports(reports: &BTreeMap<MemberId, OpeCiphertext>) -> Vec<DistinctReport> {
    let mut by_value: BTreeMap<OpeCiphertext, DistinctReport> = BTreeMap::new();
    for (&user, &c) in reports {
        by_value
            .entry(c)
            .and_modify(|d| {
                d.multiplicity += 1;
                d.representative = d.representative.min(user);
            })
            .or_insert(DistinctReport {
                ciphertext: c,
                multiplicity: 1,
                representative: user,
            });
    }
    by_value.into_values().collect()
}

/// Brute-force reference: busy iff at least `lambda` readings exceed `tau`.
pub fn oracle_decision(rss: &[u64], tau: u64, lambda: usize) -> Outcome {
    if rss.iter().filter(|&&r| r > tau).count() >= lambda {
        Outcome::Busy
    } else {
        Outcome::Free
    }
}

/// Runs the search. `compare(i)` must return `[tau >= r]` for the reading
/// behind `sorted[i]`; `probes` receives every index compared, in order.
pub fn decide<E>(
    sorted: &[DistinctReport],
    lambda: usize,
    probes: &mut Vec<usize>,
    mut compare: impl FnMut(usize) -> Result<bool, E>,
) -> Result<Decision, E> {
    assert!(!sorted.is_empty(), "decide needs at least one report");
    let mut probe = |i: usize| {
        probes.push(i);
        compare(i)
    };
    let votes_from = |start: usize| {
        sorted[start..]
            .iter()
            .map(|d| d.multiplicity)
            .sum::<usize>()
    };
    let verdict = |votes: usize| {
        if votes >= lambda {
            Outcome::Busy
        } else {
            Outcome::Free
        }
    };
    let u = sorted.len();
    if probe(u - 1)? {
        return Ok(Decision {
            outcome: verdict(0),
            exit: Exit::MaxShortcut,
            votes: 0,
            lambda,
        });
    }
    if !probe(0)? {
        let votes = votes_from(0);
        return Ok(Decision {
            outcome: verdict(votes),
            exit: Exit::MinShortcut,
            votes,
            lambda,
        });
    }
    // Invariant: sorted[lo] <= tau < sorted[hi].
    let (mut lo, mut hi) = (0, u - 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let votes = votes_from(hi);
    Ok(Decision {
        outcome: verdict(votes),
        exit: Exit::VoteCount,
        votes,
        lambda,
    })
}

/// `ceil(log2 u)`, zero for `u <= 1`.
pub fn ceil_log2(u: usize) -> u32 {
    if u <= 1 {
        0
    } else {
        usize::BITS - (u - 1).leading_zeros()
    }
}

/// Upper bound on comparisons for `u` distinct values.
pub fn invocation_bound(u: usize) -> usize {
    2 + ceil_log2(u) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    /// Uses the reading itself as the ciphertext: order-preserving by construction.
    fn plain(rss: &[u64]) -> Vec<DistinctReport> {
        let reports = rss
            .iter()
            .enumerate()
            .map(|(i, &r)| (i as MemberId, OpeCiphertext(r as u128)))
            .collect();
        sort_reports(&reports)
    }

    fn run(rss: &[u64], tau: u64, lambda: usize) -> (Decision, Vec<usize>) {
        let sorted = plain(rss);
        let mut probes = Vec::new();
        let d = decide::<Infallible>(&sorted, lambda, &mut probes, |i| {
            Ok(tau >= sorted[i].ciphertext.0 as u64)
        })
        .unwrap();
        (d, probes)
    }

    #[test]
    fn grouping() {
        let sorted = plain(&[5, 3, 5, 9, 1]);
        let mult: Vec<_> = sorted.iter().map(|d| d.multiplicity).collect();
        assert_eq!(mult, [1, 1, 2, 1]);
        assert_eq!(sorted[2].representative, 0);
    }

    #[test]
    fn worked_examples() {
        let (d, p) = run(&[1, 2, 3, 4, 5], 3, 3);
        assert_eq!((d.outcome, d.votes), (Outcome::Free, 2));
        assert!(p.len() <= 5);

        let (d, p) = run(&[6, 7, 8], 5, 2);
        assert_eq!(
            (d.outcome, d.exit, p.len()),
            (Outcome::Busy, Exit::MinShortcut, 2)
        );

        let (d, p) = run(&[1, 2], 9, 1);
        assert_eq!(
            (d.outcome, d.exit, p.len()),
            (Outcome::Free, Exit::MaxShortcut, 1)
        );

        let (d, p) = run(&[10, 20, 30, 40, 50, 60, 70, 80], 45, 4);
        assert_eq!((d.outcome, d.votes), (Outcome::Busy, 4));
        assert!(p.len() <= 5);

        let (d, _) = run(&[4, 4, 4], 4, 1);
        assert_eq!(d.outcome, Outcome::Free);
    }

    #[test]
    fn single_value_probes_twice() {
        let (d, p) = run(&[9], 3, 1);
        assert_eq!((d.outcome, p), (Outcome::Busy, vec![0, 0]));
    }

    #[test]
    fn exhaustive_small_against_oracle() {
        for n in 1..=4usize {
            for code in 0..8u64.pow(n as u32) {
                let rss: Vec<u64> = (0..n).map(|i| (code >> (3 * i)) & 7).collect();
                for tau in 0..8 {
                    for lambda in 1..=n {
                        let (d, p) = run(&rss, tau, lambda);
                        assert_eq!(d.outcome, oracle_decision(&rss, tau, lambda));
                        assert!(p.len() <= invocation_bound(plain(&rss).len()));
                    }
                }
            }
        }
    }

    #[test]
    fn log_helpers() {
        assert_eq!(
            [1, 2, 3, 4, 5, 8, 9, 64, 65].map(ceil_log2),
            [0, 1, 2, 2, 3, 3, 4, 6, 7]
        );
    }
}
