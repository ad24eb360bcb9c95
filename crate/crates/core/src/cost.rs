//! Closed-form communication cost (bits per sensing round) of LPOS and the
//! three comparison schemes. `log n` is read as `ceil(log2 n)`.
//!
//! | scheme | bits |
//! |--------|------|
//! | LPOS   | `2 gamma |p| (2 + log n) + n eps_ope + |Q| log n` |
//! | ECEG   | `4 |Q| n` |
//! | PDAFT  | `2 |N| (n + 1)` |
//! | PPSS   | `|p| n` |

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("unknown scheme {0:?} (expected lpos, eceg, pdaft or ppss)")]
    UnknownScheme(String),
    #[error("user count must be at least 1")]
    NoUsers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Lpos,
    Eceg,
    Pdaft,
    Ppss,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Lpos, Scheme::Eceg, Scheme::Pdaft, Scheme::Ppss];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Lpos => "lpos",
            Scheme::Eceg => "eceg",
            Scheme::Pdaft => "pdaft",
            Scheme::Ppss => "ppss",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CostError::UnknownScheme(s.to_string()))
    }
}

/// Bit sizes entering the formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostParams {
    pub gamma: u64,
    /// ElGamal modulus `|p|`.
    pub p_bits: u64,
    /// Elliptic-curve group order `|Q|`.
    pub q_bits: u64,
    /// Paillier modulus `|N|`.
    pub n_bits: u64,
    /// OPE ciphertext size.
    pub eps_ope: u64,
    /// Server count of PDAFT; does not enter its communication cost.
    pub servers: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            gamma: 16,
            p_bits: 1024,
            q_bits: 160,
            n_bits: 1024,
            eps_ope: 128,
            servers: 2,
        }
    }
}

/// `ceil(log2 n)`, zero for `n = 1`.
pub fn log2_ceil(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        (u64::BITS - (n - 1).leading_zeros()) as u64
    }
}

impl CostParams {
    /// The comparison term of LPOS: `2 gamma |p| (2 + log n)`.
    pub fn lpos_comparison_bits(&self, n: u64) -> u64 {
        2 * self.gamma * self.p_bits * (2 + log2_ceil(n))
    }
}

pub fn comm_cost(scheme: Scheme, n: u64, p: &CostParams) -> Result<u64, CostError> {
    if n == 0 {
        return Err(CostError::NoUsers);
    }
    let log = log2_ceil(n);
    Ok(match scheme {
        Scheme::Lpos => p.lpos_comparison_bits(n) + n * p.eps_ope + p.q_bits * log,
        Scheme::Eceg => 4 * p.q_bits * n,
        Scheme::Pdaft => 2 * p.n_bits * (n + 1),
        Scheme::Ppss => p.p_bits * n,
    })
}

/// Smallest `n*` in `2..=n_max` with LPOS cheaper than ECEG for every
/// `n` in `n*..=n_max`.
pub fn lpos_eceg_crossover(p: &CostParams, n_max: u64) -> Option<u64> {
    let mut crossover = None;
    for n in (2..=n_max).rev() {
        let lpos = comm_cost(Scheme::Lpos, n, p).expect("n >= 1");
        let eceg = comm_cost(Scheme::Eceg, n, p).expect("n >= 1");
        if lpos < eceg {
            crossover = Some(n);
        } else {
            break;
        }
    }
    crossover
}

/// Writes `scheme,n,bits` rows for every scheme and `n` in range.
pub fn write_cost_csv<W: Write>(
    out: W,
    schemes: &[Scheme],
    n_min: u64,
    n_max: u64,
    p: &CostParams,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scheme", "n", "bits"])?;
    for &s in schemes {
        for n in n_min..=n_max {
            w.write_record([
                s.name().to_string(),
                n.to_string(),
                comm_cost(s, n, p)?.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values_at_1024() {
        let p = CostParams::default();
        // 2*16*1024*12 + 1024*128 + 160*10
        assert_eq!(
            comm_cost(Scheme::Lpos, 1024, &p).unwrap(),
            393_216 + 131_072 + 1_600
        );
        assert_eq!(comm_cost(Scheme::Eceg, 1024, &p).unwrap(), 4 * 160 * 1024);
        assert_eq!(comm_cost(Scheme::Ppss, 1024, &p).unwrap(), 1024 * 1024);
        assert_eq!(comm_cost(Scheme::Pdaft, 1024, &p).unwrap(), 2 * 1024 * 1025);
        assert_eq!(comm_cost(Scheme::Pdaft, 1, &p).unwrap(), 4_096);
    }

    #[test]
    fn n_one_has_no_log_term() {
        let p = CostParams::default();
        assert_eq!(
            comm_cost(Scheme::Lpos, 1, &p).unwrap(),
            2 * 16 * 1024 * 2 + 128
        );
        assert_eq!(comm_cost(Scheme::Lpos, 0, &p), Err(CostError::NoUsers));
    }

    #[test]
    fn crossover_matches_brute_force() {
        let p = CostParams::default();
        let n_star = lpos_eceg_crossover(&p, 2048).unwrap();
        for n in 2..=2048u64 {
            let cheaper =
                comm_cost(Scheme::Lpos, n, &p).unwrap() < comm_cost(Scheme::Eceg, n, &p).unwrap();
            if n >= n_star {
                assert!(cheaper, "n = {n}");
            }
        }
        assert!(
            comm_cost(Scheme::Lpos, n_star - 1, &p).unwrap()
                >= comm_cost(Scheme::Eceg, n_star - 1, &p).unwrap()
        );
    }

    #[test]
    fn monotone_in_n() {
        let p = CostParams::default();
        for s in Scheme::ALL {
            let mut prev = 0;
            for n in 1..=4096 {
                let c = comm_cost(s, n, &p).unwrap();
                assert!(c >= prev, "{s} at {n}");
                prev = c;
            }
        }
    }

    #[test]
    fn scheme_names() {
        assert_eq!("ECEG".parse::<Scheme>().unwrap(), Scheme::Eceg);
        assert!("paillier".parse::<Scheme>().is_err());
    }

    #[test]
    fn csv_shape() {
        let mut buf = Vec::new();
        write_cost_csv(&mut buf, &Scheme::ALL, 2, 5, &CostParams::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 4);
        assert!(text.starts_with("scheme,n,bits\nlpos,2,"));
    }
}
