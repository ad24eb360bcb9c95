use crate::gt::ElGamalParams;
use crate::ope::{OpeParams, Padding};

use super::ProtocolError;

/// Rule for the voting threshold given the number of active voters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LambdaPolicy {
    /// `ceil(n / 2)`.
    #[default]
    HalfVoting,
    /// A constant threshold, independent of `n`.
    Fixed(usize),
}

pub fn compute_lambda(policy: LambdaPolicy, n_active: usize) -> Result<usize, ProtocolError> {
    if n_active == 0 {
        return Err(ProtocolError::NoQuorum);
    }
    Ok(match policy {
        LambdaPolicy::HalfVoting => n_active.div_ceil(2),
        LambdaPolicy::Fixed(k) => k,
    })
}

/// Parameters every party knows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicParams {
    /// RSS bit width; also the comparison length.
    pub gamma: u32,
    pub ope: OpeParams,
    /// The deployment-wide padding `D`.
    pub padding: Padding,
    pub gt: ElGamalParams,
    /// Sensing period in logical ticks.
    pub sensing_period: u64,
    /// Negative-control switch for the taint suite: users append their
    /// plaintext reading to every report. Never set outside tests.
    pub debug_leak_plaintext_rss: bool,
}

impl PublicParams {
    pub fn new(gt: ElGamalParams, ope: OpeParams, padding: Padding) -> Result<Self, ProtocolError> {
        let gamma = gt.l;
        ope.check_rss_bits(gamma)?;
        if padding.len() != ope.padding_bits(gamma) {
            return Err(ProtocolError::Config(format!(
                "padding has {} bits, need {}",
                padding.len(),
                ope.padding_bits(gamma)
            )));
        }
        Ok(PublicParams {
            gamma,
            ope,
            padding,
            gt,
            sensing_period: 1,
            debug_leak_plaintext_rss: false,
        })
    }

    pub fn rss_max(&self) -> u64 {
        (1u64 << self.gamma) - 1
    }
}

/// The fusion center's configuration; `tau` never leaves the FC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensingConfig {
    pub tau: u64,
    pub lambda: LambdaPolicy,
    pub public: PublicParams,
    /// Replace the FC's comparison key pair on every membership change.
    pub refresh_pi_on_membership: bool,
}

impl SensingConfig {
    pub fn new(tau: u64, public: PublicParams) -> Result<Self, ProtocolError> {
        if tau > public.rss_max() {
            return Err(ProtocolError::Config(format!(
                "tau = {tau} does not fit in {} bits",
                public.gamma
            )));
        }
        Ok(SensingConfig {
            tau,
            lambda: LambdaPolicy::HalfVoting,
            public,
            refresh_pi_on_membership: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_voting() {
        let p = LambdaPolicy::HalfVoting;
        assert_eq!(compute_lambda(p, 5).unwrap(), 3);
        assert_eq!(compute_lambda(p, 8).unwrap(), 4);
        assert_eq!(compute_lambda(p, 1).unwrap(), 1);
        assert_eq!(compute_lambda(p, 7).unwrap(), 4);
        assert!(matches!(compute_lambda(p, 0), Err(ProtocolError::NoQuorum)));
        assert_eq!(compute_lambda(LambdaPolicy::Fixed(2), 9).unwrap(), 2);
    }
}
