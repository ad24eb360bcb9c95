//! Privacy-preserving cooperative spectrum sensing.
//!
//! Secondary users report order-preserving encryptions of their signal
//! strength under a group key the fusion center never learns; the fusion
//! center then runs a logarithmic number of secure comparisons against its
//! private threshold to reach a half-voting decision.

pub mod channel;
pub mod cost;
pub mod group;
pub mod group_key;
pub mod gt;
pub mod ope;
pub mod protocol;
pub mod selftest;
pub mod sim;
