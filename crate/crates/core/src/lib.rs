//! Compressed meter-reading collection over tree networks.
//!
//! The library models a collection round as three cooperating layers:
//!
//! * a transmission layer ([`topology`], [`protocol`]) where meters relay or
//!   aggregate readings up a rooted tree and the collector assembles `y = Φd`
//!   from at most `M` messages per link,
//! * a recovery layer ([`coeff`], [`wavelet`], [`recovery`]) where the
//!   collector reconstructs the full reading vector from the compressed
//!   measurements by l1 minimisation in an adaptively re-estimated sorted
//!   wavelet domain, and
//! * a security layer ([`crypto`], [`secure`]) that runs the same aggregation
//!   over Paillier ciphertexts with signed, timestamped packets.
//!
//! [`trace`] and [`analysis`] supply reading data and evaluation metrics; the
//! `gridcs-cli` crate drives experiments end to end.

pub mod analysis;
pub mod coeff;
pub mod crypto;
pub mod protocol;
pub mod recovery;
pub mod seed;
pub mod secure;
pub mod topology;
pub mod trace;
pub mod wavelet;

pub use topology::{NodeId, Role, Topology};
pub use trace::ReadingTrace;
