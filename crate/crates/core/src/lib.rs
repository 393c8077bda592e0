//! Relay amplification design for multi-hop amplify-and-forward networks.
//!
//! The crate models an m-hop network in which every relay group normalises
//! its received signal and forwards it scaled by a per-node complex gain.
//! Two design criteria are provided: minimum mean-square error at the
//! destinations ([`mmse`]) and maximum sum rate ([`msr`]). [`sim`] runs the
//! Monte-Carlo BER and sum-rate sweeps, and [`complexity`] counts the
//! arithmetic cost of one design iteration.

// `!(x > 0.0)` is used on purpose so NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod error;
pub mod linalg;
pub mod mmse;
pub mod msr;
pub mod network;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use network::{ChannelSet, ConstraintKind, GainState, PowerConstraint, SecondOrderStats, Topology};
