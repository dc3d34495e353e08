//! Two-particle stochastic collapse simulator.
//!
//! The full model evolves a configuration-space wavefunction under a
//! Hamiltonian step followed by an interaction-driven stochastic step. A
//! reduced model tracks only the weight of the interacting branch as a
//! bounded martingale. Audits check conservation identities on recorded
//! steps.

// NaN-rejecting `!(x > 0.0)` guards are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod branchwalk;
pub mod collapse;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod operators;
pub mod rng;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
