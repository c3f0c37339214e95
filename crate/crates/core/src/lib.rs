//! Random dynamics of perturbed diagonal matrices `T_n = e^{λP_n} R` acting on
//! Grassmannians.
//!
//! The crate provides the projection, vector and pair actions, the
//! concentration observable `d(Q)`, ensembles of perturbations with exact and
//! Monte-Carlo coupling constants, trajectory simulation with region
//! diagnostics, Lyapunov partial sums, perturbative expansions, and an audit
//! suite that checks the associated inequalities on random inputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod grassmann;
pub mod linalg;
pub mod lyapunov;
pub mod partition;
pub mod perturbation;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
