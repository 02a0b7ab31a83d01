//! Chance-constrained AC optimal power flow.
//!
//! The solver alternates between a deterministic AC-OPF with tightened
//! bounds and a recomputation of the tightenings from the linearized response
//! of the power flow to demand errors, until the tightenings stop changing.
//! Around that loop the crate provides case parsing, power-flow residuals and
//! Jacobians, an interior-point NLP solver, convergence-bound estimates and a
//! Monte Carlo validator.

pub mod acpf;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod fixedpoint;
pub mod mcvalidate;
pub mod netcase;
pub mod nlp;
pub mod opf;
pub mod sparse;
pub mod tighten;

pub use error::{Error, Result};
