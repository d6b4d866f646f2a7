//! Reflected backward SDEs driven by rough signals.
//!
//! The rough integral ∫ H(S, Y) d𝐗 is removed by a flow transformation along
//! smooth approximants of the signal; the remaining quadratic reflected BSDE is
//! solved by regression Monte Carlo cell by cell. Obstacle PDEs and Snell
//! envelopes give independent cross-checks.

pub mod error;
pub mod expr;
pub mod flow;
pub mod ode;
pub mod pde;
pub mod problem;
pub mod rbsde;
pub mod regression;
pub mod roughpath;
pub mod stopping;

pub use error::{Error, Result};
