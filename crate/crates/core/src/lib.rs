//! Deterministic short-term equity dynamics.
//!
//! The model couples price `x1`, volume `x2`, the volume-to-price
//! sensitivity `x3` and the price-to-volume slope `x4`:
//!
//! ```text
//! x1' = x1 / x4 + z
//! x2' = x3 x1 / x4
//! x3' = beta1 x2
//! x4' = beta2 x2
//! ```
//!
//! Modules, bottom-up:
//!
//! - [`dynamics`]: the four-equation system and its integrator.
//! - [`reduction`]: the matched manifold and the master equation for `u = x4`.
//! - [`phase`]: closed-form phase curves, bifurcation points and cycle words.
//! - [`montecarlo`]: seeded ensembles with random branch choices.
//! - [`tailfit`]: power-law tail exponents of correlation samples.
//! - [`forcing`]: the master equation under an input `z`.
//! - [`control`]: feasibility and ranking of specialist strategies.
//! - [`cli`]: the `eqdyn` command line.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod forcing;
pub mod format;
pub mod montecarlo;
pub mod ode;
pub mod phase;
pub mod reduction;
pub mod roots;
pub mod tailfit;

pub use error::{Error, Result};
