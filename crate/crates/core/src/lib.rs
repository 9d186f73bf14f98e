//! Numerical laboratory for steering gKdV solitons with a bilinear control.
//!
//! The crate covers closed-form soliton profiles, the control profile and the
//! slow parameter ODE, the first-order corrector of the linearised operator,
//! the localised ansatz and its residual, an exponential-integrator spectral
//! solver for the controlled equation, modulation fitting with stability
//! diagnostics, and the experiment harness behind the `gkdv-lab` CLI.

pub mod ansatz;
pub mod banded;
pub mod control;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linearized;
pub mod modulation;
pub mod ode;
pub mod pde;
pub mod quadrature;
pub mod soliton;

pub use error::{Error, Result};
