//! Simulation engine for magnetic-field-gradient metrology with a pair of
//! entangled two-component Bose-Einstein condensates.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`] - truncated bosonic bases, mode operators and Schwinger spins.
//! * [`hamiltonian`] - double-well, microwave-coupling and collective-spin
//!   Hamiltonians.
//! * [`dynamics`] - unitary propagation and Lindblad integration with atom
//!   loss.
//! * [`statesynth`] - singlet construction and its dynamical preparation by
//!   pair tunnelling plus a relative phase shift.
//! * [`metrology`] - the `<J~^2_yz>` estimator, phase uncertainty and
//!   reference formulas.
//! * [`oracle`] - slow, independent reference implementations.
//! * [`experiments`] - figure recipes, config handling and CSV/JSON output.
//!
//! Units: `hbar = 1` and the mean microwave coupling `Omega` sets the
//! frequency scale, so every rate is in units of `Omega` and time in
//! units of `1/Omega`.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod hamiltonian;
pub mod metrology;
pub mod oracle;
pub mod statesynth;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;
