//! Simulation and analytic toolkit for adiabatically ramped two-qubit
//! geometric phase gates on trapped ions.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantum`]: truncated spin ⊗ Fock spaces, sparse operators, states and
//!   spin-subspace measurements.
//! * [`ramps`]: Blackman–Harris amplitude envelopes, the constant-adiabaticity
//!   detuning ramp and the full single-arm pulse schedule.
//! * [`hamiltonian`]: ion-frame, bichromatic-frame and resonant-term gate
//!   Hamiltonians, plus the state-dependent-force sideband spectrum.
//! * [`propagator`]: time-ordered propagation of states and ensembles.
//! * [`analytic`]: Bessel, Anger and Weber functions and the closed-form
//!   displacement / geometric-phase / infidelity model.
//! * [`experiments`]: Bell-state protocol, parity analysis, calibration,
//!   sweeps, cross-Kerr shifts and shot sampling.
//!
//! Internal numerics use microseconds and rad/μs. Conversions from Hz and
//! seconds live in [`units`].

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod propagator;
pub mod quadrature;
pub mod quantum;
pub mod ramps;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
