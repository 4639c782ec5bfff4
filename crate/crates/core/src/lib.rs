//! Simulation of a tweezer-based atomic interferometer.
//!
//! The library models a single atom split between optical tweezers by an
//! adiabatic tunneling protocol, propagated on a 1D grid with a split-step
//! Fourier method, with laser amplitude noise and detection shot noise, and
//! provides Monte Carlo phase-estimation campaigns plus sensitivity
//! calculators for gravimetry, Casimir-Polder mapping, and a big-G style
//! source-mass measurement.

pub mod applications;
pub mod bloch;
pub mod campaign;
pub mod cli;
pub mod error;
pub mod noise;
pub mod potential;
pub mod protocols;
pub mod solver;
pub mod units;

pub use error::{Error, Result};
