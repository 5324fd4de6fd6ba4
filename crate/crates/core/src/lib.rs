//! Numerical toolkit for the empirical measure/flux pair of weakly
//! interacting Markov jump processes on a finite state space.
//!
//! The library has five layers:
//!
//! - [`space`]: the state space `E = P({1..q}) x (R+)^Gamma` (probability
//!   simplex times per-edge cumulative fluxes) and the momentum variables
//!   dual to it.
//! - [`kernel`]: limiting jump intensities `v(a, b, mu)`, including the
//!   proper-kernel structure check, Glauber/Potts families, and period
//!   averaging of fast time-periodic intensities.
//! - [`sim`]: exact stochastic simulation of the n-particle process with
//!   flux counters, extraction of the empirical pair trajectory, and the
//!   deterministic mean-field limit.
//! - [`rate`]: the large-deviation calculus (relative entropy, Lagrangian,
//!   Hamiltonian, Legendre duality, trajectory action, contracted rate).
//! - [`hj`]: a grid laboratory for the Hamilton-Jacobi resolvent equation
//!   `f - lambda H f = h`: discretization, lifted prelimit operators,
//!   a control-based resolvent solver, and the doubling-of-variables
//!   diagnostic with explicit penalization and containment functions.
//! - [`experiments`]: desk-scale statistical verification harnesses (tube
//!   probabilities, decay fits, periodic averaging, flux containment).

pub mod error;
pub mod experiments;
pub mod hj;
pub mod io;
pub mod kernel;
pub mod rate;
pub mod sim;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::{Kernel, TimeKernel};
pub use space::{FluxVector, Measure, Momentum, Point, StateSpace};
