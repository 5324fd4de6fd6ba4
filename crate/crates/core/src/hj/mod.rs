//! Numerical Hamilton-Jacobi laboratory.
//!
//! Discretizes the measure/flux state space, lifts the n-particle
//! generator to its prelimit Hamiltonian, solves the resolvent equation
//! `f - lambda H f = h` by a discrete control problem, and runs the
//! doubling-of-variables diagnostic with the explicit penalization pair
//! and containment function.

pub mod doubling;
pub mod grid;
pub mod lifted;
pub mod penalty;
pub mod resolvent;

pub use doubling::{doubling_diagnostic, DoublingReport, DoublingRow};
pub use grid::{Grid, GridFunction};
pub use lifted::{lifted_hamiltonian, periodic_defect, QuadraticForm, TestFunction};
pub use penalty::{
    containment, containment_gradient, containment_hamiltonian, flux_penalty,
    flux_penalty_gradient, measure_penalty, measure_penalty_gradient, PenaltyParams,
};
pub use resolvent::{
    comparison_check, hj_residual, resolvent_solve, ComparisonReport, ControlCatalog,
    ResidualStats, ResolventParams,
};
