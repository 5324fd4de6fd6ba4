//! The doubling-of-variables penalization pair and the containment
//! function.
//!
//! The measure penalty is one-sided quadratic,
//! `Psi1(mu, mu_hat) = 1/2 sum_a ((mu(a) - mu_hat(a))^-)^2`, the flux
//! penalty is the plain quadratic distance, and the containment function
//! `Upsilon(mu, w) = sum_e log(1 + w_e)` has compact sublevel sets on the
//! flux box with `H(x, grad Upsilon)` bounded by `(e - 1) sum_e sup v_e`.
//! Both penalty gradients are antisymmetric in their two arguments, so a
//! single momentum vector feeds both sides of the Hamiltonian gap.

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::rate::hamiltonian;
use crate::space::{FluxVector, Measure, Momentum, Point};

/// Penalty strengths and containment weight of a doubling run.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PenaltyParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub epsilon: f64,
}

impl PenaltyParams {
    pub fn new(alpha1: f64, alpha2: f64, epsilon: f64) -> Result<Self> {
        if !(alpha1 > 0.0 && alpha2 > 0.0 && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty parameters must be positive: ({alpha1}, {alpha2}, {epsilon})"
            )));
        }
        Ok(Self {
            alpha1,
            alpha2,
            epsilon,
        })
    }
}

fn negative_part(x: f64) -> f64 {
    x.min(0.0)
}

/// `Psi1(mu, mu_hat) = 1/2 sum_a ((mu(a) - mu_hat(a))^-)^2`; zero exactly
/// on the diagonal (both arguments are probability vectors).
pub fn measure_penalty(mu: &Measure, mu_hat: &Measure) -> f64 {
    mu.as_slice()
        .iter()
        .zip(mu_hat.as_slice())
        .map(|(&x, &y)| negative_part(x - y).powi(2))
        .sum::<f64>()
        * 0.5
}

/// Gradient of `Psi1(., mu_hat)` at `mu`; the gradient in the second
/// argument is exactly its negative.
pub fn measure_penalty_gradient(mu: &Measure, mu_hat: &Measure) -> Vec<f64> {
    mu.as_slice()
        .iter()
        .zip(mu_hat.as_slice())
        .map(|(&x, &y)| negative_part(x - y))
        .collect()
}

/// `Psi2(w, w_hat) = 1/2 sum_e (w_e - w_hat_e)^2`.
pub fn flux_penalty(w: &FluxVector, w_hat: &FluxVector) -> f64 {
    w.as_slice()
        .iter()
        .zip(w_hat.as_slice())
        .map(|(&x, &y)| (x - y).powi(2))
        .sum::<f64>()
        * 0.5
}

/// Gradient of `Psi2(., w_hat)` at `w`; antisymmetric like `Psi1`.
pub fn flux_penalty_gradient(w: &FluxVector, w_hat: &FluxVector) -> Vec<f64> {
    w.as_slice()
        .iter()
        .zip(w_hat.as_slice())
        .map(|(&x, &y)| x - y)
        .collect()
}

/// Containment function `Upsilon(mu, w) = sum_e log(1 + w_e)`.
pub fn containment(x: &Point) -> f64 {
    x.flux.as_slice().iter().map(|&w| (1.0 + w).ln()).sum()
}

/// Closed-form gradient of the containment function as a momentum:
/// zero on the measure block, `1 / (1 + w_e)` per flux coordinate.
pub fn containment_gradient(x: &Point) -> Momentum {
    Momentum {
        p_state: vec![0.0; x.measure.len()],
        p_flux: x.flux.as_slice().iter().map(|&w| 1.0 / (1.0 + w)).collect(),
    }
}

/// `H(x, grad Upsilon(x))`, bounded uniformly in `x` for bounded kernels.
pub fn containment_hamiltonian(x: &Point, kernel: &Kernel) -> f64 {
    hamiltonian(x, &containment_gradient(x), kernel)
}
