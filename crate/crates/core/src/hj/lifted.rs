//! Lifted prelimit operators of the n-particle process.
//!
//! For a smooth `f` on `E`, the nonlinear generator
//! `H_n f = (1/n) e^{-n f} A_n e^{n f}` evaluates to
//!
//! `(1/n) sum_i sum_b r_n(t, Y_i, b, Y) [exp{n (f(eta_n(Y^{i->b}, W + d)) - f(eta_n(Y, W)))} - 1]`
//!
//! with the scaling map `eta_n(Y, W) = (mu_n[Y], W / n)`. Particles in the
//! same state share a rate, so the double sum aggregates into the q(q-1)
//! directed channels. As `n` grows, `H_n (f o eta_n)` converges to
//! `H f = H(x, grad f)` at first order in `1/n`.

use crate::error::{Error, Result};
use crate::rate::EXP_OVERFLOW;
use crate::sim::MicroRates;
use crate::space::{FluxVector, Measure, Point, StateSpace};

/// A smooth test function on `E`, evaluable at arbitrary points.
pub trait TestFunction: Send + Sync {
    fn eval(&self, x: &Point) -> f64;

    /// Analytic gradient, when available (used by limit comparisons).
    fn gradient(&self, x: &Point) -> Option<(Vec<f64>, Vec<f64>)> {
        let _ = x;
        None
    }
}

impl<F: Fn(&Point) -> f64 + Send + Sync> TestFunction for F {
    fn eval(&self, x: &Point) -> f64 {
        self(x)
    }
}

/// Diagonal quadratic-plus-linear test function
/// `f(mu, w) = <c_mu, mu> + <c_w, w> + 1/2 (sum_a q_mu_a mu_a^2 + sum_e q_w_e w_e^2)`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub linear_measure: Vec<f64>,
    pub linear_flux: Vec<f64>,
    pub quad_measure: Vec<f64>,
    pub quad_flux: Vec<f64>,
}

impl QuadraticForm {
    pub fn linear(linear_measure: Vec<f64>, linear_flux: Vec<f64>) -> Self {
        let q = linear_measure.len();
        let n_edges = linear_flux.len();
        Self {
            linear_measure,
            linear_flux,
            quad_measure: vec![0.0; q],
            quad_flux: vec![0.0; n_edges],
        }
    }
}

impl TestFunction for QuadraticForm {
    fn eval(&self, x: &Point) -> f64 {
        let mut total = 0.0;
        for (a, &m) in x.measure.as_slice().iter().enumerate() {
            total += self.linear_measure[a] * m + 0.5 * self.quad_measure[a] * m * m;
        }
        for (e, &w) in x.flux.as_slice().iter().enumerate() {
            total += self.linear_flux[e] * w + 0.5 * self.quad_flux[e] * w * w;
        }
        total
    }

    fn gradient(&self, x: &Point) -> Option<(Vec<f64>, Vec<f64>)> {
        let p_state = x
            .measure
            .as_slice()
            .iter()
            .enumerate()
            .map(|(a, &m)| self.linear_measure[a] + self.quad_measure[a] * m)
            .collect();
        let p_flux = x
            .flux
            .as_slice()
            .iter()
            .enumerate()
            .map(|(e, &w)| self.linear_flux[e] + self.quad_flux[e] * w)
            .collect();
        Some((p_state, p_flux))
    }
}

/// Evaluate `H_n (f o eta_n)` at the configuration `(states, flux_counts)`
/// and time `t`. Exponents above [`EXP_OVERFLOW`] yield the infinite
/// sentinel, matching the limiting Hamiltonian.
pub fn lifted_hamiltonian(
    f: &dyn TestFunction,
    mr: &MicroRates,
    space: &StateSpace,
    states: &[usize],
    flux_counts: &[u64],
    t: f64,
) -> Result<f64> {
    let n = mr.n();
    if states.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} states for n = {n}",
            states.len()
        )));
    }
    if flux_counts.len() != space.n_edges() {
        return Err(Error::InvalidArgument(
            "flux counters do not match the edge set".into(),
        ));
    }
    let q = space.q();
    let scale = 1.0 / n as f64;
    let mut counts = vec![0u64; q];
    for &s in states {
        counts[s] += 1;
    }
    let mu = Measure::from_raw(counts.iter().map(|&c| c as f64 * scale).collect());
    let w = FluxVector::from_raw(flux_counts.iter().map(|&c| c as f64 * scale).collect());
    let base = f.eval(&Point::new(mu.clone(), w.clone()));

    let mut total = 0.0;
    for a in 0..q {
        if counts[a] == 0 {
            continue;
        }
        for b in 0..q {
            if a == b {
                continue;
            }
            let r = mr.rate_for_counts(t, a, b, states, &counts, &mu);
            if r == 0.0 {
                continue;
            }
            let mut mu_next = mu.as_slice().to_vec();
            mu_next[a] -= scale;
            mu_next[b] += scale;
            let mut w_next = w.as_slice().to_vec();
            w_next[space.edge_index(a, b)] += scale;
            let shifted = f.eval(&Point::new(
                Measure::from_raw(mu_next),
                FluxVector::from_raw(w_next),
            ));
            let exponent = n as f64 * (shifted - base);
            if exponent > EXP_OVERFLOW {
                return Ok(f64::INFINITY);
            }
            total += counts[a] as f64 * scale * r * (exponent.exp() - 1.0);
        }
    }
    Ok(total)
}

/// The periodic-averaging defect
///
/// `F_{f,n}(t, Y, W) = int_0^t H_n[s](f o eta_n) ds
///                   - (t / P) int_0^P H_n[s](f o eta_n) ds`
///
/// with `P = T0 / gamma_n` the micro period, both integrals over the time
/// argument of the rates at the frozen configuration, by trapezoidal
/// quadrature with `quad_points` nodes per period. Vanishes identically
/// for time-constant rates, is `P`-periodic in `t`, and its sup over one
/// period decays like `1 / gamma_n`.
pub fn periodic_defect(
    f: &dyn TestFunction,
    mr: &MicroRates,
    space: &StateSpace,
    states: &[usize],
    flux_counts: &[u64],
    t: f64,
    quad_points: usize,
) -> Result<f64> {
    let period = mr.micro_period().ok_or_else(|| {
        Error::InvalidArgument("periodic defect needs rates in periodic mode".into())
    })?;
    if quad_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "quad_points = {quad_points}, need >= 2"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("t = {t}")));
    }
    let integrand =
        |s: f64| -> Result<f64> { lifted_hamiltonian(f, mr, space, states, flux_counts, s) };
    let upto_t = trapezoid(&integrand, t, ((quad_points as f64 * t / period).ceil() as usize).max(2))?;
    let one_period = trapezoid(&integrand, period, quad_points.max(2))?;
    Ok(upto_t - t / period * one_period)
}

fn trapezoid(f: &impl Fn(f64) -> Result<f64>, upper: f64, points: usize) -> Result<f64> {
    if upper == 0.0 {
        return Ok(0.0);
    }
    let n = points - 1;
    let h = upper / n as f64;
    let mut sum = 0.5 * (f(0.0)? + f(upper)?);
    for k in 1..n {
        sum += f(k as f64 * h)?;
    }
    Ok(sum * h)
}
