//! A discrete control approximation of the resolvent equation
//! `f - lambda H f = h`.
//!
//! The candidate solution is the value of a discounted control problem:
//! feasible velocities are edgewise scalings of the kernel intensities
//! (so the running cost has the closed form
//! `L = sum_e v_e (s_e log s_e - s_e + 1)`), states advance by projected
//! Euler steps, and values interpolate multilinearly between nodes. One
//! Bellman update reads
//!
//! `T f(x) = max_c { (1 - beta) [h(x) - lambda L(x, c)] + beta f(x + dt u_c) }`
//!
//! with `beta = e^{-dt/lambda}`; the exponential weights make `T` a
//! monotone sup-norm contraction with `|fixed point| <= |h|_inf`, and the
//! catalog always contains the zero-cost control `s = 1`. Iteration stops
//! when the sup-norm update drops below `tol`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hj::grid::GridFunction;
use crate::kernel::Kernel;
use crate::rate::divergence;
use crate::space::Momentum;

/// Finite velocity catalog: per-edge multipliers applied to the kernel
/// intensities at the current node.
#[derive(Debug, Clone)]
pub struct ControlCatalog {
    scalings: Vec<Vec<f64>>,
}

impl ControlCatalog {
    /// Cartesian power of a scale set over the edges, e.g.
    /// `{0, 1/2, 1, 2, 4}^Gamma`. The set must contain the scale `1`.
    pub fn edgewise(scales: &[f64], n_edges: usize) -> Result<Self> {
        if scales.is_empty() || scales.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("scales {scales:?}")));
        }
        if !scales.contains(&1.0) {
            return Err(Error::InvalidArgument(
                "the control catalog must contain the zero-cost scaling 1".into(),
            ));
        }
        let count = scales.len().checked_pow(n_edges as u32).ok_or_else(|| {
            Error::InvalidArgument("control catalog overflow".into())
        })?;
        if count > 1_000_000 {
            return Err(Error::InvalidArgument(format!(
                "control catalog of {count} entries is too large"
            )));
        }
        let mut scalings = Vec::with_capacity(count);
        let mut digits = vec![0usize; n_edges];
        loop {
            scalings.push(digits.iter().map(|&d| scales[d]).collect());
            let mut e = 0;
            loop {
                if e == n_edges {
                    return Ok(Self { scalings });
                }
                digits[e] += 1;
                if digits[e] < scales.len() {
                    break;
                }
                digits[e] = 0;
                e += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.scalings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scalings.is_empty()
    }

    pub fn scalings(&self) -> &[Vec<f64>] {
        &self.scalings
    }
}

/// Entropy factor `s log s - s + 1` of a tilted intensity (`phi(0) = 1`).
fn tilt_entropy(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        s * s.ln() - s + 1.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResolventParams {
    pub lambda: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl ResolventParams {
    pub fn new(lambda: f64, dt: f64, tol: f64, max_iters: usize) -> Result<Self> {
        if !(lambda > 0.0) || !(dt > 0.0) || !(tol > 0.0) || max_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "lambda = {lambda}, dt = {dt}, tol = {tol}, max_iters = {max_iters}"
            )));
        }
        Ok(Self {
            lambda,
            dt,
            tol,
            max_iters,
        })
    }
}

/// Value iteration for the discounted control problem; returns the fixed
/// point as the resolvent candidate `R(lambda) h`.
pub fn resolvent_solve(
    h: &GridFunction,
    kernel: &Kernel,
    catalog: &ControlCatalog,
    params: ResolventParams,
) -> Result<GridFunction> {
    let grid = h.grid().clone();
    let space = kernel.space().clone();
    if space.q() != grid.space().q() {
        return Err(Error::InvalidArgument("kernel/grid state spaces differ".into()));
    }
    let q = space.q();
    let n_edges = space.n_edges();
    let beta = (-params.dt / params.lambda).exp();
    let weight = 1.0 - beta;

    // Everything per simplex node is flux-independent: intensities, and
    // per control the running cost, the advanced measure and the flux
    // increment.
    struct ControlData {
        cost: f64,
        mu_next: Vec<f64>,
        dw: Vec<f64>,
    }
    let per_simplex: Vec<Vec<ControlData>> = (0..grid.simplex_count())
        .into_par_iter()
        .map(|s_idx| {
            let mu = grid.measure_at(s_idx);
            let rates: Vec<f64> = (0..n_edges).map(|e| kernel.rate(e, &mu)).collect();
            catalog
                .scalings()
                .iter()
                .map(|scales| {
                    let w_dot: Vec<f64> =
                        (0..n_edges).map(|e| scales[e] * rates[e]).collect();
                    let cost: f64 = (0..n_edges)
                        .map(|e| rates[e] * tilt_entropy(scales[e]))
                        .sum();
                    let mu_dot = divergence(&space, &w_dot);
                    let stepped: Vec<f64> = (0..q)
                        .map(|a| mu.mass(a) + params.dt * mu_dot[a])
                        .collect();
                    let mu_next =
                        crate::space::Measure::project(stepped).as_slice().to_vec();
                    let dw: Vec<f64> = w_dot.iter().map(|&wd| params.dt * wd).collect();
                    ControlData { cost, mu_next, dw }
                })
                .collect()
        })
        .collect();

    let mut values = h.values().to_vec();
    let mut residual = f64::INFINITY;
    for _iter in 0..params.max_iters {
        let old = &values;
        let new: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                let (s_idx, f_idx) = grid.split(node);
                let w = grid.flux_at(f_idx);
                let h_here = h.values()[node];
                let mut best = f64::NEG_INFINITY;
                for data in &per_simplex[s_idx] {
                    let w_next: Vec<f64> = (0..n_edges)
                        .map(|e| (w.get(e) + data.dw[e]).min(grid.w_max()))
                        .collect();
                    let continuation = grid
                        .interpolate(old, &data.mu_next, &w_next)
                        .expect("interpolation inside the grid");
                    let value = weight * (h_here - params.lambda * data.cost)
                        + beta * continuation;
                    if value > best {
                        best = value;
                    }
                }
                best
            })
            .collect();
        residual = new
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        values = new;
        if residual < params.tol {
            return GridFunction::new(grid, values);
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iters,
        residual,
    })
}

/// Residual statistics of a resolvent candidate. Interior nodes use
/// central differences; the full-domain figures include the one-sided
/// boundary stencils.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualStats {
    pub interior_nodes: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub all_nodes: usize,
    pub all_max_abs: f64,
    pub all_mean_abs: f64,
}

/// Plug a candidate into `f - lambda H(x, grad f) - h` with finite
/// differences (central in the interior, one-sided at the simplex and
/// flux boundaries). The gradient lives in the embedded coordinates: the
/// first `q - 1` measure directions (moving mass against the last state)
/// and the flux directions.
pub fn hj_residual(
    f: &GridFunction,
    h: &GridFunction,
    lambda: f64,
    kernel: &Kernel,
) -> Result<ResidualStats> {
    let grid = f.grid().clone();
    let space = kernel.space().clone();
    let q = space.q();
    let n_edges = space.n_edges();
    let m = grid.resolution();
    let values = f.values();

    // (residual, is_interior) per node.
    let residuals: Vec<(f64, bool)> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let (s_idx, f_idx) = grid.split(node);
            let counts = grid.simplex_counts(s_idx);
            let levels = grid.flux_levels(f_idx);
            let mut interior = true;
            let mut p_state = vec![0.0; q];
            for a in 0..q - 1 {
                let can_up = counts[a] < m as u32 && counts[q - 1] >= 1;
                let can_down = counts[a] >= 1 && counts[q - 1] < m as u32;
                let shifted = |da: i64| {
                    let mut c = counts.to_vec();
                    c[a] = (c[a] as i64 + da) as u32;
                    c[q - 1] = (c[q - 1] as i64 - da) as u32;
                    grid.simplex_index(&c).expect("neighbor simplex node")
                };
                let here = values[node];
                p_state[a] = match (can_up, can_down) {
                    (true, true) => {
                        (values[grid.node_of(shifted(1), f_idx)]
                            - values[grid.node_of(shifted(-1), f_idx)])
                            / (2.0 / m as f64)
                    }
                    (true, false) => {
                        interior = false;
                        (values[grid.node_of(shifted(1), f_idx)] - here) / (1.0 / m as f64)
                    }
                    (false, true) => {
                        interior = false;
                        (here - values[grid.node_of(shifted(-1), f_idx)]) / (1.0 / m as f64)
                    }
                    (false, false) => {
                        interior = false;
                        0.0
                    }
                };
            }
            let mut p_flux = vec![0.0; n_edges];
            for e in 0..n_edges {
                let can_up = levels[e] + 1 < grid.w_levels();
                let can_down = levels[e] >= 1;
                let shifted = |de: i64| {
                    let mut l = levels.clone();
                    l[e] = (l[e] as i64 + de) as usize;
                    grid.node_of(s_idx, grid.flux_index(&l))
                };
                let here = values[node];
                p_flux[e] = match (can_up, can_down) {
                    (true, true) => {
                        (values[shifted(1)] - values[shifted(-1)]) / (2.0 * grid.h_w())
                    }
                    (true, false) => {
                        interior = false;
                        (values[shifted(1)] - here) / grid.h_w()
                    }
                    (false, true) => {
                        interior = false;
                        (here - values[shifted(-1)]) / grid.h_w()
                    }
                    (false, false) => {
                        interior = false;
                        0.0
                    }
                };
            }
            let x = grid.point(node);
            let momentum = Momentum { p_state, p_flux };
            let ham = crate::rate::hamiltonian(&x, &momentum, kernel);
            (values[node] - lambda * ham - h.values()[node], interior)
        })
        .collect();

    let interior: Vec<f64> = residuals
        .iter()
        .filter(|(_, int)| *int)
        .map(|(r, _)| *r)
        .collect();
    if interior.is_empty() {
        return Err(Error::InvalidArgument(
            "grid has no interior nodes for the residual check".into(),
        ));
    }
    let max_abs = interior.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
    let mean_abs = interior.iter().map(|r| r.abs()).sum::<f64>() / interior.len() as f64;
    let all_max_abs = residuals.iter().fold(0.0f64, |m, (r, _)| m.max(r.abs()));
    let all_mean_abs =
        residuals.iter().map(|(r, _)| r.abs()).sum::<f64>() / residuals.len() as f64;
    Ok(ResidualStats {
        interior_nodes: interior.len(),
        max_abs,
        mean_abs,
        all_nodes: residuals.len(),
        all_max_abs,
        all_mean_abs,
    })
}

/// Numerical-uniqueness check: two candidates for the same `(lambda, h)`
/// must agree within `tol` in both directions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonReport {
    pub pass: bool,
    pub max_a_minus_b: f64,
    pub max_b_minus_a: f64,
    pub worst_node: usize,
    pub tol: f64,
}

pub fn comparison_check(a: &GridFunction, b: &GridFunction, tol: f64) -> Result<ComparisonReport> {
    if a.values().len() != b.values().len() {
        return Err(Error::InvalidArgument(
            "grid functions live on different grids".into(),
        ));
    }
    let mut max_ab = f64::NEG_INFINITY;
    let mut max_ba = f64::NEG_INFINITY;
    let mut worst_node = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, (&x, &y)) in a.values().iter().zip(b.values()).enumerate() {
        let d = x - y;
        max_ab = max_ab.max(d);
        max_ba = max_ba.max(-d);
        if d.abs() > worst {
            worst = d.abs();
            worst_node = i;
        }
    }
    Ok(ComparisonReport {
        pass: max_ab <= tol && max_ba <= tol,
        max_a_minus_b: max_ab,
        max_b_minus_a: max_ba,
        worst_node,
        tol,
    })
}
