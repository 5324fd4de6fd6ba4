//! The doubling-of-variables diagnostic.
//!
//! For a ladder of measure-penalty strengths `alpha1`, exhaustively
//! maximize over grid node pairs
//!
//! `Phi(x, y) = u(x)/(1-eps) - v(y)/(1+eps) - alpha1 Psi1 - alpha2 Psi2
//!            - eps/(1-eps) Upsilon(x) - eps/(1+eps) Upsilon(y)`
//!
//! and record the penalty products and the Hamiltonian gap
//! `H(x_a, p) - H(y_a, p)` at the shared momentum
//! `p = alpha1 grad Psi1 + alpha2 grad Psi2` (the penalty gradients are
//! antisymmetric, so the same vector feeds both slots). Along the ladder
//! the product `alpha1 Psi1` must decay to zero and `alpha2 Psi2` must
//! stay bounded. Ties are broken toward the lowest pair index so runs are
//! deterministic; pruning uses that both penalties are nonnegative.

use rayon::prelude::*;

use crate::error::Result;
use crate::hj::grid::GridFunction;
use crate::hj::penalty::{
    containment, flux_penalty, flux_penalty_gradient, measure_penalty,
    measure_penalty_gradient, PenaltyParams,
};
use crate::kernel::Kernel;
use crate::rate::hamiltonian;
use crate::space::{FluxVector, Measure, Momentum};

/// Largest pairwise table kept in memory; larger grids recompute
/// penalties per pair.
const TABLE_LIMIT: usize = 4096;

#[derive(Debug, Clone, serde::Serialize)]
pub struct DoublingRow {
    pub alpha1: f64,
    pub x_node: usize,
    pub y_node: usize,
    pub x_measure: Vec<f64>,
    pub x_flux: Vec<f64>,
    pub y_measure: Vec<f64>,
    pub y_flux: Vec<f64>,
    pub psi1: f64,
    pub psi2: f64,
    pub alpha1_psi1: f64,
    pub alpha2_psi2: f64,
    pub hamiltonian_gap: f64,
    pub phi_max: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DoublingReport {
    pub alpha2: f64,
    pub epsilon: f64,
    pub rows: Vec<DoublingRow>,
}

pub fn doubling_diagnostic(
    u: &GridFunction,
    v: &GridFunction,
    kernel: &Kernel,
    params: &PenaltyParams,
    alpha1_ladder: &[f64],
) -> Result<DoublingReport> {
    let grid = u.grid().clone();
    assert_eq!(
        u.values().len(),
        v.values().len(),
        "u and v must share a grid"
    );
    let eps = params.epsilon;
    let alpha2 = params.alpha2;
    let s_count = grid.simplex_count();
    let f_count = grid.flux_count();
    let nodes = grid.node_count();

    let measures: Vec<Measure> = (0..s_count).map(|s| grid.measure_at(s)).collect();
    let fluxes: Vec<FluxVector> = (0..f_count).map(|f| grid.flux_at(f)).collect();
    let upsilon_flux: Vec<f64> = fluxes
        .iter()
        .map(|w| {
            containment(&crate::space::Point::new(
                Measure::uniform(grid.space().q()),
                w.clone(),
            ))
        })
        .collect();

    // Penalty lookups; tabulated when small enough.
    let psi1_table: Option<Vec<f64>> = (s_count <= TABLE_LIMIT).then(|| {
        (0..s_count * s_count)
            .map(|i| measure_penalty(&measures[i / s_count], &measures[i % s_count]))
            .collect()
    });
    let psi2_table: Option<Vec<f64>> = (f_count <= TABLE_LIMIT).then(|| {
        (0..f_count * f_count)
            .map(|i| flux_penalty(&fluxes[i / f_count], &fluxes[i % f_count]))
            .collect()
    });
    let psi1_of = |sx: usize, sy: usize| match &psi1_table {
        Some(t) => t[sx * s_count + sy],
        None => measure_penalty(&measures[sx], &measures[sy]),
    };
    let psi2_of = |fx: usize, fy: usize| match &psi2_table {
        Some(t) => t[fx * f_count + fy],
        None => flux_penalty(&fluxes[fx], &fluxes[fy]),
    };

    // Node-separable parts of Phi.
    let a_part: Vec<f64> = (0..nodes)
        .map(|x| {
            let (_, fx) = grid.split(x);
            u.values()[x] / (1.0 - eps) - eps / (1.0 - eps) * upsilon_flux[fx]
        })
        .collect();
    let b_part: Vec<f64> = (0..nodes)
        .map(|y| {
            let (_, fy) = grid.split(y);
            -v.values()[y] / (1.0 + eps) - eps / (1.0 + eps) * upsilon_flux[fy]
        })
        .collect();
    let b_max = b_part.iter().fold(f64::NEG_INFINITY, |m, &b| m.max(b));

    let mut rows = Vec::with_capacity(alpha1_ladder.len());
    for &alpha1 in alpha1_ladder {
        // Warm start on the diagonal, where both penalties vanish.
        let mut warm = (f64::NEG_INFINITY, usize::MAX);
        for x in 0..nodes {
            let val = a_part[x] + b_part[x];
            if val > warm.0 {
                warm = (val, x * nodes + x);
            }
        }

        let chunk = 64usize;
        let chunk_bests: Vec<(f64, usize)> = (0..nodes.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for x in c * chunk..((c + 1) * chunk).min(nodes) {
                    let bound = warm.0.max(best.0);
                    if a_part[x] + b_max < bound {
                        continue;
                    }
                    let (sx, fxi) = grid.split(x);
                    for y in 0..nodes {
                        let upper = a_part[x] + b_part[y];
                        if upper < bound {
                            continue;
                        }
                        let (sy, fyi) = grid.split(y);
                        let val = upper
                            - alpha1 * psi1_of(sx, sy)
                            - alpha2 * psi2_of(fxi, fyi);
                        if val > best.0 {
                            best = (val, x * nodes + y);
                        }
                    }
                }
                best
            })
            .collect();

        let mut best = warm;
        for cb in chunk_bests {
            if cb.0 > best.0 || (cb.0 == best.0 && cb.1 < best.1) {
                best = cb;
            }
        }

        let (phi_max, pair) = best;
        let x_node = pair / nodes;
        let y_node = pair % nodes;
        let (sx, fxi) = grid.split(x_node);
        let (sy, fyi) = grid.split(y_node);
        let psi1 = psi1_of(sx, sy);
        let psi2 = psi2_of(fxi, fyi);

        // Shared momentum from the closed-form penalty gradients.
        let p_state: Vec<f64> = measure_penalty_gradient(&measures[sx], &measures[sy])
            .iter()
            .map(|g| alpha1 * g)
            .collect();
        let p_flux: Vec<f64> = flux_penalty_gradient(&fluxes[fxi], &fluxes[fyi])
            .iter()
            .map(|g| alpha2 * g)
            .collect();
        let momentum = Momentum { p_state, p_flux };
        let x_point = grid.point(x_node);
        let y_point = grid.point(y_node);
        let gap =
            hamiltonian(&x_point, &momentum, kernel) - hamiltonian(&y_point, &momentum, kernel);

        rows.push(DoublingRow {
            alpha1,
            x_node,
            y_node,
            x_measure: x_point.measure.as_slice().to_vec(),
            x_flux: x_point.flux.as_slice().to_vec(),
            y_measure: y_point.measure.as_slice().to_vec(),
            y_flux: y_point.flux.as_slice().to_vec(),
            psi1,
            psi2,
            alpha1_psi1: alpha1 * psi1,
            alpha2_psi2: alpha2 * psi2,
            hamiltonian_gap: gap,
            phi_max,
        });
    }

    Ok(DoublingReport {
        alpha2,
        epsilon: eps,
        rows,
    })
}
