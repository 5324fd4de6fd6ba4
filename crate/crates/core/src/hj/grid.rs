//! Discretization of `E = P({1..q}) x [0, w_max]^Gamma`.
//!
//! The simplex is meshed at resolution `m` (all measures with coordinates
//! in `{0, 1/m, ..., 1}`), the flux box uniformly with step `h_w` per
//! edge. Nodes are indexed `simplex_rank * flux_count + flux_rank` with
//! the flux rank in mixed radix over the edges.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::space::{FluxVector, Measure, Point, StateSpace};

/// Hard cap on the node count of a single grid.
pub const MAX_GRID_NODES: u128 = 50_000_000;

#[derive(Debug)]
pub struct Grid {
    space: Arc<StateSpace>,
    m: usize,
    w_max: f64,
    h_w: f64,
    w_levels: usize,
    simplex_nodes: Vec<Vec<u32>>,
    simplex_rank: HashMap<Vec<u32>, usize>,
}

impl Grid {
    pub fn new(space: Arc<StateSpace>, m: usize, w_max: f64, h_w: f64) -> Result<Arc<Self>> {
        if m == 0 || !(w_max > 0.0) || !(h_w > 0.0) || h_w > w_max {
            return Err(Error::InvalidArgument(format!(
                "grid parameters m = {m}, w_max = {w_max}, h_w = {h_w}"
            )));
        }
        let w_levels = (w_max / h_w).floor() as usize + 1;
        let mut simplex_nodes = Vec::new();
        let mut stack = vec![0u32; space.q()];
        enumerate_compositions(m as u32, 0, &mut stack, &mut simplex_nodes, space.q());
        let nodes = simplex_nodes.len() as u128 * (w_levels as u128).pow(space.n_edges() as u32);
        if nodes > MAX_GRID_NODES {
            return Err(Error::GridTooLarge {
                nodes,
                limit: MAX_GRID_NODES,
            });
        }
        let simplex_rank = simplex_nodes
            .iter()
            .enumerate()
            .map(|(i, node)| (node.clone(), i))
            .collect();
        Ok(Arc::new(Self {
            space,
            m,
            w_max,
            h_w,
            w_levels,
            simplex_nodes,
            simplex_rank,
        }))
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn h_w(&self) -> f64 {
        self.h_w
    }

    pub fn w_levels(&self) -> usize {
        self.w_levels
    }

    pub fn simplex_count(&self) -> usize {
        self.simplex_nodes.len()
    }

    pub fn flux_count(&self) -> usize {
        self.w_levels.pow(self.space.n_edges() as u32)
    }

    pub fn node_count(&self) -> usize {
        self.simplex_count() * self.flux_count()
    }

    /// Largest mesh width of the grid, `max(1/m, h_w)`.
    pub fn spacing(&self) -> f64 {
        (1.0 / self.m as f64).max(self.h_w)
    }

    pub fn split(&self, node: usize) -> (usize, usize) {
        (node / self.flux_count(), node % self.flux_count())
    }

    pub fn node_of(&self, simplex_idx: usize, flux_idx: usize) -> usize {
        simplex_idx * self.flux_count() + flux_idx
    }

    pub fn simplex_counts(&self, simplex_idx: usize) -> &[u32] {
        &self.simplex_nodes[simplex_idx]
    }

    pub fn simplex_index(&self, counts: &[u32]) -> Option<usize> {
        self.simplex_rank.get(counts).copied()
    }

    pub fn measure_at(&self, simplex_idx: usize) -> Measure {
        Measure::from_raw(
            self.simplex_nodes[simplex_idx]
                .iter()
                .map(|&k| k as f64 / self.m as f64)
                .collect(),
        )
    }

    /// Per-edge levels of a flux rank, little-endian in the edge order.
    pub fn flux_levels(&self, mut flux_idx: usize) -> Vec<usize> {
        let mut levels = vec![0usize; self.space.n_edges()];
        for l in levels.iter_mut() {
            *l = flux_idx % self.w_levels;
            flux_idx /= self.w_levels;
        }
        levels
    }

    pub fn flux_index(&self, levels: &[usize]) -> usize {
        let mut idx = 0usize;
        for &l in levels.iter().rev() {
            idx = idx * self.w_levels + l;
        }
        idx
    }

    pub fn flux_at(&self, flux_idx: usize) -> FluxVector {
        FluxVector::from_raw(
            self.flux_levels(flux_idx)
                .iter()
                .map(|&l| l as f64 * self.h_w)
                .collect(),
        )
    }

    pub fn point(&self, node: usize) -> Point {
        let (s, f) = self.split(node);
        Point::new(self.measure_at(s), self.flux_at(f))
    }

    /// Piecewise-(multi)linear interpolation of nodal `values` at an
    /// arbitrary point: exact simplex interpolation for `q <= 3` tensored
    /// with multilinear interpolation over the flux box. Coordinates are
    /// clamped into the grid ranges.
    pub fn interpolate(&self, values: &[f64], mu: &[f64], w: &[f64]) -> Result<f64> {
        debug_assert_eq!(values.len(), self.node_count());
        let simplex_weights = self.simplex_weights(mu)?;
        let n_edges = self.space.n_edges();
        // Per-edge (lower level, fraction) of the flux coordinate.
        let mut lower = vec![0usize; n_edges];
        let mut frac = vec![0.0f64; n_edges];
        for e in 0..n_edges {
            let pos = (w[e] / self.h_w).clamp(0.0, (self.w_levels - 1) as f64);
            let l = (pos.floor() as usize).min(self.w_levels - 2);
            lower[e] = l;
            frac[e] = (pos - l as f64).clamp(0.0, 1.0);
        }
        let mut total = 0.0;
        let corners = 1usize << n_edges;
        let mut levels = vec![0usize; n_edges];
        for corner in 0..corners {
            let mut wgt = 1.0;
            for e in 0..n_edges {
                if corner & (1 << e) != 0 {
                    levels[e] = (lower[e] + 1).min(self.w_levels - 1);
                    wgt *= frac[e];
                } else {
                    levels[e] = lower[e];
                    wgt *= 1.0 - frac[e];
                }
            }
            if wgt == 0.0 {
                continue;
            }
            let f_idx = self.flux_index(&levels);
            for &(s_idx, s_wgt) in &simplex_weights {
                total += wgt * s_wgt * values[self.node_of(s_idx, f_idx)];
            }
        }
        Ok(total)
    }

    /// Barycentric interpolation weights over simplex nodes for `q <= 3`.
    fn simplex_weights(&self, mu: &[f64]) -> Result<Vec<(usize, f64)>> {
        let q = self.space.q();
        let m = self.m as f64;
        match q {
            2 => {
                let pos = (mu[0] * m).clamp(0.0, m);
                let k = (pos.floor() as u32).min(self.m as u32 - 1);
                let theta = (pos - k as f64).clamp(0.0, 1.0);
                let lo = self
                    .simplex_index(&[k, self.m as u32 - k])
                    .expect("q=2 simplex node");
                let hi = self
                    .simplex_index(&[k + 1, self.m as u32 - k - 1])
                    .expect("q=2 simplex node");
                Ok(vec![(lo, 1.0 - theta), (hi, theta)])
            }
            3 => {
                let lam: Vec<f64> = (0..3).map(|a| (mu[a] * m).max(0.0)).collect();
                let mut base: Vec<u32> = lam
                    .iter()
                    .map(|&x| (x.floor() as u32).min(self.m as u32))
                    .collect();
                let mut rem: Vec<f64> = (0..3).map(|a| lam[a] - base[a] as f64).collect();
                let deficit = self.m as i64 - base.iter().map(|&k| k as i64).sum::<i64>();
                let r = deficit.clamp(0, 2);
                // Float dust can leave base summing above m; push it back.
                let mut overshoot = -deficit;
                while overshoot > 0 {
                    let a = (0..3)
                        .filter(|&a| base[a] > 0)
                        .min_by(|&a, &b| rem[a].partial_cmp(&rem[b]).unwrap())
                        .unwrap();
                    base[a] -= 1;
                    rem[a] += 1.0;
                    overshoot -= 1;
                }
                let mut pairs: Vec<(Vec<u32>, f64)> = Vec::with_capacity(3);
                match r {
                    0 => pairs.push((base.clone(), 1.0)),
                    1 => {
                        for a in 0..3 {
                            let mut node = base.clone();
                            node[a] += 1;
                            pairs.push((node, rem[a].clamp(0.0, 1.0)));
                        }
                    }
                    _ => {
                        for a in 0..3 {
                            let mut node = base.clone();
                            for b in 0..3 {
                                if b != a {
                                    node[b] += 1;
                                }
                            }
                            pairs.push((node, (1.0 - rem[a]).clamp(0.0, 1.0)));
                        }
                    }
                }
                let mut found: Vec<(usize, f64)> = pairs
                    .into_iter()
                    .filter_map(|(node, wgt)| self.simplex_index(&node).map(|i| (i, wgt)))
                    .collect();
                let total: f64 = found.iter().map(|(_, w)| w).sum();
                if found.is_empty() || total <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "no simplex interpolation stencil at {mu:?}"
                    )));
                }
                for (_, w) in &mut found {
                    *w /= total;
                }
                Ok(found)
            }
            _ => Err(Error::InvalidArgument(format!(
                "simplex interpolation only supports q <= 3, got q = {q}"
            ))),
        }
    }
}

fn enumerate_compositions(
    m: u32,
    coord: usize,
    stack: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
    q: usize,
) {
    if coord == q - 1 {
        stack[coord] = m;
        out.push(stack.clone());
        return;
    }
    for k in 0..=m {
        stack[coord] = k;
        enumerate_compositions(m - k, coord + 1, stack, out, q);
    }
}

/// Real values on the nodes of a grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "grid function values must be finite".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Evaluate a pointwise function on every node.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.node_count()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn sample(&self, mu: &[f64], w: &[f64]) -> Result<f64> {
        self.grid.interpolate(&self.values, mu, w)
    }

    /// Resample onto another grid over the same space by interpolation.
    pub fn resample_to(&self, target: &Arc<Grid>) -> Result<GridFunction> {
        let values: Vec<f64> = (0..target.node_count())
            .map(|i| {
                let p = target.point(i);
                self.sample(p.measure.as_slice(), p.flux.as_slice())
            })
            .collect::<Result<_>>()?;
        GridFunction::new(target.clone(), values)
    }
}
