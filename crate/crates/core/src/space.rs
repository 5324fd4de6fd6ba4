//! The state space `E = P({1..q}) x (R+)^Gamma` and its momentum dual.
//!
//! States are indexed `0..q` internally; user-facing formats (CSV headers,
//! reports) print 1-based labels. `Gamma` is the set of the `q(q-1)`
//! directed edges `(a, b)` with `a != b`, in a fixed lexicographic order,
//! so that every per-edge vector in the crate aligns index-by-index.

use crate::error::{Error, Result};

/// Tolerance on the total-mass constraint of a [`Measure`].
pub const MASS_TOL: f64 = 1e-12;

/// The finite state space `{0..q}` together with its directed edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    q: usize,
    gamma: Vec<(usize, usize)>,
}

impl StateSpace {
    /// Build the space on `q >= 2` states with lexicographically ordered edges.
    pub fn new(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidStateSpace(format!("q = {q}, need q >= 2")));
        }
        let mut gamma = Vec::with_capacity(q * (q - 1));
        for a in 0..q {
            for b in 0..q {
                if a != b {
                    gamma.push((a, b));
                }
            }
        }
        Ok(Self { q, gamma })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of directed edges, `q(q-1)`.
    pub fn n_edges(&self) -> usize {
        self.gamma.len()
    }

    /// Edges in the fixed lexicographic order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.gamma
    }

    pub fn edge(&self, idx: usize) -> (usize, usize) {
        self.gamma[idx]
    }

    /// Position of `(a, b)` in the edge order.
    pub fn edge_index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a != b && a < self.q && b < self.q);
        a * (self.q - 1) + if b < a { b } else { b - 1 }
    }
}

/// A probability vector on `{0..q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure(Vec<f64>);

impl Measure {
    /// Validates non-negativity and total mass `1` within [`MASS_TOL`].
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.len() < 2 {
            return Err(Error::InvalidMeasure(format!(
                "length {} < 2",
                mass.len()
            )));
        }
        for (a, &m) in mass.iter().enumerate() {
            if !(m >= 0.0) {
                return Err(Error::InvalidMeasure(format!("mass[{a}] = {m}")));
            }
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} deviates from 1 by more than {MASS_TOL:e}"
            )));
        }
        Ok(Self(mass))
    }

    /// Uniform measure on `q` states.
    pub fn uniform(q: usize) -> Self {
        Self(vec![1.0 / q as f64; q])
    }

    /// Point mass at state `a`.
    pub fn vertex(q: usize, a: usize) -> Self {
        let mut m = vec![0.0; q];
        m[a] = 1.0;
        Self(m)
    }

    /// Construct without validation; callers must uphold the invariants.
    pub(crate) fn from_raw(mass: Vec<f64>) -> Self {
        Self(mass)
    }

    pub fn mass(&self, a: usize) -> f64 {
        self.0[a]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sup-norm distance to another measure.
    pub fn linf_distance(&self, other: &Measure) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Clip negative entries to zero and renormalize to total mass 1.
    ///
    /// Used by ODE integrators whose steps may exit the simplex by a
    /// truncation-order amount.
    pub fn project(mut mass: Vec<f64>) -> Self {
        for m in &mut mass {
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        let total: f64 = mass.iter().sum();
        if total > 0.0 {
            for m in &mut mass {
                *m /= total;
            }
        } else {
            let q = mass.len();
            mass.fill(1.0 / q as f64);
        }
        Self(mass)
    }
}

/// Cumulative rescaled flux over the directed edges, entrywise `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxVector(Vec<f64>);

impl FluxVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        for (e, &x) in w.iter().enumerate() {
            if !(x >= 0.0) {
                return Err(Error::InvalidFlux(format!("w[{e}] = {x}")));
            }
        }
        Ok(Self(w))
    }

    pub fn zero(n_edges: usize) -> Self {
        Self(vec![0.0; n_edges])
    }

    pub(crate) fn from_raw(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn get(&self, e: usize) -> f64 {
        self.0[e]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn linf_distance(&self, other: &FluxVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// A point of the state space `E`: a measure paired with a flux vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub measure: Measure,
    pub flux: FluxVector,
}

impl Point {
    pub fn new(measure: Measure, flux: FluxVector) -> Self {
        Self { measure, flux }
    }
}

/// Momentum dual to `E`: one component per state, one per directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub p_state: Vec<f64>,
    pub p_flux: Vec<f64>,
}

impl Momentum {
    pub fn new(p_state: Vec<f64>, p_flux: Vec<f64>) -> Result<Self> {
        if p_state.iter().chain(p_flux.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "momentum entries must be finite".into(),
            ));
        }
        Ok(Self { p_state, p_flux })
    }

    pub fn zero(q: usize, n_edges: usize) -> Self {
        Self {
            p_state: vec![0.0; q],
            p_flux: vec![0.0; n_edges],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_order_is_lexicographic_and_complete() {
        let s = StateSpace::new(3).unwrap();
        assert_eq!(s.n_edges(), 6);
        assert_eq!(
            s.edges(),
            &[(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        );
        for (idx, &(a, b)) in s.edges().iter().enumerate() {
            assert_eq!(s.edge_index(a, b), idx);
        }
    }

    #[test]
    fn rejects_degenerate_state_space() {
        assert!(StateSpace::new(1).is_err());
        assert!(StateSpace::new(0).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(Measure::new(vec![0.5, 0.5]).is_ok());
        assert!(Measure::new(vec![0.5, 0.6]).is_err());
        assert!(Measure::new(vec![-0.1, 1.1]).is_err());
        assert!(Measure::new(vec![1.0]).is_err());
        // Mass defect within tolerance is accepted.
        assert!(Measure::new(vec![0.5, 0.5 + 0.5e-12]).is_ok());
    }

    #[test]
    fn flux_rejects_negative_entries() {
        assert!(FluxVector::new(vec![0.0, 1.0]).is_ok());
        assert!(FluxVector::new(vec![-1e-9, 1.0]).is_err());
    }

    #[test]
    fn projection_restores_simplex() {
        let m = Measure::project(vec![-0.1, 0.6, 0.6]);
        assert_eq!(m.mass(0), 0.0);
        let total: f64 = m.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_index_bijection_over_q_values() {
        for q in 2..=6 {
            let s = StateSpace::new(q).unwrap();
            let mut seen = vec![false; s.n_edges()];
            for a in 0..q {
                for b in 0..q {
                    if a != b {
                        let idx = s.edge_index(a, b);
                        assert!(!seen[idx]);
                        seen[idx] = true;
                        assert_eq!(s.edge(idx), (a, b));
                    }
                }
            }
            assert!(seen.iter().all(|&v| v));
        }
    }
}
