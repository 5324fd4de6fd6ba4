//! The large-deviation calculus for measure/flux trajectories.
//!
//! The Lagrangian is a sum over directed edges of relative entropies
//! `S(w_dot | v)` subject to the divergence constraint linking the measure
//! and flux velocities; the Hamiltonian is its Legendre transform
//! `sum_e v_e [exp{p_b - p_a + p_e} - 1]`. [`legendre_dual`] evaluates the
//! transform by an independent numerical maximization and is used to
//! cross-check the closed forms, [`action_integral`] integrates the
//! Lagrangian along a piecewise-linear trajectory, and [`contracted_rate`]
//! minimizes the action over fluxes compatible with a measure-only path.

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::sim::{MeasurePath, Trajectory};
use crate::space::{Measure, Momentum, Point, StateSpace};

/// Absolute tolerance on the divergence identity for velocity pairs.
pub const DIVERGENCE_TOL: f64 = 1e-10;

/// Exponent beyond which `exp` is treated as overflowed.
pub const EXP_OVERFLOW: f64 = 700.0;

/// Threshold beyond which the numerical Legendre sup is reported as infinite.
pub const UNBOUNDED_THRESHOLD: f64 = 1e6;

/// Relative entropy of observed rate `z` against intensity `v`:
///
/// `S(z | v) = v` if `z = 0`, `z log(z/v) - z + v` if both positive, and
/// infinity if `z > 0, v = 0`. Nonnegative, zero exactly when `z = v`
/// (with `S(0 | 0) = 0` as the limit value, which keeps the Lagrangian
/// finite on frozen edges).
///
/// Panics on negative input.
pub fn rel_entropy(z: f64, v: f64) -> f64 {
    assert!(z >= 0.0 && v >= 0.0, "rel_entropy needs z, v >= 0, got ({z}, {v})");
    if z == 0.0 {
        v
    } else if v == 0.0 {
        f64::INFINITY
    } else {
        z * (z / v).ln() - z + v
    }
}

/// Net flux divergence per state: `div_a = sum_b w_dot(b,a) - w_dot(a,b)`.
pub fn divergence(space: &StateSpace, w_dot: &[f64]) -> Vec<f64> {
    let q = space.q();
    let mut div = vec![0.0; q];
    for (e, &(a, b)) in space.edges().iter().enumerate() {
        div[a] -= w_dot[e];
        div[b] += w_dot[e];
    }
    div
}

/// A candidate velocity of the pair process.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPair {
    pub mu_dot: Vec<f64>,
    pub w_dot: Vec<f64>,
}

impl VelocityPair {
    pub fn new(mu_dot: Vec<f64>, w_dot: Vec<f64>) -> Self {
        Self { mu_dot, w_dot }
    }

    /// Max deviation from the divergence identity.
    pub fn divergence_residual(&self, space: &StateSpace) -> f64 {
        divergence(space, &self.w_dot)
            .iter()
            .zip(&self.mu_dot)
            .map(|(d, m)| (d - m).abs())
            .fold(0.0, f64::max)
    }

    /// Entrywise nonnegative flux velocity, zero-sum measure velocity and
    /// divergence identity within [`DIVERGENCE_TOL`].
    pub fn is_feasible(&self, space: &StateSpace) -> bool {
        self.w_dot.iter().all(|&w| w >= 0.0)
            && self.mu_dot.iter().sum::<f64>().abs() <= space.q() as f64 * DIVERGENCE_TOL
            && self.divergence_residual(space) <= DIVERGENCE_TOL
    }
}

/// The Hamiltonian `sum_e v(a, b, mu) [exp{p_b - p_a + p_e} - 1]`.
///
/// Depends on the measure only (never on the flux coordinate) and on the
/// state momenta only through differences. Exponents above
/// [`EXP_OVERFLOW`] yield the infinite sentinel.
pub fn hamiltonian(x: &Point, p: &Momentum, kernel: &Kernel) -> f64 {
    let space = kernel.space();
    debug_assert_eq!(p.p_state.len(), space.q());
    debug_assert_eq!(p.p_flux.len(), space.n_edges());
    let mut total = 0.0;
    for (e, &(a, b)) in space.edges().iter().enumerate() {
        let v = kernel.rate(e, &x.measure);
        if v == 0.0 {
            continue;
        }
        let exponent = p.p_state[b] - p.p_state[a] + p.p_flux[e];
        if exponent > EXP_OVERFLOW {
            return f64::INFINITY;
        }
        total += v * (exponent.exp() - 1.0);
    }
    total
}

/// The Lagrangian `sum_e S(w_dot_e | v_e(mu))` when the velocity satisfies
/// the divergence identity and has nonnegative flux components; infinite
/// otherwise.
pub fn lagrangian(x: &Point, vel: &VelocityPair, kernel: &Kernel) -> f64 {
    let space = kernel.space();
    if vel.w_dot.iter().any(|&w| w < 0.0) {
        return f64::INFINITY;
    }
    if vel.divergence_residual(space) > DIVERGENCE_TOL {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for e in 0..space.n_edges() {
        let s = rel_entropy(vel.w_dot[e], kernel.rate(e, &x.measure));
        if s.is_infinite() {
            return f64::INFINITY;
        }
        total += s;
    }
    total
}

/// Numerical Legendre transform `sup_p { <p, (mu_dot, w_dot)> - H(x, p) }`.
///
/// The supremum splits into a per-edge maximization over the reduced
/// variables `r_e = p_e - p_a + p_b` (grid search on `[-radius, radius]`
/// with step `step`, then golden-section refinement) plus a linear term in
/// the divergence defect, maximized on the momentum box of the same
/// radius. A value above [`UNBOUNDED_THRESHOLD`] is reported as infinite:
/// for an infeasible velocity the sup grows without bound in the radius.
///
/// This is the independent cross-check of [`lagrangian`]; the closed form
/// is never consulted here.
pub fn legendre_dual(
    x: &Point,
    vel: &VelocityPair,
    kernel: &Kernel,
    radius: f64,
    step: f64,
) -> f64 {
    let space = kernel.space();
    let defect: f64 = divergence(space, &vel.w_dot)
        .iter()
        .zip(&vel.mu_dot)
        .map(|(d, m)| (m - d).abs())
        .sum();
    let mut total = radius * defect;

    for e in 0..space.n_edges() {
        let v = kernel.rate(e, &x.measure);
        let w = vel.w_dot[e];
        let objective = |r: f64| {
            if r > EXP_OVERFLOW {
                if v == 0.0 {
                    w * r
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                w * r - v * (r.exp() - 1.0)
            }
        };
        let mut best_r = -radius;
        let mut best = objective(-radius);
        let mut r = -radius + step;
        while r <= radius {
            let val = objective(r);
            if val > best {
                best = val;
                best_r = r;
            }
            r += step;
        }
        let refined = golden_section_max(
            objective,
            (best_r - step).max(-radius),
            (best_r + step).min(radius),
        );
        total += refined.max(best);
    }

    if total > UNBOUNDED_THRESHOLD {
        f64::INFINITY
    } else {
        total
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Action of a piecewise-linear trajectory: per segment, midpoint state
/// and constant segment velocity, summed as `dt * L(midpoint, velocity)`.
/// Infinite as soon as one segment is infeasible (in particular whenever
/// the flux component decreases).
pub fn action_integral(traj: &Trajectory, kernel: &Kernel) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(
            "action needs at least two trajectory nodes".into(),
        ));
    }
    let space = kernel.space();
    let q = space.q();
    let n_edges = space.n_edges();
    let mut total = 0.0;
    for k in 1..traj.len() {
        let dt = traj.times[k] - traj.times[k - 1];
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("trajectory times must increase".into()));
        }
        let mu_mid = Measure::from_raw(
            (0..q)
                .map(|a| 0.5 * (traj.measures[k - 1].mass(a) + traj.measures[k].mass(a)))
                .collect(),
        );
        let w_mid = crate::space::FluxVector::from_raw(
            (0..n_edges)
                .map(|e| 0.5 * (traj.fluxes[k - 1].get(e) + traj.fluxes[k].get(e)))
                .collect(),
        );
        let vel = VelocityPair::new(
            (0..q)
                .map(|a| (traj.measures[k].mass(a) - traj.measures[k - 1].mass(a)) / dt)
                .collect(),
            (0..n_edges)
                .map(|e| (traj.fluxes[k].get(e) - traj.fluxes[k - 1].get(e)) / dt)
                .collect(),
        );
        let cost = lagrangian(&Point::new(mu_mid, w_mid), &vel, kernel);
        if cost.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += dt * cost;
    }
    Ok(total)
}

/// Outcome of the per-segment flux minimization.
#[derive(Debug, Clone)]
pub struct MinFluxSolution {
    /// Optimal value of `sum_e S(w_dot_e | v_e)`; infinite when the
    /// divergence constraint is infeasible.
    pub cost: f64,
    /// Minimizing flux velocity, when feasible.
    pub w_dot: Option<Vec<f64>>,
    pub iterations: usize,
}

/// Minimize `sum_e S(w_dot_e | v_e(mu))` over `w_dot >= 0` subject to
/// `div(w_dot) = mu_dot`, by ascent on the concave smooth dual
///
/// `g(lam) = <lam, mu_dot> - sum_e v_e (exp{lam_b - lam_a} - 1)`,
///
/// whose stationary point recovers the tilted fluxes
/// `w_dot_e = v_e exp{lam_b - lam_a}`. Gradient ascent with a
/// Barzilai-Borwein trial step and Armijo backtracking, gradient
/// tolerance `1e-9`. An unbounded dual (value above 1e8) certifies primal
/// infeasibility and yields an infinite cost.
pub fn min_flux_rate(mu: &Measure, mu_dot: &[f64], kernel: &Kernel) -> MinFluxSolution {
    let space = kernel.space();
    let q = space.q();
    let grad_tol = 1e-9;
    let unbounded = 1e8;
    let max_iters = 200_000;

    if mu_dot.iter().sum::<f64>().abs() > q as f64 * DIVERGENCE_TOL {
        return MinFluxSolution {
            cost: f64::INFINITY,
            w_dot: None,
            iterations: 0,
        };
    }

    let rates: Vec<f64> = (0..space.n_edges()).map(|e| kernel.rate(e, mu)).collect();

    let tilted = |lam: &[f64]| -> Option<Vec<f64>> {
        let mut w = vec![0.0; rates.len()];
        for (e, &(a, b)) in space.edges().iter().enumerate() {
            if rates[e] == 0.0 {
                continue;
            }
            let exponent = lam[b] - lam[a];
            if exponent > EXP_OVERFLOW {
                return None;
            }
            w[e] = rates[e] * exponent.exp();
        }
        Some(w)
    };
    let dual_value = |lam: &[f64]| -> f64 {
        match tilted(lam) {
            None => f64::NEG_INFINITY,
            Some(w) => {
                let linear: f64 = lam.iter().zip(mu_dot).map(|(l, m)| l * m).sum();
                let tilt_mass: f64 = w
                    .iter()
                    .zip(&rates)
                    .map(|(wi, vi)| wi - vi)
                    .sum();
                linear - tilt_mass
            }
        }
    };

    let mut lam = vec![0.0f64; q];
    let mut g = dual_value(&lam);
    let mut prev_lam: Option<Vec<f64>> = None;
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut step = 1.0f64;

    for iter in 0..max_iters {
        let w = tilted(&lam).expect("accepted multiplier must be finite");
        let div = divergence(space, &w);
        let grad: Vec<f64> = (0..q).map(|a| mu_dot[a] - div[a]).collect();
        let grad_norm = grad.iter().fold(0.0f64, |m, &gi| m.max(gi.abs()));
        if grad_norm <= grad_tol {
            let cost: f64 = w
                .iter()
                .zip(&rates)
                .map(|(&wi, &vi)| rel_entropy(wi, vi))
                .sum();
            return MinFluxSolution {
                cost,
                w_dot: Some(w),
                iterations: iter,
            };
        }
        if g > unbounded {
            return MinFluxSolution {
                cost: f64::INFINITY,
                w_dot: None,
                iterations: iter,
            };
        }

        // Barzilai-Borwein trial step from the previous iterate.
        if let (Some(pl), Some(pg)) = (&prev_lam, &prev_grad) {
            let mut sy = 0.0;
            let mut ss = 0.0;
            for a in 0..q {
                let s = lam[a] - pl[a];
                let y = grad[a] - pg[a];
                sy += s * y;
                ss += s * s;
            }
            if sy < 0.0 && ss > 0.0 {
                step = (-ss / sy).clamp(1e-12, 1e6);
            }
        }

        let grad_sq: f64 = grad.iter().map(|gi| gi * gi).sum();
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = lam.iter().zip(&grad).map(|(l, gi)| l + step * gi).collect();
            let g_trial = dual_value(&trial);
            if g_trial >= g + 1e-4 * step * grad_sq {
                prev_lam = Some(std::mem::replace(&mut lam, trial));
                prev_grad = Some(grad);
                g = g_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No ascent direction at float resolution: report the current
            // dual value (a lower bound on the primal minimum; g(0) = 0 is
            // dual-feasible so g >= 0 here).
            return MinFluxSolution {
                cost: g.max(0.0),
                w_dot: Some(w),
                iterations: iter,
            };
        }
    }

    MinFluxSolution {
        cost: if g > unbounded { f64::INFINITY } else { g.max(0.0) },
        w_dot: tilted(&lam),
        iterations: max_iters,
    }
}

/// Contracted (measure-only) rate: per segment the flux-minimized
/// Lagrangian at the midpoint measure, summed as `dt * cost`.
pub fn contracted_rate(path: &MeasurePath, kernel: &Kernel) -> Result<f64> {
    if path.times.len() < 2 {
        return Err(Error::InvalidArgument(
            "contracted rate needs at least two nodes".into(),
        ));
    }
    let q = path.measures[0].len();
    let mut total = 0.0;
    for k in 1..path.times.len() {
        let dt = path.times[k] - path.times[k - 1];
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        let mu_mid = Measure::from_raw(
            (0..q)
                .map(|a| 0.5 * (path.measures[k - 1].mass(a) + path.measures[k].mass(a)))
                .collect(),
        );
        let mu_dot: Vec<f64> = (0..q)
            .map(|a| (path.measures[k].mass(a) - path.measures[k - 1].mass(a)) / dt)
            .collect();
        let segment = min_flux_rate(&mu_mid, &mu_dot, kernel);
        if segment.cost.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += dt * segment.cost;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{constant_kernel, glauber_kernel, potts_gradient};
    use crate::sim::mean_field_ode;
    use crate::space::{FluxVector, StateSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    fn space(q: usize) -> Arc<StateSpace> {
        Arc::new(StateSpace::new(q).unwrap())
    }

    #[test]
    fn rel_entropy_closed_form_cases() {
        assert_eq!(rel_entropy(0.0, 2.5), 2.5);
        assert_eq!(rel_entropy(1.0, 1.0), 0.0);
        assert!((rel_entropy(2.0, 1.0) - (2.0 * 2.0f64.ln() - 1.0)).abs() < 1e-15);
        assert!(rel_entropy(1.0, 0.0).is_infinite());
        assert_eq!(rel_entropy(0.0, 0.0), 0.0);
    }

    #[test]
    #[should_panic]
    fn rel_entropy_rejects_negative_input() {
        rel_entropy(-1.0, 1.0);
    }

    #[test]
    fn rel_entropy_nonnegative_zero_iff_equal() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100_000 {
            let z = rng.gen::<f64>() * 10.0;
            let v = rng.gen::<f64>() * 10.0;
            let s = rel_entropy(z, v);
            assert!(s >= 0.0);
            if z == v {
                assert_eq!(s, 0.0);
            } else {
                assert!(s > 0.0, "S({z}|{v}) = {s}");
            }
            assert_eq!(rel_entropy(v, v), 0.0);
        }
    }

    fn symmetric_two_state() -> (Arc<StateSpace>, Kernel, Point) {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let x = Point::new(Measure::uniform(2), FluxVector::zero(2));
        (s, k, x)
    }

    #[test]
    fn hamiltonian_hand_value() {
        // v(1,2) = v(2,1) = 1/2 at the uniform measure; p_state = 0,
        // p_flux = (ln 2, 0) gives 0.5 (2 - 1) + 0.5 (1 - 1) = 0.5.
        let (s, k, x) = symmetric_two_state();
        let p = Momentum::new(vec![0.0, 0.0], {
            let mut pf = vec![0.0; 2];
            pf[s.edge_index(0, 1)] = 2.0f64.ln();
            pf
        })
        .unwrap();
        assert!((hamiltonian(&x, &p, &k) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_zero_momentum_and_shift_invariance() {
        let (_, k, x) = symmetric_two_state();
        let zero = Momentum::zero(2, 2);
        assert_eq!(hamiltonian(&x, &zero, &k), 0.0);
        let p = Momentum::new(vec![0.3, -0.4], vec![0.2, -0.1]).unwrap();
        let shifted = Momentum::new(vec![0.3 + 5.0, -0.4 + 5.0], vec![0.2, -0.1]).unwrap();
        let h1 = hamiltonian(&x, &p, &k);
        let h2 = hamiltonian(&x, &shifted, &k);
        assert!((h1 - h2).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_ignores_flux_coordinate() {
        let (_, k, x) = symmetric_two_state();
        let p = Momentum::new(vec![0.5, -0.2], vec![0.7, 0.1]).unwrap();
        let moved = Point::new(x.measure.clone(), FluxVector::new(vec![3.0, 9.0]).unwrap());
        assert_eq!(
            hamiltonian(&x, &p, &k).to_bits(),
            hamiltonian(&moved, &p, &k).to_bits()
        );
    }

    #[test]
    fn hamiltonian_overflow_sentinel() {
        let (_, k, x) = symmetric_two_state();
        let p = Momentum::new(vec![0.0, 0.0], vec![800.0, 0.0]).unwrap();
        assert!(hamiltonian(&x, &p, &k).is_infinite());
    }

    #[test]
    fn hamiltonian_is_convex_in_momentum() {
        let s = space(3);
        let k = glauber_kernel(s.clone(), vec![1.0; 6], potts_gradient(0.5)).unwrap();
        let x = Point::new(
            Measure::new(vec![0.2, 0.3, 0.5]).unwrap(),
            FluxVector::zero(6),
        );
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p1 = Momentum::new(
                (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let p2 = Momentum::new(
                (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let lam: f64 = rng.gen();
            let mix = Momentum::new(
                (0..3)
                    .map(|a| lam * p1.p_state[a] + (1.0 - lam) * p2.p_state[a])
                    .collect(),
                (0..6)
                    .map(|e| lam * p1.p_flux[e] + (1.0 - lam) * p2.p_flux[e])
                    .collect(),
            )
            .unwrap();
            let lhs = hamiltonian(&x, &mix, &k);
            let rhs = lam * hamiltonian(&x, &p1, &k) + (1.0 - lam) * hamiltonian(&x, &p2, &k);
            assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn lagrangian_vanishes_on_mean_field_velocity() {
        let (s, k, x) = symmetric_two_state();
        let v: Vec<f64> = (0..2).map(|e| k.rate(e, &x.measure)).collect();
        let mu_dot = divergence(&s, &v);
        let vel = VelocityPair::new(mu_dot, v);
        assert!(vel.is_feasible(&s));
        assert!(lagrangian(&x, &vel, &k).abs() < 1e-15);
    }

    #[test]
    fn lagrangian_infinite_off_the_divergence_constraint() {
        let (s, k, x) = symmetric_two_state();
        // Total measure velocity must vanish.
        let vel = VelocityPair::new(vec![0.5, 0.5], vec![0.5, 0.5]);
        assert!(!vel.is_feasible(&s));
        assert!(lagrangian(&x, &vel, &k).is_infinite());
    }

    #[test]
    fn lagrangian_hand_value_q2() {
        // mu = (1/2, 1/2), v = (1/2, 1/2), w_dot = (1, 0),
        // mu_dot = (-1, 1): S(1 | 1/2) + S(0 | 1/2) = ln 2.
        let (s, k, x) = symmetric_two_state();
        let e01 = s.edge_index(0, 1);
        let mut w_dot = vec![0.0; 2];
        w_dot[e01] = 1.0;
        let vel = VelocityPair::new(vec![-1.0, 1.0], w_dot);
        let expected = std::f64::consts::LN_2;
        assert!((lagrangian(&x, &vel, &k) - expected).abs() < 1e-14);
        // Cross-checked by the numerical Legendre route.
        let dual = legendre_dual(&x, &vel, &k, 20.0, 1e-3);
        assert!((dual - expected).abs() < 1e-6);
    }

    #[test]
    fn legendre_dual_zero_at_mean_field() {
        let (s, k, x) = symmetric_two_state();
        let v: Vec<f64> = (0..2).map(|e| k.rate(e, &x.measure)).collect();
        let vel = VelocityPair::new(divergence(&s, &v), v);
        assert!(legendre_dual(&x, &vel, &k, 20.0, 1e-3).abs() < 1e-8);
    }

    #[test]
    fn legendre_dual_matches_lagrangian_on_random_feasible_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for &q in &[2usize, 3] {
            let s = space(q);
            let k = glauber_kernel(s.clone(), vec![1.0; s.n_edges()], potts_gradient(0.8))
                .unwrap();
            for _ in 0..50 {
                let mu = crate::kernel::sample_dirichlet(q, &mut rng);
                let w_dot: Vec<f64> = (0..s.n_edges())
                    .map(|e| k.rate(e, &mu) * rng.gen_range(0.2..3.0))
                    .collect();
                let vel = VelocityPair::new(divergence(&s, &w_dot), w_dot);
                let x = Point::new(mu, FluxVector::zero(s.n_edges()));
                let closed = lagrangian(&x, &vel, &k);
                let numeric = legendre_dual(&x, &vel, &k, 20.0, 1e-3);
                assert!(
                    (closed - numeric).abs() <= 1e-6,
                    "q={q}: closed {closed} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn legendre_dual_detects_infeasible_velocity() {
        let (s, k, x) = symmetric_two_state();
        let vel = VelocityPair::new(vec![1.0, 1.0], vec![0.1, 0.1]);
        assert!(!vel.is_feasible(&s));
        assert!(legendre_dual(&x, &vel, &k, 1e7, 1.0).is_infinite());
    }

    #[test]
    fn fenchel_young_inequality_with_matched_equality() {
        let s = space(3);
        let k = constant_kernel(s.clone(), vec![1.0; 6]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let mu = crate::kernel::sample_dirichlet(3, &mut rng);
            let rates: Vec<f64> = (0..6).map(|e| k.rate(e, &mu)).collect();
            let w_dot: Vec<f64> = rates.iter().map(|&v| v * rng.gen_range(0.3..2.5)).collect();
            let vel = VelocityPair::new(divergence(&s, &w_dot), w_dot.clone());
            let x = Point::new(mu, FluxVector::zero(6));
            let cost = lagrangian(&x, &vel, &k);

            let p = Momentum::new(
                (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            )
            .unwrap();
            let pairing: f64 = p
                .p_state
                .iter()
                .zip(&vel.mu_dot)
                .map(|(pi, mi)| pi * mi)
                .sum::<f64>()
                + p.p_flux
                    .iter()
                    .zip(&vel.w_dot)
                    .map(|(pi, wi)| pi * wi)
                    .sum::<f64>();
            assert!(pairing <= cost + hamiltonian(&x, &p, &k) + 1e-10);

            // Equality at the matched momentum r_e = log(w_dot / v).
            let matched = Momentum::new(
                vec![0.0; 3],
                w_dot
                    .iter()
                    .zip(&rates)
                    .map(|(&w, &v)| (w / v).ln())
                    .collect(),
            )
            .unwrap();
            let pairing_matched: f64 = matched
                .p_flux
                .iter()
                .zip(&vel.w_dot)
                .map(|(pi, wi)| pi * wi)
                .sum();
            let gap =
                (pairing_matched - cost - hamiltonian(&x, &matched, &k)).abs();
            assert!(gap <= 1e-8, "gap {gap}");
        }
    }

    #[test]
    fn action_of_mean_field_path_is_negligible() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let t_end = 2.0;
        let traj = mean_field_ode(&k, &Measure::new(vec![0.7, 0.3]).unwrap(), t_end, 1e-3)
            .unwrap();
        let action = action_integral(&traj, &k).unwrap();
        assert!(action <= 1e-8 * t_end, "action {action}");
    }

    #[test]
    fn action_of_constant_path_is_total_intensity() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 2.0]).unwrap();
        let mu = Measure::new(vec![0.25, 0.75]).unwrap();
        let total_rate: f64 = (0..2).map(|e| k.rate(e, &mu)).sum();
        let t_end = 3.0;
        let nodes = 7;
        let traj = Trajectory {
            times: (0..nodes).map(|i| t_end * i as f64 / (nodes - 1) as f64).collect(),
            measures: vec![mu.clone(); nodes],
            fluxes: vec![FluxVector::zero(2); nodes],
        };
        let action = action_integral(&traj, &k).unwrap();
        assert!((action - t_end * total_rate).abs() < 1e-12);
    }

    #[test]
    fn action_infinite_for_decreasing_flux() {
        let s = space(2);
        let k = constant_kernel(s, vec![1.0, 1.0]).unwrap();
        let mu = Measure::uniform(2);
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            measures: vec![mu.clone(), mu],
            fluxes: vec![
                FluxVector::new(vec![1.0, 1.0]).unwrap(),
                FluxVector::new(vec![0.5, 1.5]).unwrap(),
            ],
        };
        assert!(action_integral(&traj, &k).unwrap().is_infinite());
    }

    /// Synthetic smooth feasible trajectory used by the refinement test.
    fn synthetic_trajectory(nodes: usize, t_end: f64, s: &StateSpace) -> Trajectory {
        let e01 = s.edge_index(0, 1);
        let e10 = s.edge_index(1, 0);
        let mut times = Vec::with_capacity(nodes);
        let mut measures = Vec::with_capacity(nodes);
        let mut fluxes = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let t = t_end * i as f64 / (nodes - 1) as f64;
            let w01 = 0.3 * t + 0.05 * (1.0 - t.cos());
            let w10 = 0.25 * t;
            let mu0 = 0.7 + w10 - w01;
            times.push(t);
            measures.push(Measure::from_raw(vec![mu0, 1.0 - mu0]));
            let mut w = vec![0.0; 2];
            w[e01] = w01;
            w[e10] = w10;
            fluxes.push(FluxVector::from_raw(w));
        }
        Trajectory {
            times,
            measures,
            fluxes,
        }
    }

    #[test]
    fn action_converges_at_second_order_under_refinement() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let a1 = action_integral(&synthetic_trajectory(26, 1.0, &s), &k).unwrap();
        let a2 = action_integral(&synthetic_trajectory(51, 1.0, &s), &k).unwrap();
        let a3 = action_integral(&synthetic_trajectory(101, 1.0, &s), &k).unwrap();
        let d1 = (a1 - a2).abs();
        let d2 = (a2 - a3).abs();
        let ratio = d1 / d2;
        assert!((2.5..8.0).contains(&ratio), "ratio {ratio} (d1={d1}, d2={d2})");
    }

    #[test]
    fn min_flux_zero_at_mean_field_drift() {
        let s = space(3);
        let k = glauber_kernel(s.clone(), vec![1.0; 6], potts_gradient(0.6)).unwrap();
        let mu = Measure::new(vec![0.3, 0.3, 0.4]).unwrap();
        let v: Vec<f64> = (0..6).map(|e| k.rate(e, &mu)).collect();
        let drift = divergence(&s, &v);
        let sol = min_flux_rate(&mu, &drift, &k);
        assert!(sol.cost.abs() < 1e-12, "cost {}", sol.cost);
        let w = sol.w_dot.unwrap();
        for e in 0..6 {
            assert!((w[e] - v[e]).abs() < 1e-8);
        }
    }

    #[test]
    fn min_flux_matches_primal_grid_search_q2() {
        // q = 2 has a single degree of freedom once the divergence
        // constraint binds: brute-force it as the oracle.
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.5]).unwrap();
        let e01 = s.edge_index(0, 1);
        let e10 = s.edge_index(1, 0);
        let mu = Measure::new(vec![0.4, 0.6]).unwrap();
        let v01 = k.rate(e01, &mu);
        let v10 = k.rate(e10, &mu);
        for &mu_dot_0 in &[-0.3, 0.0, 0.25, 0.6] {
            let sol = min_flux_rate(&mu, &[mu_dot_0, -mu_dot_0], &k);
            // Primal oracle: w01 = s, w10 = s + mu_dot_0 (flux into 0
            // minus flux out of 0 equals mu_dot_0), both nonnegative.
            let lo = (-mu_dot_0).max(0.0);
            let mut best = f64::INFINITY;
            let steps = 400_000;
            for i in 0..=steps {
                let w01 = lo + 6.0 * i as f64 / steps as f64;
                let w10 = w01 + mu_dot_0;
                if w10 < 0.0 {
                    continue;
                }
                best = best.min(rel_entropy(w01, v01) + rel_entropy(w10, v10));
            }
            assert!(
                (sol.cost - best).abs() <= 1e-5,
                "dual {} vs primal {}",
                sol.cost,
                best
            );
        }
    }

    #[test]
    fn min_flux_detects_infeasible_drift() {
        // All intensity out of state 0 vanishes, yet the drift demands
        // mass to leave it.
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![0.0, 1.0]).unwrap();
        let mu = Measure::new(vec![0.5, 0.5]).unwrap();
        let sol = min_flux_rate(&mu, &[-0.5, 0.5], &k);
        assert!(sol.cost.is_infinite());
        // Nonzero total measure velocity is infeasible outright.
        let sol2 = min_flux_rate(&mu, &[0.5, 0.5], &k);
        assert!(sol2.cost.is_infinite());
    }

    #[test]
    fn contracted_rate_zero_along_mean_field_flow() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 2.0]).unwrap();
        let traj = mean_field_ode(&k, &Measure::new(vec![0.8, 0.2]).unwrap(), 1.0, 1e-3)
            .unwrap();
        let j = contracted_rate(&traj.measure_path(), &k).unwrap();
        assert!(j <= 1e-8, "J = {j}");
    }

    #[test]
    fn contracted_rate_lower_bounds_full_action() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let traj = synthetic_trajectory(81, 1.0, &s);
        let full = action_integral(&traj, &k).unwrap();
        let j = contracted_rate(&traj.measure_path(), &k).unwrap();
        assert!(
            j <= full + 1e-9,
            "contracted {j} exceeds full action {full}"
        );
    }
}
