//! Property tests of the algebraic invariants.

use std::sync::Arc;

use proptest::prelude::*;

use fluxldp_core::kernel::constant_kernel;
use fluxldp_core::rate::{divergence, hamiltonian, lagrangian, rel_entropy, VelocityPair};
use fluxldp_core::sim::{empirical_trajectory, simulate, uniform_grid, MicroRates, ParticleConfig};
use fluxldp_core::space::{FluxVector, Measure, Momentum, Point, StateSpace};
use fluxldp_core::stats::ks_statistic;

proptest! {
    #[test]
    fn rel_entropy_nonnegative_zero_iff_equal(
        z in 0.0f64..100.0,
        v in 0.0f64..100.0,
    ) {
        let s = rel_entropy(z, v);
        prop_assert!(s >= 0.0);
        prop_assert_eq!(rel_entropy(z, z), 0.0);
        if z != v {
            prop_assert!(s > 0.0);
        }
    }

    #[test]
    fn edge_index_is_a_bijection(q in 2usize..8) {
        let space = StateSpace::new(q).unwrap();
        let mut seen = vec![false; q * (q - 1)];
        for a in 0..q {
            for b in 0..q {
                if a == b {
                    continue;
                }
                let idx = space.edge_index(a, b);
                prop_assert!(!seen[idx]);
                seen[idx] = true;
                prop_assert_eq!(space.edge(idx), (a, b));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn simplex_projection_lands_on_the_simplex(
        raw in prop::collection::vec(-2.0f64..4.0, 2..6),
    ) {
        let mu = Measure::project(raw);
        prop_assert!(mu.as_slice().iter().all(|&m| m >= 0.0));
        let total: f64 = mu.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fenchel_young_inequality(
        masses in prop::collection::vec(0.05f64..1.0, 3),
        scales in prop::collection::vec(0.2f64..3.0, 6),
        p_state in prop::collection::vec(-2.0f64..2.0, 3),
        p_flux in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        let space = Arc::new(StateSpace::new(3).unwrap());
        let kernel = constant_kernel(space.clone(), vec![1.0; 6]).unwrap();
        let total: f64 = masses.iter().sum();
        let mu = Measure::new(masses.iter().map(|m| m / total).collect()).unwrap();
        let w_dot: Vec<f64> = (0..6).map(|e| kernel.rate(e, &mu) * scales[e]).collect();
        let vel = VelocityPair::new(divergence(&space, &w_dot), w_dot);
        let x = Point::new(mu, FluxVector::zero(6));
        let p = Momentum::new(p_state, p_flux).unwrap();
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
        prop_assert!(pairing <= lagrangian(&x, &vel, &kernel) + hamiltonian(&x, &p, &kernel) + 1e-9);
    }

    #[test]
    fn hamiltonian_depends_on_state_momenta_through_differences(
        p_state in prop::collection::vec(-3.0f64..3.0, 2),
        p_flux in prop::collection::vec(-3.0f64..3.0, 2),
        shift in -10.0f64..10.0,
    ) {
        let space = Arc::new(StateSpace::new(2).unwrap());
        let kernel = constant_kernel(space, vec![1.0, 2.0]).unwrap();
        let x = Point::new(Measure::new(vec![0.4, 0.6]).unwrap(), FluxVector::zero(2));
        let p = Momentum::new(p_state.clone(), p_flux.clone()).unwrap();
        let shifted = Momentum::new(
            p_state.iter().map(|v| v + shift).collect(),
            p_flux,
        )
        .unwrap();
        let h1 = hamiltonian(&x, &p, &kernel);
        let h2 = hamiltonian(&x, &shifted, &kernel);
        prop_assert!((h1 - h2).abs() <= 1e-10 * (1.0 + h1.abs()));
    }

    #[test]
    fn empirical_trajectories_satisfy_the_divergence_identity(
        seed in 0u64..1000,
        n in 5usize..60,
    ) {
        let space = Arc::new(StateSpace::new(3).unwrap());
        let kernel = constant_kernel(space.clone(), vec![1.0; 6]).unwrap();
        let mr = MicroRates::from_kernel(&kernel, n, 8.0).unwrap();
        let init = ParticleConfig::from_measure(&space, n, &Measure::uniform(3));
        let ps = simulate(&mr, &space, &init, 1.0, seed).unwrap();
        let traj = empirical_trajectory(&ps, &uniform_grid(1.0, 9)).unwrap();
        prop_assert!(traj.divergence_residual(&space) <= 1e-13);
        // Flux monotonicity along the same path.
        for k in 1..traj.len() {
            for e in 0..6 {
                prop_assert!(traj.fluxes[k].get(e) >= traj.fluxes[k - 1].get(e));
            }
        }
    }

    #[test]
    fn ks_statistic_is_a_pseudometric_value(
        xs in prop::collection::vec(-5.0f64..5.0, 1..80),
        ys in prop::collection::vec(-5.0f64..5.0, 1..80),
    ) {
        let d = ks_statistic(&xs, &ys);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(ks_statistic(&xs, &xs), 0.0);
        let sym = ks_statistic(&ys, &xs);
        prop_assert!((d - sym).abs() < 1e-15);
    }
}
