//! Exact stochastic simulation of the n-particle jump process with
//! per-edge flux counters, and the deterministic mean-field limit.
//!
//! Two sampling modes, both exact:
//!
//! - time-homogeneous rates: the direct (Gillespie) method, with the total
//!   rate recomputed after every jump since per-particle rates depend on
//!   the configuration;
//! - time-dependent rates: thinning against a caller-supplied uniform
//!   rate bound.
//!
//! All randomness is drawn from a counter-based generator; replicas use
//! one independent stream each, derived from `(master seed, replica)`, so
//! ensembles are reproducible under parallel execution.

use std::sync::Arc;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, TimeKernel};
use crate::space::{FluxVector, Measure, StateSpace};

/// View of the current n-particle configuration handed to rate functions.
///
/// Exposes both the raw state vector and the precomputed empirical
/// measure, so weakly interacting rates can be evaluated in O(1).
pub struct Configuration<'a> {
    states: &'a [usize],
    counts: &'a [u64],
    measure: &'a Measure,
}

impl Configuration<'_> {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[usize] {
        self.states
    }

    pub fn count(&self, a: usize) -> u64 {
        self.counts[a]
    }

    /// Empirical measure `mu_n` of the configuration.
    pub fn empirical_measure(&self) -> &Measure {
        self.measure
    }
}

type RateFn = dyn Fn(f64, usize, usize, &Configuration) -> f64 + Send + Sync;

#[derive(Clone, Copy, Debug)]
struct PeriodicSpec {
    /// Time rescaling `gamma_n`; the micro period is `t0 / gamma_n`.
    gamma: f64,
    t0: f64,
}

/// Per-particle jump rates of the n-particle process.
#[derive(Clone)]
pub struct MicroRates {
    n: usize,
    rate: Arc<RateFn>,
    rate_bound: f64,
    homogeneous: bool,
    periodic: Option<PeriodicSpec>,
}

impl MicroRates {
    /// Time-homogeneous rates; `rate_bound` must dominate every rate and is
    /// spot-checked during simulation.
    pub fn homogeneous<F>(n: usize, rate_bound: f64, rate: F) -> Result<Self>
    where
        F: Fn(f64, usize, usize, &Configuration) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || !(rate_bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "n = {n}, rate_bound = {rate_bound}"
            )));
        }
        Ok(Self {
            n,
            rate: Arc::new(rate),
            rate_bound,
            homogeneous: true,
            periodic: None,
        })
    }

    /// Time-dependent rates, periodic with micro period `t0 / gamma`.
    /// Sampled periodicity of the rate function is verified on random
    /// configurations at construction.
    pub fn periodic<F>(
        n: usize,
        rate_bound: f64,
        gamma: f64,
        t0: f64,
        q: usize,
        rate: F,
    ) -> Result<Self>
    where
        F: Fn(f64, usize, usize, &Configuration) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || !(rate_bound > 0.0) || !(gamma > 0.0) || !(t0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "n = {n}, rate_bound = {rate_bound}, gamma = {gamma}, t0 = {t0}"
            )));
        }
        let mr = Self {
            n,
            rate: Arc::new(rate),
            rate_bound,
            homogeneous: false,
            periodic: Some(PeriodicSpec { gamma, t0 }),
        };
        mr.check_periodicity(q)?;
        Ok(mr)
    }

    fn check_periodicity(&self, q: usize) -> Result<()> {
        let spec = self.periodic.expect("periodic spec");
        let micro_period = spec.t0 / spec.gamma;
        let mut rng = ChaCha12Rng::seed_from_u64(0x7261_7465_7065_7273);
        for _ in 0..16 {
            let states: Vec<usize> = (0..self.n).map(|_| rng.gen_range(0..q)).collect();
            let mut counts = vec![0u64; q];
            for &s in &states {
                counts[s] += 1;
            }
            let measure =
                Measure::from_raw(counts.iter().map(|&c| c as f64 / self.n as f64).collect());
            let cfg = Configuration {
                states: &states,
                counts: &counts,
                measure: &measure,
            };
            let t: f64 = rng.sample::<f64, _>(Open01) * 3.0 * micro_period;
            let a = rng.gen_range(0..q);
            let mut b = rng.gen_range(0..q - 1);
            if b >= a {
                b += 1;
            }
            let r1 = (self.rate)(t, a, b, &cfg);
            let r2 = (self.rate)(t + micro_period, a, b, &cfg);
            if (r1 - r2).abs() > 1e-12 * (1.0 + r1.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "rates are not {micro_period}-periodic at t = {t}: |dr| = {:e}",
                    (r1 - r2).abs()
                )));
            }
        }
        Ok(())
    }

    /// Micro rates matching a limiting kernel:
    /// `r_n(a, b, Y) = v(a, b, mu_n[Y]) / max(mu_n[Y](a), 1/n)`,
    /// so that `mu_n(a) r_n` equals `v` whenever state `a` is occupied.
    pub fn from_kernel(kernel: &Kernel, n: usize, rate_bound: f64) -> Result<Self> {
        let k = kernel.clone();
        let space = kernel.space().clone();
        Self::homogeneous(n, rate_bound, move |_t, a, b, cfg: &Configuration| {
            let mu = cfg.empirical_measure();
            let floor = 1.0 / cfg.n() as f64;
            k.rate(space.edge_index(a, b), mu) / mu.mass(a).max(floor)
        })
    }

    /// Micro rates for a fast periodic kernel:
    /// `r_n(t, a, b, Y) = v0(gamma t, a, b, mu_n) / max(mu_n(a), 1/n)`.
    pub fn from_time_kernel(
        tk: &TimeKernel,
        n: usize,
        gamma: f64,
        rate_bound: f64,
    ) -> Result<Self> {
        let k = tk.clone();
        let space = tk.space().clone();
        let q = space.q();
        let t0 = tk.period();
        Self::periodic(
            n,
            rate_bound,
            gamma,
            t0,
            q,
            move |t, a, b, cfg: &Configuration| {
                let mu = cfg.empirical_measure();
                let floor = 1.0 / cfg.n() as f64;
                k.rate(gamma * t, space.edge_index(a, b), mu) / mu.mass(a).max(floor)
            },
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    /// `gamma_n` when in periodic mode.
    pub fn gamma(&self) -> Option<f64> {
        self.periodic.map(|p| p.gamma)
    }

    /// Micro period `t0 / gamma_n` when in periodic mode.
    pub fn micro_period(&self) -> Option<f64> {
        self.periodic.map(|p| p.t0 / p.gamma)
    }

    /// Evaluate `r_n(t, a, b, Y)` for an explicit configuration.
    pub fn rate_for(&self, t: f64, a: usize, b: usize, states: &[usize], q: usize) -> f64 {
        let mut counts = vec![0u64; q];
        for &s in states {
            counts[s] += 1;
        }
        let measure =
            Measure::from_raw(counts.iter().map(|&c| c as f64 / states.len() as f64).collect());
        self.rate_for_counts(t, a, b, states, &counts, &measure)
    }

    /// As [`Self::rate_for`], with the per-state counts and the empirical
    /// measure already tallied by the caller.
    pub fn rate_for_counts(
        &self,
        t: f64,
        a: usize,
        b: usize,
        states: &[usize],
        counts: &[u64],
        measure: &Measure,
    ) -> f64 {
        let cfg = Configuration {
            states,
            counts,
            measure,
        };
        (self.rate)(t, a, b, &cfg)
    }
}

/// States of the n particles plus the aggregate per-edge jump counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticleConfig {
    pub states: Vec<usize>,
    pub flux_counts: Vec<u64>,
}

impl ParticleConfig {
    /// All particles placed by largest-remainder rounding of `n * mu`.
    pub fn from_measure(space: &StateSpace, n: usize, mu: &Measure) -> Self {
        let q = space.q();
        let mut counts: Vec<usize> = (0..q).map(|a| (n as f64 * mu.mass(a)) as usize).collect();
        let mut placed: usize = counts.iter().sum();
        let mut remainders: Vec<(f64, usize)> = (0..q)
            .map(|a| (n as f64 * mu.mass(a) - counts[a] as f64, a))
            .collect();
        remainders.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let mut i = 0;
        while placed < n {
            counts[remainders[i % q].1] += 1;
            placed += 1;
            i += 1;
        }
        let mut states = Vec::with_capacity(n);
        for (a, &c) in counts.iter().enumerate() {
            states.extend(std::iter::repeat(a).take(c));
        }
        Self {
            states,
            flux_counts: vec![0; space.n_edges()],
        }
    }

    pub fn counts(&self, q: usize) -> Vec<u64> {
        let mut counts = vec![0u64; q];
        for &s in &self.states {
            counts[s] += 1;
        }
        counts
    }

    pub fn empirical_measure(&self, q: usize) -> Measure {
        let n = self.states.len() as f64;
        Measure::from_raw(self.counts(q).iter().map(|&c| c as f64 / n).collect())
    }

    /// Residual of the conservation identity against an initial
    /// configuration: for each state, (current count - initial count)
    /// minus (inflow - outflow) read off the flux counters. Zero for any
    /// configuration reachable from `initial` by jumps.
    pub fn conservation_residual(&self, initial: &ParticleConfig, space: &StateSpace) -> i64 {
        let q = space.q();
        let now = self.counts(q);
        let then = initial.counts(q);
        let mut worst: i64 = 0;
        for a in 0..q {
            let mut net: i64 = 0;
            for b in 0..q {
                if a == b {
                    continue;
                }
                let inflow = self.flux_counts[space.edge_index(b, a)]
                    - initial.flux_counts[space.edge_index(b, a)];
                let outflow = self.flux_counts[space.edge_index(a, b)]
                    - initial.flux_counts[space.edge_index(a, b)];
                net += inflow as i64 - outflow as i64;
            }
            let residual = (now[a] as i64 - then[a] as i64) - net;
            worst = worst.max(residual.abs());
        }
        worst
    }
}

/// One jump event of the n-particle process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub particle: u32,
    pub edge: u32,
}

/// One realization of the n-particle process on `[0, t_end]`.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub space: Arc<StateSpace>,
    pub n: usize,
    pub initial: ParticleConfig,
    pub events: Vec<Event>,
    pub t_end: f64,
}

impl PathSample {
    /// Configuration after replaying the full event log.
    pub fn final_config(&self) -> ParticleConfig {
        let mut cfg = self.initial.clone();
        for ev in &self.events {
            let (_, b) = self.space.edge(ev.edge as usize);
            cfg.states[ev.particle as usize] = b;
            cfg.flux_counts[ev.edge as usize] += 1;
        }
        cfg
    }
}

/// Counter-based generator for replica `stream` of ensemble `master_seed`.
pub fn replica_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Simulate one path with the stream-0 generator of `seed`.
pub fn simulate(
    mr: &MicroRates,
    space: &Arc<StateSpace>,
    init: &ParticleConfig,
    t_end: f64,
    seed: u64,
) -> Result<PathSample> {
    simulate_stream(mr, space, init, t_end, seed, 0)
}

/// Simulate one path with the replica-`stream` generator of `master_seed`.
/// Identical inputs produce a bitwise-identical path.
pub fn simulate_stream(
    mr: &MicroRates,
    space: &Arc<StateSpace>,
    init: &ParticleConfig,
    t_end: f64,
    master_seed: u64,
    stream: u64,
) -> Result<PathSample> {
    let q = space.q();
    let n = mr.n();
    if init.states.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial configuration has {} particles, rates expect {n}",
            init.states.len()
        )));
    }
    if init.flux_counts.len() != space.n_edges() {
        return Err(Error::InvalidArgument(
            "initial flux counters do not match the edge set".into(),
        ));
    }
    if init.states.iter().any(|&s| s >= q) {
        return Err(Error::InvalidArgument("initial state out of range".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end}")));
    }

    let mut rng = replica_rng(master_seed, stream);

    let mut states = init.states.clone();
    let mut counts = vec![0u64; q];
    for &s in &states {
        counts[s] += 1;
    }
    let mut measure =
        Measure::from_raw(counts.iter().map(|&c| c as f64 / n as f64).collect());
    // Particle lists per state, for O(1) uniform selection within a state.
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); q];
    let mut position: Vec<u32> = vec![0; n];
    for (i, &s) in states.iter().enumerate() {
        position[i] = members[s].len() as u32;
        members[s].push(i as u32);
    }
    let mut flux_counts = init.flux_counts.clone();
    let mut events: Vec<Event> = Vec::new();

    let mut t = 0.0f64;
    let bound = mr.rate_bound();

    let mut apply = |i: usize,
                     a: usize,
                     b: usize,
                     time: f64,
                     states: &mut Vec<usize>,
                     counts: &mut Vec<u64>,
                     measure: &mut Measure,
                     members: &mut Vec<Vec<u32>>,
                     position: &mut Vec<u32>| {
        let pos = position[i] as usize;
        let last = *members[a].last().unwrap();
        members[a][pos] = last;
        position[last as usize] = pos as u32;
        members[a].pop();
        position[i] = members[b].len() as u32;
        members[b].push(i as u32);
        states[i] = b;
        counts[a] -= 1;
        counts[b] += 1;
        let mut mass = measure.as_slice().to_vec();
        mass[a] = counts[a] as f64 / n as f64;
        mass[b] = counts[b] as f64 / n as f64;
        *measure = Measure::from_raw(mass);
        let edge = (a * (q - 1) + if b < a { b } else { b - 1 }) as u32;
        flux_counts[edge as usize] += 1;
        events.push(Event {
            time,
            particle: i as u32,
            edge,
        });
    };

    if mr.is_homogeneous() {
        // Direct method: particles in the same state share a rate, so the
        // event distribution reduces to q(q-1) aggregated channels.
        let mut weights = vec![0.0f64; q * q];
        loop {
            let cfg = Configuration {
                states: &states,
                counts: &counts,
                measure: &measure,
            };
            let mut total = 0.0f64;
            for a in 0..q {
                if counts[a] == 0 {
                    for b in 0..q {
                        weights[a * q + b] = 0.0;
                    }
                    continue;
                }
                for b in 0..q {
                    if a == b {
                        weights[a * q + b] = 0.0;
                        continue;
                    }
                    let r = (mr.rate)(t, a, b, &cfg);
                    if r > bound * (1.0 + 1e-12) {
                        return Err(Error::RateBoundExceeded {
                            time: t,
                            particle: members[a][0] as usize,
                            from: a,
                            to: b,
                            rate: r,
                            bound,
                        });
                    }
                    let w = counts[a] as f64 * r;
                    weights[a * q + b] = w;
                    total += w;
                }
            }
            if total <= 0.0 {
                break; // No jump is possible any more; the path is valid.
            }
            let u: f64 = rng.sample(Open01);
            let mut next_t = t - u.ln() / total;
            if next_t <= t {
                next_t = f64::next_up(t);
            }
            if next_t > t_end {
                break;
            }
            t = next_t;
            // Channel selection proportional to the aggregated weights.
            let mut target = rng.sample::<f64, _>(Open01) * total;
            let mut chosen = None;
            for a in 0..q {
                for b in 0..q {
                    let w = weights[a * q + b];
                    if w <= 0.0 {
                        continue;
                    }
                    if target < w {
                        chosen = Some((a, b));
                        break;
                    }
                    target -= w;
                }
                if chosen.is_some() {
                    break;
                }
            }
            let (a, b) = chosen.unwrap_or_else(|| {
                // Float-roundoff fallthrough: take the last active channel.
                let mut last = (0, 0);
                for a in 0..q {
                    for b in 0..q {
                        if weights[a * q + b] > 0.0 {
                            last = (a, b);
                        }
                    }
                }
                last
            });
            let pick = rng.gen_range(0..members[a].len());
            let i = members[a][pick] as usize;
            apply(
                i,
                a,
                b,
                t,
                &mut states,
                &mut counts,
                &mut measure,
                &mut members,
                &mut position,
            );
        }
    } else {
        // Thinning: propose at the uniform bound over all (particle,
        // target) pairs, accept with probability rate / bound.
        let proposal_rate = bound * n as f64 * (q - 1) as f64;
        loop {
            let u: f64 = rng.sample(Open01);
            let mut next_t = t - u.ln() / proposal_rate;
            if next_t <= t {
                next_t = f64::next_up(t);
            }
            if next_t > t_end {
                break;
            }
            t = next_t;
            let i = rng.gen_range(0..n);
            let a = states[i];
            let mut b = rng.gen_range(0..q - 1);
            if b >= a {
                b += 1;
            }
            let cfg = Configuration {
                states: &states,
                counts: &counts,
                measure: &measure,
            };
            let r = (mr.rate)(t, a, b, &cfg);
            if r > bound * (1.0 + 1e-12) {
                return Err(Error::RateBoundExceeded {
                    time: t,
                    particle: i,
                    from: a,
                    to: b,
                    rate: r,
                    bound,
                });
            }
            let accept: f64 = rng.sample(Open01);
            if accept < r / bound {
                apply(
                    i,
                    a,
                    b,
                    t,
                    &mut states,
                    &mut counts,
                    &mut measure,
                    &mut members,
                    &mut position,
                );
            }
        }
    }

    Ok(PathSample {
        space: space.clone(),
        n,
        initial: init.clone(),
        events,
        t_end,
    })
}

/// The empirical pair trajectory `Z_n = (mu_n, W_n / n)` on a time grid,
/// with right-continuous evaluation at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub measures: Vec<Measure>,
    pub fluxes: Vec<FluxVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sup over shared grid nodes of the measure / flux distances.
    pub fn linf_distance(&self, other: &Trajectory) -> (f64, f64) {
        let mut d_mu = 0.0f64;
        let mut d_w = 0.0f64;
        for k in 0..self.len().min(other.len()) {
            d_mu = d_mu.max(self.measures[k].linf_distance(&other.measures[k]));
            d_w = d_w.max(self.fluxes[k].linf_distance(&other.fluxes[k]));
        }
        (d_mu, d_w)
    }

    /// Max violation of the nodal divergence identity
    /// `mu_a(t_k) - mu_a(t_0) = sum_b [w_(b,a) - w_(a,b)](t_k) - (t_0)`.
    pub fn divergence_residual(&self, space: &StateSpace) -> f64 {
        let q = space.q();
        let mut worst = 0.0f64;
        for k in 0..self.len() {
            for a in 0..q {
                let dmu = self.measures[k].mass(a) - self.measures[0].mass(a);
                let mut net = 0.0;
                for b in 0..q {
                    if a == b {
                        continue;
                    }
                    net += self.fluxes[k].get(space.edge_index(b, a))
                        - self.fluxes[0].get(space.edge_index(b, a));
                    net -= self.fluxes[k].get(space.edge_index(a, b))
                        - self.fluxes[0].get(space.edge_index(a, b));
                }
                worst = worst.max((dmu - net).abs());
            }
        }
        worst
    }

    pub fn measure_path(&self) -> MeasurePath {
        MeasurePath {
            times: self.times.clone(),
            measures: self.measures.clone(),
        }
    }
}

/// A measure-only trajectory (flux coordinate forgotten).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePath {
    pub times: Vec<f64>,
    pub measures: Vec<Measure>,
}

/// Sample `Z_n` at the grid nodes (right-continuous: a node at an event
/// time sees the post-jump configuration).
pub fn empirical_trajectory(ps: &PathSample, grid: &[f64]) -> Result<Trajectory> {
    let q = ps.space.q();
    let n = ps.n as f64;
    for pair in grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::InvalidArgument("grid must be increasing".into()));
        }
    }
    if let Some(&last) = grid.last() {
        if last > ps.t_end {
            return Err(Error::BeyondHorizon(last, ps.t_end));
        }
    }
    if grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("grid starts before 0".into()));
    }

    let mut counts = ps.initial.counts(q);
    let mut flux = ps.initial.flux_counts.clone();
    let mut next_event = 0usize;
    let mut times = Vec::with_capacity(grid.len());
    let mut measures = Vec::with_capacity(grid.len());
    let mut fluxes = Vec::with_capacity(grid.len());
    let mut states = ps.initial.states.clone();
    for &t in grid {
        while next_event < ps.events.len() && ps.events[next_event].time <= t {
            let ev = ps.events[next_event];
            let (a, b) = ps.space.edge(ev.edge as usize);
            counts[a] -= 1;
            counts[b] += 1;
            states[ev.particle as usize] = b;
            flux[ev.edge as usize] += 1;
            next_event += 1;
        }
        times.push(t);
        measures.push(Measure::from_raw(
            counts.iter().map(|&c| c as f64 / n).collect(),
        ));
        fluxes.push(FluxVector::from_raw(
            flux.iter().map(|&c| c as f64 / n).collect(),
        ));
    }
    Ok(Trajectory {
        times,
        measures,
        fluxes,
    })
}

/// Uniform grid of `points` nodes on `[0, t_end]`, last node exactly
/// `t_end` (no rounding past the horizon).
pub fn uniform_grid(t_end: f64, points: usize) -> Vec<f64> {
    let k = points.max(2) - 1;
    (0..=k)
        .map(|i| {
            if i == k {
                t_end
            } else {
                t_end * i as f64 / k as f64
            }
        })
        .collect()
}

/// Integrate the mean-field limit
/// `d mu_a / dt = sum_b [v(b, a, mu) - v(a, b, mu)]`, `d w_e / dt = v_e(mu)`
/// with the classical 4th-order one-step method at step `dt`, projecting
/// the measure back onto the simplex after every step. The flux component
/// starts from zero and is nondecreasing because every stage velocity is.
pub fn mean_field_ode(kernel: &Kernel, mu0: &Measure, t_end: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end}, dt = {dt}")));
    }
    let space = kernel.space().clone();
    let q = space.q();
    let n_edges = space.n_edges();
    let steps = (t_end / dt).ceil() as usize;
    let h = t_end / steps as f64;

    let derivative = |mu_raw: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let clipped: Vec<f64> = mu_raw.iter().map(|&m| m.max(0.0)).collect();
        let mu = Measure::from_raw(clipped);
        let mut w_dot = vec![0.0; n_edges];
        let mut mu_dot = vec![0.0; q];
        for e in 0..n_edges {
            let (a, b) = space.edge(e);
            let v = kernel.rate(e, &mu);
            w_dot[e] = v;
            mu_dot[a] -= v;
            mu_dot[b] += v;
        }
        (mu_dot, w_dot)
    };

    let mut mu = mu0.as_slice().to_vec();
    let mut w = vec![0.0f64; n_edges];
    let mut times = Vec::with_capacity(steps + 1);
    let mut measures = Vec::with_capacity(steps + 1);
    let mut fluxes = Vec::with_capacity(steps + 1);
    times.push(0.0);
    measures.push(Measure::project(mu.clone()));
    fluxes.push(FluxVector::from_raw(w.clone()));

    for k in 0..steps {
        let (k1m, k1w) = derivative(&mu);
        let s2: Vec<f64> = mu.iter().zip(&k1m).map(|(x, d)| x + 0.5 * h * d).collect();
        let (k2m, k2w) = derivative(&s2);
        let s3: Vec<f64> = mu.iter().zip(&k2m).map(|(x, d)| x + 0.5 * h * d).collect();
        let (k3m, k3w) = derivative(&s3);
        let s4: Vec<f64> = mu.iter().zip(&k3m).map(|(x, d)| x + h * d).collect();
        let (k4m, k4w) = derivative(&s4);
        for a in 0..q {
            mu[a] += h / 6.0 * (k1m[a] + 2.0 * k2m[a] + 2.0 * k3m[a] + k4m[a]);
        }
        for e in 0..n_edges {
            w[e] += h / 6.0 * (k1w[e] + 2.0 * k2w[e] + 2.0 * k3w[e] + k4w[e]);
        }
        let projected = Measure::project(mu);
        mu = projected.as_slice().to_vec();
        times.push((k + 1) as f64 * h);
        measures.push(projected);
        fluxes.push(FluxVector::from_raw(w.clone()));
    }

    Ok(Trajectory {
        times,
        measures,
        fluxes,
    })
}

/// One row of the law-of-large-numbers gap report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LlnRow {
    pub n: usize,
    pub gap_measure: f64,
    pub gap_flux: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LlnReport {
    pub rows: Vec<LlnRow>,
}

/// Sup-norm gap between empirical trajectories and the mean-field limit,
/// averaged over `replicas` independent streams, for each particle count.
#[allow(clippy::too_many_arguments)]
pub fn lln_gap(
    kernel: &Kernel,
    rate_bound: f64,
    mu0: &Measure,
    t_end: f64,
    n_list: &[usize],
    replicas: usize,
    master_seed: u64,
    grid_points: usize,
    dt: f64,
) -> Result<LlnReport> {
    let space = kernel.space().clone();
    let grid = uniform_grid(t_end, grid_points);
    let ode = mean_field_ode(kernel, mu0, t_end, dt)?;
    let ode_on_grid = resample(&ode, &grid);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mr = MicroRates::from_kernel(kernel, n, rate_bound)?;
        let init = ParticleConfig::from_measure(&space, n, mu0);
        let gaps: Vec<(f64, f64)> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let ps = simulate_stream(&mr, &space, &init, t_end, master_seed, r as u64)?;
                let traj = empirical_trajectory(&ps, &grid)?;
                Ok(traj.linf_distance(&ode_on_grid))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gm = 0.0;
        let mut gw = 0.0;
        for &(a, b) in &gaps {
            gm += a;
            gw += b;
        }
        rows.push(LlnRow {
            n,
            gap_measure: gm / replicas as f64,
            gap_flux: gw / replicas as f64,
        });
    }
    Ok(LlnReport { rows })
}

/// Piecewise-linear resample of a trajectory onto a new grid.
pub fn resample(traj: &Trajectory, grid: &[f64]) -> Trajectory {
    let q = traj.measures[0].len();
    let n_edges = traj.fluxes[0].len();
    let mut measures = Vec::with_capacity(grid.len());
    let mut fluxes = Vec::with_capacity(grid.len());
    for &t in grid {
        let idx = match traj
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => {
                measures.push(traj.measures[i].clone());
                fluxes.push(traj.fluxes[i].clone());
                continue;
            }
            Err(i) => i,
        };
        if idx == 0 {
            measures.push(traj.measures[0].clone());
            fluxes.push(traj.fluxes[0].clone());
            continue;
        }
        if idx >= traj.len() {
            measures.push(traj.measures[traj.len() - 1].clone());
            fluxes.push(traj.fluxes[traj.len() - 1].clone());
            continue;
        }
        let (t0, t1) = (traj.times[idx - 1], traj.times[idx]);
        let lam = (t - t0) / (t1 - t0);
        let mu: Vec<f64> = (0..q)
            .map(|a| {
                (1.0 - lam) * traj.measures[idx - 1].mass(a) + lam * traj.measures[idx].mass(a)
            })
            .collect();
        let w: Vec<f64> = (0..n_edges)
            .map(|e| (1.0 - lam) * traj.fluxes[idx - 1].get(e) + lam * traj.fluxes[idx].get(e))
            .collect();
        measures.push(Measure::from_raw(mu));
        fluxes.push(FluxVector::from_raw(w));
    }
    Trajectory {
        times: grid.to_vec(),
        measures,
        fluxes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::constant_kernel;
    use crate::stats;

    fn space(q: usize) -> Arc<StateSpace> {
        Arc::new(StateSpace::new(q).unwrap())
    }

    fn one_way_rates(n: usize) -> MicroRates {
        // q = 2, rate 1 from state 0 to 1, nothing back.
        MicroRates::homogeneous(n, 1.0, |_t, a, _b, _cfg| if a == 0 { 1.0 } else { 0.0 })
            .unwrap()
    }

    #[test]
    fn zero_rates_produce_no_events() {
        let s = space(2);
        let mr = MicroRates::homogeneous(10, 1.0, |_, _, _, _| 0.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 10, &Measure::uniform(2));
        let ps = simulate(&mr, &s, &init, 1.0, 1).unwrap();
        assert!(ps.events.is_empty());
        assert_eq!(ps.final_config().flux_counts, init.flux_counts);
    }

    #[test]
    fn one_way_jump_count_matches_exponential_law() {
        // Each of 100 particles jumps 0 -> 1 at rate 1 at most once by
        // T = 1, so the expected total event count is 100 (1 - e^{-1}).
        // Oracle: closed-form exponential law; check the empirical mean
        // over 10^4 streams within 3 standard errors.
        let s = space(2);
        let n = 100;
        let mr = one_way_rates(n);
        let init = ParticleConfig::from_measure(&s, n, &Measure::vertex(2, 0));
        let replicas = 10_000;
        let total: u64 = (0..replicas)
            .into_par_iter()
            .map(|r| {
                simulate_stream(&mr, &s, &init, 1.0, 99, r as u64)
                    .unwrap()
                    .events
                    .len() as u64
            })
            .sum();
        let mean = total as f64 / replicas as f64;
        let p = 1.0 - (-1.0f64).exp();
        let expected = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let se = sd / (replicas as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean}, expected {expected}, se {se}"
        );
    }

    #[test]
    fn conservation_identity_holds_at_every_prefix() {
        let s = space(3);
        let k = constant_kernel(s.clone(), vec![1.0; 6]).unwrap();
        let mr = MicroRates::from_kernel(&k, 30, 4.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 30, &Measure::uniform(3));
        let ps = simulate(&mr, &s, &init, 2.0, 5).unwrap();
        assert!(!ps.events.is_empty());
        let mut cfg = ps.initial.clone();
        for ev in &ps.events {
            let (a, b) = s.edge(ev.edge as usize);
            assert_eq!(cfg.states[ev.particle as usize], a, "edge source mismatch");
            cfg.states[ev.particle as usize] = b;
            cfg.flux_counts[ev.edge as usize] += 1;
            assert_eq!(cfg.conservation_residual(&ps.initial, &s), 0);
        }
    }

    #[test]
    fn event_times_strictly_increase() {
        let s = space(2);
        let mr = one_way_rates(200);
        let init = ParticleConfig::from_measure(&s, 200, &Measure::vertex(2, 0));
        let ps = simulate(&mr, &s, &init, 1.0, 17).unwrap();
        for pair in ps.events.windows(2) {
            assert!(pair[1].time > pair[0].time);
        }
    }

    #[test]
    fn simulation_is_deterministic_given_seed() {
        let s = space(3);
        let k = constant_kernel(s.clone(), vec![0.7; 6]).unwrap();
        let mr = MicroRates::from_kernel(&k, 50, 4.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 50, &Measure::uniform(3));
        let a = simulate(&mr, &s, &init, 1.5, 123).unwrap();
        let b = simulate(&mr, &s, &init, 1.5, 123).unwrap();
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
            assert_eq!(x.particle, y.particle);
            assert_eq!(x.edge, y.edge);
        }
    }

    #[test]
    fn flux_counters_are_nondecreasing() {
        let s = space(2);
        let mr = one_way_rates(60);
        let init = ParticleConfig::from_measure(&s, 60, &Measure::vertex(2, 0));
        let ps = simulate(&mr, &s, &init, 1.0, 3).unwrap();
        let grid = uniform_grid(1.0, 21);
        let traj = empirical_trajectory(&ps, &grid).unwrap();
        for k in 1..traj.len() {
            for e in 0..s.n_edges() {
                assert!(traj.fluxes[k].get(e) >= traj.fluxes[k - 1].get(e));
            }
        }
    }

    #[test]
    fn empirical_trajectory_of_empty_log_is_constant() {
        let s = space(2);
        let mr = MicroRates::homogeneous(10, 1.0, |_, _, _, _| 0.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 10, &Measure::new(vec![0.3, 0.7]).unwrap());
        let ps = simulate(&mr, &s, &init, 1.0, 1).unwrap();
        let traj = empirical_trajectory(&ps, &uniform_grid(1.0, 5)).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.measures[k], init.empirical_measure(2));
            assert!(traj.fluxes[k].as_slice().iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn single_event_shifts_mass_by_one_over_n() {
        let s = space(2);
        let n = 10;
        let init = ParticleConfig::from_measure(&s, n, &Measure::vertex(2, 0));
        let ps = PathSample {
            space: s.clone(),
            n,
            initial: init,
            events: vec![Event {
                time: 0.4,
                particle: 0,
                edge: s.edge_index(0, 1) as u32,
            }],
            t_end: 1.0,
        };
        let traj = empirical_trajectory(&ps, &[0.0, 0.39, 0.4, 1.0]).unwrap();
        assert_eq!(traj.measures[1].mass(0), 1.0);
        assert!((traj.measures[2].mass(0) - 0.9).abs() < 1e-15);
        assert!((traj.fluxes[2].get(s.edge_index(0, 1)) - 0.1).abs() < 1e-15);
        assert_eq!(traj.fluxes[1].get(s.edge_index(0, 1)), 0.0);
        // Divergence identity is exact in rationals; float dust only.
        assert!(traj.divergence_residual(&s) <= 1e-15);
    }

    #[test]
    fn uniform_grid_ends_exactly_at_the_horizon() {
        for &(t_end, points) in &[(0.1, 4usize), (0.7, 31), (1.0, 101), (2.3, 13)] {
            let grid = uniform_grid(t_end, points);
            assert_eq!(grid.len(), points.max(2));
            assert_eq!(grid[0], 0.0);
            assert_eq!(*grid.last().unwrap(), t_end);
            for pair in grid.windows(2) {
                assert!(pair[1] > pair[0]);
            }
        }
    }

    #[test]
    fn grid_beyond_horizon_is_rejected() {
        let s = space(2);
        let mr = one_way_rates(5);
        let init = ParticleConfig::from_measure(&s, 5, &Measure::vertex(2, 0));
        let ps = simulate(&mr, &s, &init, 1.0, 2).unwrap();
        assert!(matches!(
            empirical_trajectory(&ps, &[0.0, 1.2]),
            Err(Error::BeyondHorizon(_, _))
        ));
    }

    #[test]
    fn divergence_identity_exact_on_simulated_paths() {
        let s = space(3);
        let k = constant_kernel(s.clone(), vec![1.0; 6]).unwrap();
        let mr = MicroRates::from_kernel(&k, 40, 4.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 40, &Measure::uniform(3));
        let ps = simulate(&mr, &s, &init, 1.0, 11).unwrap();
        let traj = empirical_trajectory(&ps, &uniform_grid(1.0, 11)).unwrap();
        assert!(traj.divergence_residual(&s) <= 1e-14);
    }

    #[test]
    fn zero_kernel_ode_is_constant() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![0.0, 0.0]).unwrap();
        let mu0 = Measure::new(vec![0.3, 0.7]).unwrap();
        let traj = mean_field_ode(&k, &mu0, 1.0, 0.01).unwrap();
        let last = traj.measures.last().unwrap();
        assert!(last.linf_distance(&mu0) < 1e-15);
        assert!(traj.fluxes.last().unwrap().as_slice().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn symmetric_two_state_ode_sits_at_fixed_point() {
        // v(0,1) = mu_0, v(1,0) = mu_1: from (1/2, 1/2) the measure is
        // stationary and each flux grows at rate 1/2.
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let t_end = 2.0;
        let traj = mean_field_ode(&k, &Measure::uniform(2), t_end, 1e-3).unwrap();
        let last_mu = traj.measures.last().unwrap();
        assert!(last_mu.linf_distance(&Measure::uniform(2)) < 1e-12);
        let w = traj.fluxes.last().unwrap();
        assert!((w.get(0) - 0.5 * t_end).abs() < 1e-10);
        assert!((w.get(1) - 0.5 * t_end).abs() < 1e-10);
    }

    #[test]
    fn thinning_and_direct_modes_agree_in_law() {
        // Time-constant rates simulated in both modes must give
        // statistically indistinguishable event counts: two-sample KS on
        // 10^4 paths at the 1% level.
        let s = space(2);
        let n = 10;
        let direct = one_way_rates(n);
        // Same rates but routed through the thinning sampler: declare the
        // process periodic with any period (rates ignore t).
        let thinned =
            MicroRates::periodic(n, 1.0, 1.0, 1.0, 2, |_t, a, _b, _cfg| {
                if a == 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap();
        let init = ParticleConfig::from_measure(&s, n, &Measure::vertex(2, 0));
        let paths = 10_000;
        let counts_direct: Vec<f64> = (0..paths)
            .into_par_iter()
            .map(|r| {
                simulate_stream(&direct, &s, &init, 1.0, 7, r as u64)
                    .unwrap()
                    .events
                    .len() as f64
            })
            .collect();
        let counts_thinned: Vec<f64> = (0..paths)
            .into_par_iter()
            .map(|r| {
                simulate_stream(&thinned, &s, &init, 1.0, 8, r as u64)
                    .unwrap()
                    .events
                    .len() as f64
            })
            .collect();
        assert!(
            stats::ks_two_sample(&counts_direct, &counts_thinned, 0.01),
            "KS test rejected equality of direct and thinned laws"
        );
    }

    #[test]
    fn exchangeability_of_particle_labels() {
        // Reversing the particle labels of the initial configuration must
        // leave the law of the empirical event count unchanged (KS, 5%).
        let s = space(2);
        let n = 20;
        let k = constant_kernel(s.clone(), vec![1.0, 0.5]).unwrap();
        let mr = MicroRates::from_kernel(&k, n, 4.0).unwrap();
        let mut init = ParticleConfig::from_measure(&s, n, &Measure::new(vec![0.4, 0.6]).unwrap());
        let paths = 4_000;
        let sample = |init: &ParticleConfig, seed: u64| -> Vec<f64> {
            (0..paths)
                .into_par_iter()
                .map(|r| {
                    simulate_stream(&mr, &s, init, 1.0, seed, r as u64)
                        .unwrap()
                        .events
                        .len() as f64
                })
                .collect()
        };
        let counts_id = sample(&init, 21);
        init.states.reverse();
        let counts_perm = sample(&init, 22);
        assert!(
            stats::ks_two_sample(&counts_id, &counts_perm, 0.05),
            "KS test rejected exchangeability"
        );
    }

    #[test]
    fn rate_bound_violation_is_a_hard_error() {
        let s = space(2);
        let mr = MicroRates::periodic(5, 0.5, 1.0, 1.0, 2, |_t, _a, _b, _cfg| 1.0).unwrap();
        let init = ParticleConfig::from_measure(&s, 5, &Measure::vertex(2, 0));
        let err = simulate(&mr, &s, &init, 1.0, 9).unwrap_err();
        assert!(matches!(err, Error::RateBoundExceeded { .. }), "{err}");
    }

    #[test]
    fn kernel_matched_micro_rates_have_zero_premise_gap() {
        // r_n = v / max(mu_n(a), 1/n) makes mu_n(a) r_n equal v exactly on
        // occupied states, and both sides vanish on empty ones.
        let s = space(3);
        let k = constant_kernel(s.clone(), vec![1.3; 6]).unwrap();
        let n = 17;
        let mr = MicroRates::from_kernel(&k, n, 8.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let states: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let mut counts = [0u64; 3];
            for &st in &states {
                counts[st] += 1;
            }
            let mu = Measure::from_raw(counts.iter().map(|&c| c as f64 / n as f64).collect());
            for a in 0..3 {
                for b in 0..3 {
                    if a == b {
                        continue;
                    }
                    let r = mr.rate_for(0.0, a, b, &states, 3);
                    let gap = (mu.mass(a) * r - k.rate(s.edge_index(a, b), &mu)).abs();
                    assert!(gap <= 1e-15, "gap {gap}");
                }
            }
        }
    }

    #[test]
    fn lln_gap_shrinks_with_n() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let report = lln_gap(
            &k,
            4.0,
            &Measure::uniform(2),
            1.0,
            &[10, 320],
            24,
            2024,
            41,
            1e-3,
        )
        .unwrap();
        // Root-n scaling leaves plenty of room between n = 10 and n = 320
        // even with Monte Carlo noise on 24 replicas.
        assert!(report.rows[1].gap_measure < report.rows[0].gap_measure);
        assert!(report.rows[1].gap_flux < report.rows[0].gap_flux);
    }

    #[test]
    fn single_particle_gap_is_order_one() {
        let s = space(2);
        let k = constant_kernel(s.clone(), vec![1.0, 1.0]).unwrap();
        let report = lln_gap(
            &k,
            4.0,
            &Measure::uniform(2),
            1.0,
            &[1],
            16,
            7,
            21,
            1e-3,
        )
        .unwrap();
        assert!(report.rows[0].gap_measure > 0.3);
    }
}
