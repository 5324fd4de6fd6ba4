//! Limiting jump intensities `v(a, b, mu)` and their structure.
//!
//! A kernel assigns to each directed edge and each measure a non-negative
//! intensity. A *proper* kernel additionally vanishes on an edge exactly
//! when the source state carries no mass, and factorizes as
//! `v = v_dagger(a, b, mu(a)) * v_ddagger(a, b, mu)` with `v_dagger`
//! nondecreasing in the mass coordinate and `v_ddagger` strictly positive.
//! Properness cannot be decided from finitely many evaluations, so
//! [`proper_kernel_check`] verifies the conditions on a deterministic
//! sample of the simplex and reports violations instead of erroring.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::space::{Measure, StateSpace};

type EvalFn = dyn Fn(usize, &Measure) -> f64 + Send + Sync;
type DaggerFn = dyn Fn(usize, f64) -> f64 + Send + Sync;
type DdaggerFn = dyn Fn(usize, &Measure) -> f64 + Send + Sync;
type TimeEvalFn = dyn Fn(f64, usize, &Measure) -> f64 + Send + Sync;
type TimeDdaggerFn = dyn Fn(f64, usize, &Measure) -> f64 + Send + Sync;

/// Factorization `v = v_dagger * v_ddagger` on the non-zero edges.
#[derive(Clone)]
pub struct Decomposition {
    /// `v_dagger(edge, mu(a))`, nondecreasing in the mass coordinate.
    pub dagger: Arc<DaggerFn>,
    /// `v_ddagger(edge, mu)`, strictly positive.
    pub ddagger: Arc<DdaggerFn>,
}

/// A time-homogeneous intensity kernel on the directed edges.
///
/// Immutable and reentrant: evaluation is a pure function of the inputs,
/// safe to share across workers.
#[derive(Clone)]
pub struct Kernel {
    space: Arc<StateSpace>,
    eval: Arc<EvalFn>,
    zero_edges: BTreeSet<usize>,
    decomposition: Option<Decomposition>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("q", &self.space.q())
            .field("zero_edges", &self.zero_edges)
            .field("decomposed", &self.decomposition.is_some())
            .finish()
    }
}

impl Kernel {
    /// Wrap an arbitrary evaluation function, without decomposition.
    pub fn from_fn<F>(space: Arc<StateSpace>, eval: F) -> Self
    where
        F: Fn(usize, &Measure) -> f64 + Send + Sync + 'static,
    {
        Self {
            space,
            eval: Arc::new(eval),
            zero_edges: BTreeSet::new(),
            decomposition: None,
        }
    }

    pub fn with_zero_edges(mut self, zero_edges: BTreeSet<usize>) -> Self {
        self.zero_edges = zero_edges;
        self
    }

    pub fn with_decomposition(mut self, decomposition: Decomposition) -> Self {
        self.decomposition = Some(decomposition);
        self
    }

    /// Intensity `v(a, b, mu)` of the edge with index `edge`.
    pub fn rate(&self, edge: usize, mu: &Measure) -> f64 {
        (self.eval)(edge, mu)
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn zero_edges(&self) -> &BTreeSet<usize> {
        &self.zero_edges
    }

    pub fn decomposition(&self) -> Option<&Decomposition> {
        self.decomposition.as_ref()
    }

    /// All edge intensities at `mu`, in edge order.
    pub fn rates_at(&self, mu: &Measure) -> Vec<f64> {
        (0..self.space.n_edges()).map(|e| self.rate(e, mu)).collect()
    }
}

fn validate_edge_rates(space: &StateSpace, r: &[f64]) -> Result<()> {
    if r.len() != space.n_edges() {
        return Err(Error::InvalidKernel(format!(
            "rate table has {} entries, expected {}",
            r.len(),
            space.n_edges()
        )));
    }
    for (e, &x) in r.iter().enumerate() {
        if !(x >= 0.0) || !x.is_finite() {
            let (a, b) = space.edge(e);
            return Err(Error::InvalidKernel(format!("r({a},{b}) = {x}")));
        }
    }
    Ok(())
}

fn zero_edge_set(r: &[f64]) -> BTreeSet<usize> {
    r.iter()
        .enumerate()
        .filter(|(_, &x)| x == 0.0)
        .map(|(e, _)| e)
        .collect()
}

/// Kernel with constant per-particle rates: `v(a, b, mu) = mu(a) r(a, b)`.
pub fn constant_kernel(space: Arc<StateSpace>, r: Vec<f64>) -> Result<Kernel> {
    validate_edge_rates(&space, &r)?;
    let zero = zero_edge_set(&r);
    let rr = r.clone();
    let sp = space.clone();
    let eval = move |e: usize, mu: &Measure| mu.mass(sp.edge(e).0) * rr[e];
    let r2 = r.clone();
    let sp2 = space.clone();
    let decomposition = Decomposition {
        dagger: Arc::new(move |e: usize, m: f64| m * r2[e]),
        ddagger: Arc::new(move |_e: usize, _mu: &Measure| {
            let _ = &sp2;
            1.0
        }),
    };
    Ok(Kernel::from_fn(space, eval)
        .with_zero_edges(zero)
        .with_decomposition(decomposition))
}

/// Gradient of a potential `V`: maps a measure to the vector of partial
/// derivatives of `V` in each mass coordinate.
pub type PotentialGradient = Arc<dyn Fn(&Measure) -> Vec<f64> + Send + Sync>;

/// Glauber dynamics kernel for a potential `V`:
///
/// `v(a, b, mu) = mu(a) r(a, b) exp{ (grad_a V(mu) - grad_b V(mu)) / 2 }`,
///
/// with the factorization `v_dagger = mu(a) r(a, b)` and the exponential
/// factor as `v_ddagger`.
pub fn glauber_kernel(
    space: Arc<StateSpace>,
    r: Vec<f64>,
    grad_v: PotentialGradient,
) -> Result<Kernel> {
    validate_edge_rates(&space, &r)?;
    let zero = zero_edge_set(&r);
    let sp = space.clone();
    let gv = grad_v.clone();
    let rr = r.clone();
    let eval = move |e: usize, mu: &Measure| {
        let (a, b) = sp.edge(e);
        let g = gv(mu);
        mu.mass(a) * rr[e] * (0.5 * (g[a] - g[b])).exp()
    };
    let r2 = r.clone();
    let sp2 = space.clone();
    let gv2 = grad_v;
    let decomposition = Decomposition {
        dagger: Arc::new(move |e: usize, m: f64| m * r2[e]),
        ddagger: Arc::new(move |e: usize, mu: &Measure| {
            let (a, b) = sp2.edge(e);
            let g = gv2(mu);
            (0.5 * (g[a] - g[b])).exp()
        }),
    };
    Ok(Kernel::from_fn(space, eval)
        .with_zero_edges(zero)
        .with_decomposition(decomposition))
}

/// Gradient of the quadratic Potts potential `V(mu) = -beta * sum_a mu(a)^2`.
pub fn potts_gradient(beta: f64) -> PotentialGradient {
    Arc::new(move |mu: &Measure| mu.as_slice().iter().map(|&m| -2.0 * beta * m).collect())
}

/// A `T0`-periodic time-dependent kernel `v0(t, a, b, mu)`.
#[derive(Clone)]
pub struct TimeKernel {
    space: Arc<StateSpace>,
    eval0: Arc<TimeEvalFn>,
    period: f64,
    zero_edges: BTreeSet<usize>,
    dagger: Option<Arc<DaggerFn>>,
    ddagger0: Option<Arc<TimeDdaggerFn>>,
}

impl TimeKernel {
    /// Wrap a periodic evaluation function; periodicity is verified on a
    /// deterministic sample of `(t, edge, mu)` triples to within `1e-12`.
    pub fn new<F>(space: Arc<StateSpace>, eval0: F, period: f64) -> Result<Self>
    where
        F: Fn(f64, usize, &Measure) -> f64 + Send + Sync + 'static,
    {
        if !(period > 0.0) {
            return Err(Error::InvalidKernel(format!("period = {period}")));
        }
        let tk = Self {
            space,
            eval0: Arc::new(eval0),
            period,
            zero_edges: BTreeSet::new(),
            dagger: None,
            ddagger0: None,
        };
        tk.check_periodicity()?;
        Ok(tk)
    }

    fn check_periodicity(&self) -> Result<()> {
        let mut rng = ChaCha12Rng::seed_from_u64(0x7065_7269_6f64);
        for _ in 0..32 {
            let t: f64 = rng.sample::<f64, _>(Open01) * 3.0 * self.period;
            let mu = sample_dirichlet(self.space.q(), &mut rng);
            let e = rng.gen_range(0..self.space.n_edges());
            let v1 = (self.eval0)(t, e, &mu);
            let v2 = (self.eval0)(t + self.period, e, &mu);
            if (v1 - v2).abs() > 1e-12 * (1.0 + v1.abs()) {
                return Err(Error::InvalidKernel(format!(
                    "kernel is not {}-periodic: |v0({t}) - v0(t + T0)| = {:e}",
                    self.period,
                    (v1 - v2).abs()
                )));
            }
        }
        Ok(())
    }

    pub fn with_zero_edges(mut self, zero_edges: BTreeSet<usize>) -> Self {
        self.zero_edges = zero_edges;
        self
    }

    /// Attach a time-independent monotone factor and a time-dependent
    /// positive factor with `v0(t) = dagger * ddagger0(t)`.
    pub fn with_decomposition(
        mut self,
        dagger: Arc<DaggerFn>,
        ddagger0: Arc<TimeDdaggerFn>,
    ) -> Self {
        self.dagger = Some(dagger);
        self.ddagger0 = Some(ddagger0);
        self
    }

    pub fn rate(&self, t: f64, edge: usize, mu: &Measure) -> f64 {
        (self.eval0)(t, edge, mu)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }
}

/// Sinusoidally modulated constant-rate kernel:
///
/// `v0(t, a, b, mu) = mu(a) r(a, b) (1 + amplitude sin(2 pi t / T0))`.
///
/// The modulation has zero mean, so the period average is the plain
/// constant-rate kernel. Requires `|amplitude| <= 1` to keep `v0 >= 0`.
pub fn sinusoidal_kernel(
    space: Arc<StateSpace>,
    r: Vec<f64>,
    amplitude: f64,
    period: f64,
) -> Result<TimeKernel> {
    validate_edge_rates(&space, &r)?;
    if amplitude.abs() > 1.0 {
        return Err(Error::InvalidKernel(format!(
            "amplitude {amplitude} would make rates negative"
        )));
    }
    let zero = zero_edge_set(&r);
    let sp = space.clone();
    let rr = r.clone();
    let eval0 = move |t: f64, e: usize, mu: &Measure| {
        let (a, _) = sp.edge(e);
        mu.mass(a) * rr[e] * (1.0 + amplitude * (2.0 * std::f64::consts::PI * t / period).sin())
    };
    let r2 = r;
    let dagger: Arc<DaggerFn> = Arc::new(move |e: usize, m: f64| m * r2[e]);
    let ddagger0: Arc<TimeDdaggerFn> = Arc::new(move |t: f64, _e: usize, _mu: &Measure| {
        1.0 + amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
    });
    Ok(TimeKernel::new(space, eval0, period)?
        .with_zero_edges(zero)
        .with_decomposition(dagger, ddagger0))
}

/// Glauber kernel with a time-periodic potential `V(t, mu)`:
///
/// `v0(t, a, b, mu) = mu(a) r(a, b) exp{ (grad_a V(t, mu) - grad_b V(t, mu)) / 2 }`.
pub type TimePotentialGradient = Arc<dyn Fn(f64, &Measure) -> Vec<f64> + Send + Sync>;

pub fn glauber_periodic_kernel(
    space: Arc<StateSpace>,
    r: Vec<f64>,
    grad_v: TimePotentialGradient,
    period: f64,
) -> Result<TimeKernel> {
    validate_edge_rates(&space, &r)?;
    let zero = zero_edge_set(&r);
    let sp = space.clone();
    let rr = r.clone();
    let gv = grad_v.clone();
    let eval0 = move |t: f64, e: usize, mu: &Measure| {
        let (a, b) = sp.edge(e);
        let g = gv(t, mu);
        mu.mass(a) * rr[e] * (0.5 * (g[a] - g[b])).exp()
    };
    let r2 = r;
    let dagger: Arc<DaggerFn> = Arc::new(move |e: usize, m: f64| m * r2[e]);
    let sp2 = space.clone();
    let ddagger0: Arc<TimeDdaggerFn> = Arc::new(move |t: f64, e: usize, mu: &Measure| {
        let (a, b) = sp2.edge(e);
        let g = grad_v(t, mu);
        (0.5 * (g[a] - g[b])).exp()
    });
    Ok(TimeKernel::new(space, eval0, period)?
        .with_zero_edges(zero)
        .with_decomposition(dagger, ddagger0))
}

/// Period average `v(a, b, mu) = (1/T0) int_0^T0 v0(t, a, b, mu) dt` by
/// composite trapezoidal quadrature on `quad_points` nodes.
///
/// For periodic integrands the trapezoidal rule is spectrally accurate.
/// The decomposition carries over when the time kernel factorizes with a
/// time-independent monotone part.
pub fn average_kernel(tk: &TimeKernel, quad_points: usize) -> Result<Kernel> {
    if quad_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "quad_points = {quad_points}, need >= 2"
        )));
    }
    let period = tk.period;
    let eval0 = tk.eval0.clone();
    let eval = move |e: usize, mu: &Measure| {
        trapezoid_average(|t| eval0(t, e, mu), period, quad_points)
    };
    let mut kernel = Kernel::from_fn(tk.space.clone(), eval).with_zero_edges(tk.zero_edges.clone());
    if let (Some(dagger), Some(ddagger0)) = (tk.dagger.clone(), tk.ddagger0.clone()) {
        kernel = kernel.with_decomposition(Decomposition {
            dagger,
            ddagger: Arc::new(move |e: usize, mu: &Measure| {
                trapezoid_average(|t| ddagger0(t, e, mu), period, quad_points)
            }),
        });
    }
    Ok(kernel)
}

fn trapezoid_average(f: impl Fn(f64) -> f64, period: f64, quad_points: usize) -> f64 {
    let n = quad_points - 1;
    let h = period / n as f64;
    let mut sum = 0.5 * (f(0.0) + f(period));
    for k in 1..n {
        sum += f(k as f64 * h);
    }
    sum * h / period
}

/// One violation found by [`proper_kernel_check`].
#[derive(Debug, Clone, serde::Serialize)]
pub enum Violation {
    /// Condition (a): `v > 0` although the source state has zero mass.
    PositiveAtEmptySource { edge: usize, rate: f64 },
    /// Condition (a): `v = 0` although the source state has positive mass.
    VanishesAtChargedSource { edge: usize, source_mass: f64 },
    /// Condition (b): `v_dagger` decreases along the mass grid.
    DaggerNotMonotone { edge: usize, at: f64, drop: f64 },
    /// Condition (b): `v_ddagger <= 0` at a sampled measure.
    DdaggerNotPositive { edge: usize, value: f64 },
    /// `v_dagger * v_ddagger` deviates from `v` at a sampled measure.
    DecompositionMismatch { edge: usize, v: f64, product: f64 },
    /// Sampled two-scale continuity test failed (jump-like behaviour).
    ContinuityJump { edge: usize, coarse: f64, fine: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PositiveAtEmptySource { edge, rate } => {
                write!(f, "edge {edge}: v = {rate} > 0 with mu(a) = 0")
            }
            Violation::VanishesAtChargedSource { edge, source_mass } => {
                write!(f, "edge {edge}: v = 0 with mu(a) = {source_mass} > 0")
            }
            Violation::DaggerNotMonotone { edge, at, drop } => {
                write!(f, "edge {edge}: v_dagger drops by {drop:e} near m = {at}")
            }
            Violation::DdaggerNotPositive { edge, value } => {
                write!(f, "edge {edge}: v_ddagger = {value} <= 0")
            }
            Violation::DecompositionMismatch { edge, v, product } => {
                write!(f, "edge {edge}: v = {v} but v_dagger*v_ddagger = {product}")
            }
            Violation::ContinuityJump { edge, coarse, fine } => {
                write!(
                    f,
                    "edge {edge}: |dv| = {fine:e} at the fine mesh vs {coarse:e} at the coarse mesh"
                )
            }
        }
    }
}

/// Report of [`proper_kernel_check`]; violations are collected, not thrown.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProperKernelReport {
    pub pass: bool,
    pub samples: usize,
    pub violations: Vec<Violation>,
}

/// Verify the proper-kernel conditions on a deterministic sample of the
/// simplex: `samples` Dirichlet draws plus all vertices and all edge
/// midpoints (condition (a) violations live on the boundary). Monotonicity
/// of `v_dagger` is checked on a uniform 10^3-point grid of the mass
/// coordinate per edge; continuity by a two-scale difference test with
/// coarse mesh `1e-3`.
pub fn proper_kernel_check(kernel: &Kernel, samples: usize, seed: u64) -> ProperKernelReport {
    let space = kernel.space();
    let q = space.q();
    let mut violations = Vec::new();

    let mut points: Vec<Measure> = Vec::with_capacity(samples + q + q * (q - 1) / 2);
    for a in 0..q {
        points.push(Measure::vertex(q, a));
    }
    for a in 0..q {
        for b in (a + 1)..q {
            let mut m = vec![0.0; q];
            m[a] = 0.5;
            m[b] = 0.5;
            points.push(Measure::from_raw(m));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..samples {
        points.push(sample_dirichlet(q, &mut rng));
    }

    for e in 0..space.n_edges() {
        if kernel.zero_edges().contains(&e) {
            continue;
        }
        let (a, _) = space.edge(e);
        for mu in &points {
            let v = kernel.rate(e, mu);
            if mu.mass(a) == 0.0 && v != 0.0 {
                violations.push(Violation::PositiveAtEmptySource { edge: e, rate: v });
            }
            if mu.mass(a) > 0.0 && !(v > 0.0) {
                violations.push(Violation::VanishesAtChargedSource {
                    edge: e,
                    source_mass: mu.mass(a),
                });
            }
        }
    }

    if let Some(dec) = kernel.decomposition() {
        for e in 0..space.n_edges() {
            if kernel.zero_edges().contains(&e) {
                continue;
            }
            // Monotonicity of the mass factor on a 1-D grid.
            let grid = 1000usize;
            let mut prev = (dec.dagger)(e, 0.0);
            for k in 1..=grid {
                let m = k as f64 / grid as f64;
                let cur = (dec.dagger)(e, m);
                if cur < prev - 1e-12 {
                    violations.push(Violation::DaggerNotMonotone {
                        edge: e,
                        at: m,
                        drop: prev - cur,
                    });
                    break;
                }
                prev = cur;
            }
            let (a, _) = space.edge(e);
            for mu in &points {
                let dd = (dec.ddagger)(e, mu);
                if !(dd > 0.0) {
                    violations.push(Violation::DdaggerNotPositive { edge: e, value: dd });
                    break;
                }
                let v = kernel.rate(e, mu);
                let product = (dec.dagger)(e, mu.mass(a)) * dd;
                if (v - product).abs() > 1e-9 * (1.0 + v.abs()) {
                    violations.push(Violation::DecompositionMismatch {
                        edge: e,
                        v,
                        product,
                    });
                    break;
                }
            }
        }
    }

    // Two-scale continuity probe: along a fixed tangent direction, a
    // continuous kernel must show a much smaller increment at mesh
    // h * 1e-3 than at mesh h; a jump shows the same increment at both.
    let coarse_mesh = 1e-3f64;
    let probes = samples.clamp(1, 64);
    for _ in 0..probes {
        let mu = sample_dirichlet(q, &mut rng);
        let i = rng.gen_range(0..q);
        let mut j = rng.gen_range(0..q - 1);
        if j >= i {
            j += 1;
        }
        // Step from mu towards moving mass from j to i, staying inside.
        let h = coarse_mesh.min(mu.mass(j) * 0.5);
        if h < coarse_mesh * 1e-3 {
            continue;
        }
        let shifted = |step: f64| {
            let mut m = mu.as_slice().to_vec();
            m[i] += step;
            m[j] -= step;
            Measure::from_raw(m)
        };
        let mu_coarse = shifted(h);
        let mu_fine = shifted(h * 1e-3);
        for e in 0..space.n_edges() {
            if kernel.zero_edges().contains(&e) {
                continue;
            }
            let v0 = kernel.rate(e, &mu);
            let coarse = (kernel.rate(e, &mu_coarse) - v0).abs();
            let fine = (kernel.rate(e, &mu_fine) - v0).abs();
            if fine > 0.5 * coarse + 1e-6 {
                violations.push(Violation::ContinuityJump {
                    edge: e,
                    coarse,
                    fine,
                });
            }
        }
    }

    ProperKernelReport {
        pass: violations.is_empty(),
        samples,
        violations,
    }
}

/// Uniform (Dirichlet(1, ..., 1)) sample from the simplex.
pub fn sample_dirichlet(q: usize, rng: &mut impl Rng) -> Measure {
    let mut m: Vec<f64> = (0..q)
        .map(|_| -rng.sample::<f64, _>(Open01).ln())
        .collect();
    let total: f64 = m.iter().sum();
    for x in &mut m {
        *x /= total;
    }
    Measure::from_raw(m)
}
