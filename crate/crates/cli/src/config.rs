//! Experiment configuration: a strict TOML tree with flat command-line
//! overrides.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently corrupt
//! an experiment. `--set section.key=value` patches the parsed tree
//! before deserialization. The canonical form of a resolved config is its
//! re-serialization; its 64-bit FNV-1a hash stamps every output file.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use fluxldp_core::kernel::{
    average_kernel, constant_kernel, glauber_kernel, glauber_periodic_kernel, potts_gradient,
    sinusoidal_kernel, Kernel, TimeKernel, TimePotentialGradient,
};
use fluxldp_core::space::{Measure, StateSpace};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Worker threads; 0 or absent means all available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hj: Option<HjConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// One of `constant`, `glauber`, `glauber_periodic`, `sinusoidal`.
    pub family: String,
    pub q: usize,
    /// Uniform per-particle rate on every edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Per-edge rates in edge order; overrides `rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    /// Potts inverse temperature (glauber families).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Oscillation amplitude of the periodic potential (glauber_periodic).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_drive: Option<f64>,
    /// Sinusoidal modulation amplitude in [-1, 1] (sinusoidal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Period of the fast clock (periodic families).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Sample count for `kernel-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    pub rate_bound: f64,
    /// Initial measure; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    /// ODE integration step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Nodes of the output/membership time grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_points: Option<usize>,
    /// Time rescaling of the fast clock (periodic samplers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub m: usize,
    pub w_max: f64,
    pub h_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjConfig {
    pub lambda: f64,
    /// Right-hand side spec: `mu:<a>`, `flux_frac:<a>_<b>`, `const:<c>`.
    pub h: String,
    pub catalog: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_b: Option<Vec<f64>>,
    pub dt: f64,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Additional (lambda, h) pairs for the uniqueness check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_pairs: Option<Vec<LambdaH>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaH {
    pub lambda: f64,
    pub h: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub alpha1_ladder: Vec<f64>,
    pub alpha2: f64,
    pub epsilon: f64,
    /// Optional containment-weight ladder; the diagnostic runs once per
    /// entry. Defaults to `[epsilon]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_ladder: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_list: Option<Vec<f64>>,
    /// Replicas per n are `min(replicas_scale / n, replicas_cap)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas_scale: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube_flux_radius: Option<f64>,
    /// Per-edge tilt of the tube reference flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_tilt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descent_iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    /// Trajectory CSV whose action / contracted rate is evaluated.
    pub trajectory: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl ExperimentConfig {
    /// Parse a config file, apply `--set section.key=value` overrides,
    /// and validate strictly.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        for entry in overrides {
            apply_override(&mut tree, entry)?;
        }
        let config: ExperimentConfig = tree
            .try_into()
            .map_err(|e| CliError::Validation(format!("config validation error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let k = &self.kernel;
        if k.q < 2 {
            return Err(CliError::Validation(format!("kernel.q = {} (< 2)", k.q)));
        }
        let known: BTreeSet<&str> =
            ["constant", "glauber", "glauber_periodic", "sinusoidal"].into();
        if !known.contains(k.family.as_str()) {
            return Err(CliError::Validation(format!(
                "unknown kernel.family {:?}; choose one of {known:?}",
                k.family
            )));
        }
        if k.rate.is_none() && k.rates.is_none() {
            return Err(CliError::Validation(
                "kernel needs `rate` or `rates`".into(),
            ));
        }
        if let Some(sim) = &self.simulation {
            if !(sim.t_end > 0.0) || !(sim.rate_bound > 0.0) || sim.n == 0 {
                return Err(CliError::Validation(format!(
                    "simulation block invalid: n = {}, t_end = {}, rate_bound = {}",
                    sim.n, sim.t_end, sim.rate_bound
                )));
            }
            if let Some(init) = &sim.initial {
                if init.len() != k.q {
                    return Err(CliError::Validation(format!(
                        "simulation.initial has {} entries for q = {}",
                        init.len(),
                        k.q
                    )));
                }
                Measure::new(init.clone())
                    .map_err(|e| CliError::Validation(format!("simulation.initial: {e}")))?;
            }
        }
        Ok(())
    }

    /// Canonical serialized form of the resolved config.
    pub fn canonical_text(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a (64-bit) hash of the canonical text, in hex.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }

    pub fn state_space(&self) -> Result<Arc<StateSpace>, CliError> {
        StateSpace::new(self.kernel.q)
            .map(Arc::new)
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn edge_rates(&self, space: &StateSpace) -> Result<Vec<f64>, CliError> {
        match (&self.kernel.rates, self.kernel.rate) {
            (Some(rates), _) => {
                if rates.len() != space.n_edges() {
                    return Err(CliError::Validation(format!(
                        "kernel.rates has {} entries for {} edges",
                        rates.len(),
                        space.n_edges()
                    )));
                }
                Ok(rates.clone())
            }
            (None, Some(rate)) => Ok(vec![rate; space.n_edges()]),
            (None, None) => unreachable!("validated"),
        }
    }

    /// Build the time-homogeneous kernel. Periodic families resolve to
    /// their period average (quadrature nodes from the experiment block).
    pub fn homogeneous_kernel(&self) -> Result<Kernel, CliError> {
        let space = self.state_space()?;
        let rates = self.edge_rates(&space)?;
        match self.kernel.family.as_str() {
            "constant" => constant_kernel(space, rates).map_err(CliError::from_core),
            "glauber" => {
                let beta = self.kernel.beta.ok_or_else(|| {
                    CliError::Validation("glauber family needs kernel.beta".into())
                })?;
                glauber_kernel(space, rates, potts_gradient(beta)).map_err(CliError::from_core)
            }
            "glauber_periodic" | "sinusoidal" => {
                let tk = self.periodic_kernel()?;
                let quad = self.quad_points();
                average_kernel(&tk, quad).map_err(CliError::from_core)
            }
            other => Err(CliError::Validation(format!("unknown family {other:?}"))),
        }
    }

    /// Build the fast-periodic kernel; errors for homogeneous families.
    pub fn periodic_kernel(&self) -> Result<TimeKernel, CliError> {
        let space = self.state_space()?;
        let rates = self.edge_rates(&space)?;
        let period = self.kernel.period.unwrap_or(1.0);
        match self.kernel.family.as_str() {
            "sinusoidal" => {
                let amplitude = self.kernel.amplitude.ok_or_else(|| {
                    CliError::Validation("sinusoidal family needs kernel.amplitude".into())
                })?;
                sinusoidal_kernel(space, rates, amplitude, period).map_err(CliError::from_core)
            }
            "glauber_periodic" => {
                let beta = self.kernel.beta.unwrap_or(0.0);
                let drive = self.kernel.beta_drive.ok_or_else(|| {
                    CliError::Validation(
                        "glauber_periodic family needs kernel.beta_drive".into(),
                    )
                })?;
                let grad: TimePotentialGradient = Arc::new(move |t: f64, mu: &Measure| {
                    let b = beta + drive * (2.0 * std::f64::consts::PI * t / period).sin();
                    mu.as_slice().iter().map(|&m| -2.0 * b * m).collect()
                });
                glauber_periodic_kernel(space, rates, grad, period).map_err(CliError::from_core)
            }
            other => Err(CliError::Validation(format!(
                "family {other:?} is not time-periodic"
            ))),
        }
    }

    pub fn is_periodic_family(&self) -> bool {
        matches!(
            self.kernel.family.as_str(),
            "glauber_periodic" | "sinusoidal"
        )
    }

    pub fn quad_points(&self) -> usize {
        self.experiment
            .as_ref()
            .and_then(|e| e.quad_points)
            .unwrap_or(256)
    }

    pub fn initial_measure(&self) -> Measure {
        match self.simulation.as_ref().and_then(|s| s.initial.clone()) {
            Some(m) => Measure::new(m).expect("validated"),
            None => Measure::uniform(self.kernel.q),
        }
    }

    pub fn simulation(&self) -> Result<&SimulationConfig, CliError> {
        self.simulation
            .as_ref()
            .ok_or_else(|| CliError::Validation("missing [simulation] section".into()))
    }

    pub fn grid_section(&self) -> Result<&GridConfig, CliError> {
        self.grid
            .as_ref()
            .ok_or_else(|| CliError::Validation("missing [grid] section".into()))
    }

    pub fn hj_section(&self) -> Result<&HjConfig, CliError> {
        self.hj
            .as_ref()
            .ok_or_else(|| CliError::Validation("missing [hj] section".into()))
    }

    pub fn penalty_section(&self) -> Result<&PenaltyConfig, CliError> {
        self.penalty
            .as_ref()
            .ok_or_else(|| CliError::Validation("missing [penalty] section".into()))
    }

    pub fn experiment_section(&self) -> Result<&ExperimentSection, CliError> {
        self.experiment
            .as_ref()
            .ok_or_else(|| CliError::Validation("missing [experiment] section".into()))
    }
}

/// Patch `section.key=value` (or `key=value` at top level) into the tree.
fn apply_override(tree: &mut toml::Table, entry: &str) -> Result<(), CliError> {
    let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("override {entry:?} is not of the form key=value"))
    })?;
    let path = path.trim();
    let value = parse_toml_value(raw_value.trim())
        .map_err(|e| CliError::Validation(format!("override {entry:?}: {e}")))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Validation(format!("bad override path {path:?}")));
    }
    let mut node = tree;
    for segment in &segments[..segments.len() - 1] {
        node = node
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Validation(format!("override path {path:?} crosses a non-table"))
            })?;
    }
    node.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> Result<toml::Value, String> {
    let wrapped = format!("v = {raw}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        return Ok(table["v"].clone());
    }
    // Bare words become strings.
    let quoted = format!("v = \"{}\"", raw.replace('"', "\\\""));
    let table = quoted.parse::<toml::Table>().map_err(|e| e.to_string())?;
    Ok(table["v"].clone())
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Parse an `h` spec: `const:<c>`, `mu:<a>` (1-based state), or
/// `flux_frac:<a>_<b>` for the bounded coordinate `w_e / (1 + w_e)`.
pub fn parse_h_spec(
    spec: &str,
    space: &Arc<StateSpace>,
) -> Result<Box<dyn Fn(&fluxldp_core::space::Point) -> f64 + Send + Sync>, CliError> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Validation(format!("h spec {spec:?} needs kind:arg")))?;
    match kind {
        "const" => {
            let c: f64 = arg
                .parse()
                .map_err(|e| CliError::Validation(format!("h const: {e}")))?;
            Ok(Box::new(move |_x| c))
        }
        "mu" => {
            let a: usize = arg
                .parse()
                .map_err(|e| CliError::Validation(format!("h mu: {e}")))?;
            if a == 0 || a > space.q() {
                return Err(CliError::Validation(format!(
                    "h spec state {a} out of 1..={}",
                    space.q()
                )));
            }
            Ok(Box::new(move |x| x.measure.mass(a - 1)))
        }
        "flux_frac" => {
            let (sa, sb) = arg.split_once('_').ok_or_else(|| {
                CliError::Validation(format!("h flux_frac arg {arg:?} needs a_b"))
            })?;
            let a: usize = sa
                .parse()
                .map_err(|e| CliError::Validation(format!("h flux_frac: {e}")))?;
            let b: usize = sb
                .parse()
                .map_err(|e| CliError::Validation(format!("h flux_frac: {e}")))?;
            if a == 0 || b == 0 || a > space.q() || b > space.q() || a == b {
                return Err(CliError::Validation(format!(
                    "h spec edge ({a},{b}) invalid for q = {}",
                    space.q()
                )));
            }
            let e = space.edge_index(a - 1, b - 1);
            Ok(Box::new(move |x| {
                let w = x.flux.get(e);
                w / (1.0 + w)
            }))
        }
        other => Err(CliError::Validation(format!("unknown h kind {other:?}"))),
    }
}
