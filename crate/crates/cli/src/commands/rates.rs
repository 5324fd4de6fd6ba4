//! `rate-eval` and `action`.

use std::fs::File;
use std::io::{BufReader, Write};

use fluxldp_core::io::read_trajectory_csv;
use fluxldp_core::kernel::sample_dirichlet;
use fluxldp_core::rate::{
    action_integral, contracted_rate, divergence, lagrangian, legendre_dual, VelocityPair,
};
use fluxldp_core::space::{FluxVector, Point};

use super::{file_name_of, fmt, RunContext};
use crate::CliError;

const DUAL_RADIUS: f64 = 20.0;
const DUAL_STEP: f64 = 1e-3;
const INSTANCES: usize = 100;

#[derive(serde::Serialize)]
struct RateEvalSummary {
    instances: usize,
    max_gap: f64,
    mean_gap: f64,
    dual_radius: f64,
    dual_step: f64,
}

/// Evaluate the Lagrangian and its independent numerical Legendre dual on
/// random feasible (state, velocity) pairs and report the agreement.
pub fn rate_eval(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let kernel = cfg.homogeneous_kernel()?;
    let space = kernel.space().clone();
    let q = space.q();
    let n_edges = space.n_edges();

    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(INSTANCES);
    let mut max_gap = 0.0f64;
    let mut sum_gap = 0.0f64;
    for i in 0..INSTANCES {
        let mu = sample_dirichlet(q, &mut rng);
        let w_dot: Vec<f64> = (0..n_edges)
            .map(|e| kernel.rate(e, &mu) * rng.gen_range(0.2..3.0))
            .collect();
        let vel = VelocityPair::new(divergence(&space, &w_dot), w_dot);
        let x = Point::new(mu, FluxVector::zero(n_edges));
        let closed = lagrangian(&x, &vel, &kernel);
        let dual = legendre_dual(&x, &vel, &kernel, DUAL_RADIUS, DUAL_STEP);
        let gap = (closed - dual).abs();
        max_gap = max_gap.max(gap);
        sum_gap += gap;
        rows.push((i, closed, dual, gap));
    }

    ctx.write_csv("rate_eval.csv", seed, |out| {
        writeln!(out, "instance,lagrangian,legendre_dual,gap")?;
        for (i, closed, dual, gap) in &rows {
            writeln!(out, "{},{},{},{}", i, fmt(*closed), fmt(*dual), fmt(*gap))?;
        }
        Ok(())
    })?;
    let summary = RateEvalSummary {
        instances: INSTANCES,
        max_gap,
        mean_gap: sum_gap / INSTANCES as f64,
        dual_radius: DUAL_RADIUS,
        dual_step: DUAL_STEP,
    };
    ctx.write_json("rate_eval.json", seed, &summary)?;
    ctx.summarize(&format!("instances={INSTANCES} max_gap={max_gap:.3e}"));
    Ok(())
}

#[derive(serde::Serialize)]
struct ActionReport {
    trajectory: String,
    nodes: usize,
    action: f64,
    contracted_rate: f64,
}

/// Action and contracted rate of a trajectory CSV.
pub fn action(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let input = &cfg
        .action
        .as_ref()
        .ok_or_else(|| CliError::Validation("missing [action] section".into()))?
        .trajectory;
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let kernel = cfg.homogeneous_kernel()?;
    let space = kernel.space().clone();
    let file = File::open(input)
        .map_err(|e| CliError::Validation(format!("cannot open {input}: {e}")))?;
    let traj =
        read_trajectory_csv(BufReader::new(file), &space).map_err(CliError::from_core)?;
    let action = action_integral(&traj, &kernel).map_err(CliError::from_core)?;
    let contracted =
        contracted_rate(&traj.measure_path(), &kernel).map_err(CliError::from_core)?;
    let report = ActionReport {
        trajectory: file_name_of(std::path::Path::new(input)),
        nodes: traj.len(),
        action,
        contracted_rate: contracted,
    };
    ctx.write_json("action.json", seed, &report)?;
    ctx.write_csv("action.csv", seed, |out| {
        writeln!(out, "action,contracted_rate")?;
        writeln!(out, "{},{}", fmt(action), fmt(contracted))?;
        Ok(())
    })?;
    ctx.summarize(&format!(
        "nodes={} action={} contracted={}",
        traj.len(),
        fmt(action),
        fmt(contracted)
    ));
    Ok(())
}
