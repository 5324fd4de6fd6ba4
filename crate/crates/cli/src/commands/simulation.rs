//! `simulate`, `lln`, and `kernel-check`.

use std::io::Write;

use fluxldp_core::io::{write_path_sample_csv, write_trajectory_csv};
use fluxldp_core::kernel::proper_kernel_check;
use fluxldp_core::sim::{
    empirical_trajectory, lln_gap, simulate as run_path, uniform_grid, MicroRates,
    ParticleConfig,
};

use super::{fmt, RunContext};
use crate::CliError;

pub fn simulate(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let space = cfg.state_space()?;
    let mu0 = cfg.initial_measure();
    let init = ParticleConfig::from_measure(&space, sim.n, &mu0);

    let mr = if cfg.is_periodic_family() {
        let gamma = sim.gamma.ok_or_else(|| {
            CliError::Validation("periodic kernels need simulation.gamma".into())
        })?;
        let tk = cfg.periodic_kernel()?;
        MicroRates::from_time_kernel(&tk, sim.n, gamma, sim.rate_bound)
            .map_err(CliError::from_core)?
    } else {
        let kernel = cfg.homogeneous_kernel()?;
        MicroRates::from_kernel(&kernel, sim.n, sim.rate_bound).map_err(CliError::from_core)?
    };

    let ps = run_path(&mr, &space, &init, sim.t_end, sim.seed).map_err(CliError::from_core)?;
    let grid = uniform_grid(sim.t_end, sim.sample_points.unwrap_or(101));
    let traj = empirical_trajectory(&ps, &grid).map_err(CliError::from_core)?;

    ctx.write_csv("events.csv", sim.seed, |out| {
        write_path_sample_csv(out, &ps, &[])
    })?;
    ctx.write_csv("trajectory.csv", sim.seed, |out| {
        write_trajectory_csv(out, &space, &traj, &[])
    })?;
    ctx.summarize(&format!(
        "n={} t_end={} events={} seed={}",
        sim.n,
        sim.t_end,
        ps.events.len(),
        sim.seed
    ));
    Ok(())
}

pub fn lln(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let exp = cfg.experiment_section()?;
    let n_list = exp
        .n_list
        .clone()
        .ok_or_else(|| CliError::Validation("lln needs experiment.n_list".into()))?;
    let kernel = cfg.homogeneous_kernel()?;
    let mu0 = cfg.initial_measure();
    let replicas = sim.replicas.unwrap_or(16);
    let report = lln_gap(
        &kernel,
        sim.rate_bound,
        &mu0,
        sim.t_end,
        &n_list,
        replicas,
        sim.seed,
        sim.sample_points.unwrap_or(101),
        sim.dt.unwrap_or(1e-3),
    )
    .map_err(CliError::from_core)?;

    ctx.write_csv("lln.csv", sim.seed, |out| {
        writeln!(out, "n,gap_measure,gap_flux")?;
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{}",
                row.n,
                fmt(row.gap_measure),
                fmt(row.gap_flux)
            )?;
        }
        Ok(())
    })?;
    ctx.write_json("lln.json", sim.seed, &report)?;
    let last = report.rows.last().unwrap();
    ctx.summarize(&format!(
        "n_list={n_list:?} replicas={replicas} final_gap_measure={:.3e}",
        last.gap_measure
    ));
    Ok(())
}

pub fn kernel_check(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let kernel = cfg.homogeneous_kernel()?;
    let samples = cfg.kernel.check_samples.unwrap_or(1000);
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let report = proper_kernel_check(&kernel, samples, seed);
    ctx.write_json("kernel_check.json", seed, &report)?;
    ctx.summarize(&format!(
        "family={} samples={samples} {} ({} violations)",
        cfg.kernel.family,
        if report.pass { "pass" } else { "fail" },
        report.violations.len()
    ));
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "kernel check failed with {} violations (see kernel_check.json)",
            report.violations.len()
        )))
    }
}
