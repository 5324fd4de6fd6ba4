//! `ldp-verify`, `periodic-verify`, and `containment-check`.

use std::io::Write;

use fluxldp_core::experiments::{
    flux_containment_check, ldp_decay_fit, mc_tube_probability, periodic_averaging_experiment,
    tilted_flow, TubeEvent, TubeProbability,
};
use fluxldp_core::sim::{resample, uniform_grid, MicroRates, ParticleConfig};

use super::{fmt, RunContext};
use crate::CliError;

/// Per-n seeds decorrelate the ladder while staying reproducible.
fn seed_for_n(master: u64, n: usize) -> u64 {
    master ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn ldp_verify(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let exp = cfg.experiment_section()?;
    let kernel = cfg.homogeneous_kernel()?;
    let space = cfg.state_space()?;
    let mu0 = cfg.initial_measure();

    let n_list = exp
        .n_list
        .clone()
        .ok_or_else(|| CliError::Validation("ldp-verify needs experiment.n_list".into()))?;
    let radius = exp
        .tube_radius
        .ok_or_else(|| CliError::Validation("ldp-verify needs experiment.tube_radius".into()))?;
    let tilt = exp.flux_tilt.clone().unwrap_or_else(|| vec![2.0; space.n_edges()]);
    if tilt.len() != space.n_edges() {
        return Err(CliError::Validation(format!(
            "experiment.flux_tilt has {} entries for {} edges",
            tilt.len(),
            space.n_edges()
        )));
    }
    let replicas_scale = exp.replicas_scale.unwrap_or(1_000_000);
    let replicas_cap = exp.replicas_cap.unwrap_or(20_000);

    // Tube around the tilted flow, sampled on the membership grid
    // (grid step <= 0.01 t_end by default).
    let reference = tilted_flow(&kernel, &mu0, &tilt, sim.t_end, sim.dt.unwrap_or(1e-3))
        .map_err(CliError::from_core)?;
    let grid = uniform_grid(sim.t_end, sim.sample_points.unwrap_or(101));
    let reference = resample(&reference, &grid);
    let tube = TubeEvent::new(reference, radius, exp.tube_flux_radius)
        .map_err(CliError::from_core)?;

    let mut estimates: Vec<TubeProbability> = Vec::with_capacity(n_list.len());
    for &n in &n_list {
        let mr =
            MicroRates::from_kernel(&kernel, n, sim.rate_bound).map_err(CliError::from_core)?;
        let init = ParticleConfig::from_measure(&space, n, &mu0);
        let replicas = (replicas_scale / n).clamp(100, replicas_cap);
        let est = mc_tube_probability(&mr, &space, &init, &tube, replicas, seed_for_n(sim.seed, n))
            .map_err(CliError::from_core)?;
        estimates.push(est);
    }

    let report = ldp_decay_fit(
        &estimates,
        &tube,
        &kernel,
        exp.descent_iterations.unwrap_or(200),
    )
    .map_err(CliError::from_core)?;

    ctx.write_csv("ldp_decay.csv", sim.seed, |out| {
        writeln!(out, "n,replicas,hits,p_hat,stderr,decay_estimate,decay_stderr")?;
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.n,
                estimates.iter().find(|e| e.n == row.n).map_or(0, |e| e.replicas),
                estimates.iter().find(|e| e.n == row.n).map_or(0, |e| e.hits),
                fmt(row.p_hat),
                fmt(row.stderr),
                row.decay_estimate.map_or("".into(), fmt),
                row.decay_stderr.map_or("".into(), fmt),
            )?;
        }
        writeln!(out, "# candidate_action={}", fmt(report.candidate_action))?;
        Ok(())
    })?;
    ctx.write_json("ldp_decay.json", sim.seed, &report)?;
    ctx.summarize(&format!(
        "n_list={n_list:?} candidate_action={:.4e} relative_gap={:?}",
        report.candidate_action, report.relative_gap
    ));
    Ok(())
}

pub fn periodic_verify(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let exp = cfg.experiment_section()?;
    let tk = cfg.periodic_kernel()?;
    let mu0 = cfg.initial_measure();
    let gamma_list = exp
        .gamma_list
        .clone()
        .unwrap_or_else(|| vec![10.0, 100.0, 1000.0]);
    let replicas = sim.replicas.unwrap_or(4);

    let report = periodic_averaging_experiment(
        &tk,
        &gamma_list,
        sim.n,
        &mu0,
        sim.t_end,
        sim.rate_bound,
        replicas,
        cfg.quad_points(),
        sim.seed,
    )
    .map_err(CliError::from_core)?;

    ctx.write_csv("periodic.csv", sim.seed, |out| {
        writeln!(out, "gamma,dist_measure,dist_flux,defect_sup")?;
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{},{}",
                fmt(row.gamma),
                fmt(row.dist_measure),
                fmt(row.dist_flux),
                fmt(row.defect_sup)
            )?;
        }
        Ok(())
    })?;
    ctx.write_json("periodic.json", sim.seed, &report)?;
    let first = report.rows.first().unwrap();
    let last = report.rows.last().unwrap();
    ctx.summarize(&format!(
        "n={} gammas={gamma_list:?} dist {:.3e}->{:.3e} defect {:.3e}->{:.3e}",
        sim.n, first.dist_flux, last.dist_flux, first.defect_sup, last.defect_sup
    ));
    Ok(())
}

pub fn containment_check(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let exp = cfg.experiment_section()?;
    let kernel = cfg.homogeneous_kernel()?;
    let mu0 = cfg.initial_measure();
    let n_list = exp.n_list.clone().ok_or_else(|| {
        CliError::Validation("containment-check needs experiment.n_list".into())
    })?;
    let cap = exp
        .flux_cap
        .ok_or_else(|| CliError::Validation("containment-check needs experiment.flux_cap".into()))?;
    let replicas = sim.replicas.unwrap_or(10_000);

    let report = flux_containment_check(
        &kernel,
        sim.rate_bound,
        &mu0,
        sim.t_end,
        &n_list,
        replicas,
        cap,
        sim.seed,
    )
    .map_err(CliError::from_core)?;

    ctx.write_csv("containment.csv", sim.seed, |out| {
        writeln!(out, "n,exceedances,replicas,frequency,stderr,log_frequency")?;
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.n,
                row.exceedances,
                row.replicas,
                fmt(row.frequency),
                fmt(row.stderr),
                row.log_frequency.map_or("".into(), fmt)
            )?;
        }
        Ok(())
    })?;
    ctx.write_json("containment.json", sim.seed, &report)?;
    let freqs: Vec<f64> = report.rows.iter().map(|r| r.frequency).collect();
    ctx.summarize(&format!("cap={cap} n_list={n_list:?} frequencies={freqs:?}"));
    Ok(())
}
