//! `hj-solve`, `hj-doubling`, and `hj-convergence`.

use std::io::Write;
use std::sync::Arc;

use fluxldp_core::hj::{
    doubling_diagnostic, hj_residual, lifted_hamiltonian, resolvent_solve, ControlCatalog,
    Grid, GridFunction, PenaltyParams, QuadraticForm, ResolventParams, TestFunction,
};
use fluxldp_core::rate::hamiltonian;
use fluxldp_core::sim::{MicroRates, ParticleConfig};
use fluxldp_core::space::{FluxVector, Momentum, Point};

use super::{fmt, RunContext};
use crate::config::parse_h_spec;
use crate::CliError;

fn build_grid(ctx: &RunContext, m: usize) -> Result<Arc<Grid>, CliError> {
    let grid_cfg = ctx.config.grid_section()?;
    let space = ctx.config.state_space()?;
    Grid::new(space, m, grid_cfg.w_max, grid_cfg.h_w).map_err(CliError::from_core)
}

fn solve_on(
    ctx: &RunContext,
    m: usize,
    lambda: f64,
    h_spec: &str,
    scales: &[f64],
) -> Result<(Arc<Grid>, GridFunction, GridFunction), CliError> {
    let hj = ctx.config.hj_section()?;
    let grid = build_grid(ctx, m)?;
    let space = ctx.config.state_space()?;
    let h_fn = parse_h_spec(h_spec, &space)?;
    let h = GridFunction::from_fn(grid.clone(), |p| h_fn(p)).map_err(CliError::from_core)?;
    let kernel = ctx.config.homogeneous_kernel()?;
    let catalog =
        ControlCatalog::edgewise(scales, space.n_edges()).map_err(CliError::from_core)?;
    let params = ResolventParams::new(
        lambda,
        hj.dt,
        hj.tol,
        hj.max_iters.unwrap_or(200_000),
    )
    .map_err(CliError::from_core)?;
    let f = resolvent_solve(&h, &kernel, &catalog, params).map_err(CliError::from_core)?;
    Ok((grid, f, h))
}

pub fn solve(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let hj = cfg.hj_section()?;
    let grid_cfg = cfg.grid_section()?;
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let kernel = cfg.homogeneous_kernel()?;
    let space = cfg.state_space()?;

    let (grid, f, _h) = solve_on(ctx, grid_cfg.m, hj.lambda, &hj.h, &hj.catalog)?;

    ctx.write_csv("hj_solution.csv", seed, |out| {
        let mut header = vec!["node".to_string()];
        for a in 1..=space.q() {
            header.push(format!("mu_{a}"));
        }
        for &(a, b) in space.edges() {
            header.push(format!("w_{}_{}", a + 1, b + 1));
        }
        header.push("value".to_string());
        writeln!(out, "{}", header.join(","))?;
        for node in 0..grid.node_count() {
            let p = grid.point(node);
            let mut row = vec![node.to_string()];
            row.extend(p.measure.as_slice().iter().map(|&x| fmt(x)));
            row.extend(p.flux.as_slice().iter().map(|&x| fmt(x)));
            row.push(fmt(f.values()[node]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    })?;

    // Residual decay table over a resolution ladder ending at m.
    let ladder: Vec<usize> = [grid_cfg.m / 4, grid_cfg.m / 2, grid_cfg.m]
        .iter()
        .copied()
        .filter(|&m| m >= 2)
        .collect();
    let mut residual_rows = Vec::new();
    for &m in &ladder {
        let (_, f_m, h_m) = solve_on(ctx, m, hj.lambda, &hj.h, &hj.catalog)?;
        let stats = hj_residual(&f_m, &h_m, hj.lambda, &kernel).map_err(CliError::from_core)?;
        residual_rows.push((m, stats));
    }
    ctx.write_csv("hj_residuals.csv", seed, |out| {
        writeln!(
            out,
            "m,interior_nodes,max_abs,mean_abs,all_nodes,all_max_abs,all_mean_abs"
        )?;
        for (m, stats) in &residual_rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m,
                stats.interior_nodes,
                fmt(stats.max_abs),
                fmt(stats.mean_abs),
                stats.all_nodes,
                fmt(stats.all_max_abs),
                fmt(stats.all_mean_abs)
            )?;
        }
        Ok(())
    })?;

    let final_stats = &residual_rows.last().unwrap().1;
    ctx.summarize(&format!(
        "m={} lambda={} nodes={} sup|f|={:.4} interior_residual_mean={:.3e}",
        grid_cfg.m,
        hj.lambda,
        grid.node_count(),
        f.sup_norm(),
        final_stats.mean_abs
    ));
    Ok(())
}

pub fn doubling(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let hj = cfg.hj_section()?;
    let pen = cfg.penalty_section()?;
    let grid_cfg = cfg.grid_section()?;
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let kernel = cfg.homogeneous_kernel()?;

    let catalog_b: Vec<f64> = hj.catalog_b.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]);
    let (_, u, _) = solve_on(ctx, grid_cfg.m, hj.lambda, &hj.h, &hj.catalog)?;
    let (_, v, _) = solve_on(ctx, grid_cfg.m, hj.lambda, &hj.h, &catalog_b)?;

    let epsilons = pen
        .epsilon_ladder
        .clone()
        .unwrap_or_else(|| vec![pen.epsilon]);
    let mut reports = Vec::with_capacity(epsilons.len());
    for &epsilon in &epsilons {
        let params = PenaltyParams::new(
            pen.alpha1_ladder.first().copied().unwrap_or(10.0),
            pen.alpha2,
            epsilon,
        )
        .map_err(CliError::from_core)?;
        let report = doubling_diagnostic(&u, &v, &kernel, &params, &pen.alpha1_ladder)
            .map_err(CliError::from_core)?;
        reports.push(report);
    }
    ctx.write_json("hj_doubling.json", seed, &reports)?;
    ctx.write_csv("hj_doubling.csv", seed, |out| {
        writeln!(
            out,
            "epsilon,alpha1,psi1,psi2,alpha1_psi1,alpha2_psi2,hamiltonian_gap,phi_max,x_node,y_node"
        )?;
        for report in &reports {
            for row in &report.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    fmt(report.epsilon),
                    fmt(row.alpha1),
                    fmt(row.psi1),
                    fmt(row.psi2),
                    fmt(row.alpha1_psi1),
                    fmt(row.alpha2_psi2),
                    fmt(row.hamiltonian_gap),
                    fmt(row.phi_max),
                    row.x_node,
                    row.y_node
                )?;
            }
        }
        Ok(())
    })?;
    let last = reports.last().unwrap().rows.last().unwrap();
    ctx.summarize(&format!(
        "ladder={:?} epsilons={epsilons:?} final_alpha1_psi1={:.3e} final_gap={:.3e}",
        pen.alpha1_ladder, last.alpha1_psi1, last.hamiltonian_gap
    ));
    Ok(())
}

/// Built-in quadratic test function of the convergence experiment.
fn convergence_test_function(q: usize, n_edges: usize) -> QuadraticForm {
    QuadraticForm {
        linear_measure: (0..q).map(|a| 0.4 - 0.15 * a as f64).collect(),
        linear_flux: (0..n_edges).map(|e| 0.2 - 0.05 * e as f64).collect(),
        quad_measure: (0..q).map(|a| 1.0 - 0.3 * a as f64).collect(),
        quad_flux: (0..n_edges).map(|e| 0.8 - 0.1 * e as f64).collect(),
    }
}

#[derive(serde::Serialize)]
struct ConvergenceReport {
    rows: Vec<ConvergenceRow>,
    decade_ratios: Vec<f64>,
}

#[derive(serde::Serialize)]
struct ConvergenceRow {
    n: usize,
    lifted: f64,
    limit: f64,
    error: f64,
}

pub fn convergence(ctx: &RunContext) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sim = cfg.simulation()?;
    let n_list = cfg
        .experiment
        .as_ref()
        .and_then(|e| e.n_list.clone())
        .unwrap_or_else(|| vec![100, 1000, 10_000]);
    let kernel = cfg.homogeneous_kernel()?;
    let space = cfg.state_space()?;
    let mu0 = cfg.initial_measure();
    let f = convergence_test_function(space.q(), space.n_edges());

    let mut rows = Vec::with_capacity(n_list.len());
    for &n in &n_list {
        let mr =
            MicroRates::from_kernel(&kernel, n, sim.rate_bound).map_err(CliError::from_core)?;
        let init = ParticleConfig::from_measure(&space, n, &mu0);
        // Flux counters at one quarter of n per edge.
        let flux: Vec<u64> = (0..space.n_edges()).map(|_| (n as f64 * 0.25) as u64).collect();
        let lifted = lifted_hamiltonian(&f, &mr, &space, &init.states, &flux, 0.0)
            .map_err(CliError::from_core)?;
        // Limit operator evaluated at the embedded point, so the error
        // isolates the operator gap rather than the embedding gap.
        let embedded_mu = init.empirical_measure(space.q());
        let embedded_w = FluxVector::new(
            flux.iter().map(|&c| c as f64 / n as f64).collect(),
        )
        .map_err(CliError::from_core)?;
        let x = Point::new(embedded_mu, embedded_w);
        let (p_state, p_flux) = f.gradient(&x).expect("quadratic gradient");
        let limit = hamiltonian(
            &x,
            &Momentum::new(p_state, p_flux).map_err(CliError::from_core)?,
            &kernel,
        );
        rows.push(ConvergenceRow {
            n,
            lifted,
            limit,
            error: (lifted - limit).abs(),
        });
    }
    let decade_ratios: Vec<f64> = rows
        .windows(2)
        .map(|pair| pair[0].error / pair[1].error)
        .collect();

    ctx.write_csv("hn_convergence.csv", sim.seed, |out| {
        writeln!(out, "n,lifted,limit,error")?;
        for row in &rows {
            writeln!(
                out,
                "{},{},{},{}",
                row.n,
                fmt(row.lifted),
                fmt(row.limit),
                fmt(row.error)
            )?;
        }
        Ok(())
    })?;
    let report = ConvergenceReport {
        rows,
        decade_ratios: decade_ratios.clone(),
    };
    ctx.write_json("hn_convergence.json", sim.seed, &report)?;
    ctx.summarize(&format!("n_list={n_list:?} decade_ratios={decade_ratios:?}"));
    Ok(())
}

