//! The solve → estimate → mark → refine loop with configurable stopping
//! rules, warm-started nonlinear solves, and a complete per-iteration trace.

use crate::assembly::{assemble_blocks, assemble_rhs};
use crate::assembly::FeSpace;
use crate::estimator::{dorfler_mark, elliptic_projection, estimate};
use crate::mesh::{refine, Mesh};
use crate::problem::{C64, Field, Norms, norms_against_exact, ProblemSpec};
use crate::solver::{newton_solve, prolongate, NonlinearOptions, NonlinearReport, Solution};
use crate::{Error, Result};
use std::time::Instant;

/// Quadrature degree for true-error norms against an exact field.
const NORM_QUAD_DEGREE: usize = 6;

/// When the loop ends on its own.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// stop once η_𝒯 < ρ · η_{𝒯₀}
    EstimatorFactor(f64),
    /// stop once the mesh has at least this many elements
    MaxElements(usize),
    /// stop after exactly this many refinements (n + 1 solves)
    Iterations(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptConfig {
    /// Dörfler marking fraction θ_D
    pub theta_d: f64,
    /// bisections per marked element
    pub bisections: u32,
    /// hard bound on the number of solves, whatever the stop rule says
    pub max_iterations: usize,
    pub stop_rule: StopRule,
    pub nonlinear: NonlinearOptions,
    /// refuse to assemble systems beyond this many complex unknowns
    pub max_dofs: usize,
    /// also record ‖u − P_h u‖₁ per row (needs an exact field; one extra
    /// SPD solve per mesh)
    pub with_projection: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            theta_d: 0.4,
            bisections: 1,
            max_iterations: 100,
            stop_rule: StopRule::Iterations(10),
            nonlinear: NonlinearOptions::default(),
            max_dofs: 2_000_000,
            with_projection: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EstimatorFactor,
    MaxElements,
    Iterations,
    /// ran into the max_iterations safety bound
    IterationBudget,
    /// next mesh would exceed the dof cap
    DofCap,
    /// η_𝒯 = 0, nothing left to mark
    EstimatorZero,
    /// loop aborted; see the error this trace travels with
    SolverFailure,
}

/// One completed solve + estimate on one mesh.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub n_elements: usize,
    pub n_dofs: usize,
    /// η_𝒯, neighbor-augmented
    pub eta: f64,
    /// standard residual estimator total, for the equivalence tables
    pub eta_std: f64,
    pub osc: f64,
    /// elements marked for refinement after this solve (0 on the last row)
    pub n_marked: usize,
    pub newton: NonlinearReport,
    /// true errors, present when an exact field was supplied
    pub norms: Option<Norms>,
    /// ‖u − P_h u‖₁ of the elliptic projection, when requested
    pub proj_h1_err: Option<f64>,
    pub wall_seconds: f64,
}

/// Full audit trail of one loop run. `last` is absent only when the loop
/// stopped before its first solve (dof cap on the initial mesh).
#[derive(Clone, Debug)]
pub struct AdaptTrace {
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
    pub last: Option<LastState>,
}

#[derive(Clone, Debug)]
pub struct LastState {
    pub mesh: Mesh,
    pub solution: Solution,
}

impl AdaptTrace {
    /// (n_elements, value) pairs of a row field, for rate fits.
    pub fn series<F: Fn(&TraceRow) -> Option<f64>>(&self, f: F) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| f(r).map(|v| (r.n_elements as f64, v)))
            .collect()
    }
}

/// Adaptive loop: Dörfler marking with the neighbor-augmented estimator.
/// When `exact` is given every row carries true errors. Solver failure is
/// propagated with the partial trace attached.
pub fn adapt_loop(
    problem: &ProblemSpec,
    mesh0: &Mesh,
    config: &AdaptConfig,
    exact: Option<&Field>,
) -> Result<AdaptTrace> {
    run_loop(problem, mesh0, config, exact, false, None)
}

/// [`adapt_loop`] with an initial guess for the first solve. The seed must
/// live on `mesh0`; branch tracking across a parameter sweep hands the
/// solution at the previous parameter value in here.
pub fn adapt_loop_seeded(
    problem: &ProblemSpec,
    mesh0: &Mesh,
    config: &AdaptConfig,
    exact: Option<&Field>,
    seed: Option<&Solution>,
) -> Result<AdaptTrace> {
    if let Some(s) = seed {
        if s.mesh_id != mesh0.id() {
            return Err(Error::InvalidParam(format!(
                "seed solution lives on mesh {}, loop starts on mesh {}",
                s.mesh_id,
                mesh0.id()
            )));
        }
    }
    run_loop(problem, mesh0, config, exact, false, seed)
}

/// Same pipeline with every element marked: uniform refinement reference.
pub fn uniform_loop(
    problem: &ProblemSpec,
    mesh0: &Mesh,
    config: &AdaptConfig,
    exact: Option<&Field>,
) -> Result<AdaptTrace> {
    run_loop(problem, mesh0, config, exact, true, None)
}

fn run_loop(
    problem: &ProblemSpec,
    mesh0: &Mesh,
    config: &AdaptConfig,
    exact: Option<&Field>,
    uniform: bool,
    seed: Option<&Solution>,
) -> Result<AdaptTrace> {
    if !(config.theta_d > 0.0 && config.theta_d <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "marking fraction must lie in (0, 1], got {}",
            config.theta_d
        )));
    }
    if config.bisections < 1 {
        return Err(Error::InvalidParam("bisections per element must be >= 1".into()));
    }

    let mut trace = AdaptTrace { rows: Vec::new(), stop: StopReason::IterationBudget, last: None };
    let mut mesh = mesh0.clone();
    let mut warm: Option<Solution> = seed.cloned();
    let mut eta0 = 0.0;

    let fail = |trace: AdaptTrace, it: usize, source: Error| -> Result<AdaptTrace> {
        let mut partial = trace;
        partial.stop = StopReason::SolverFailure;
        Err(Error::Loop { at: it, source: Box::new(source), partial: Box::new(partial) })
    };

    for it in 0..config.max_iterations.max(1) {
        let started = Instant::now();
        let space = FeSpace::new(&mesh);
        if space.n_dofs() > config.max_dofs {
            trace.stop = StopReason::DofCap;
            return Ok(trace);
        }

        let blocks = assemble_blocks(&mesh, &space, problem);
        let rhs = assemble_rhs(&mesh, &space, problem);
        let warm_dofs: Option<Vec<C64>> = match &warm {
            None => None,
            // an entry seed already lives on this mesh; later iterations lift
            // the previous solution through the refinement
            Some(prev) if prev.mesh_id == mesh.id() => Some(space.restrict(&prev.values)),
            Some(prev) => {
                let lifted = prolongate(prev, &mesh)?;
                Some(space.restrict(&lifted.values))
            }
        };
        let solved = newton_solve(
            &mesh,
            &space,
            &blocks,
            problem,
            &rhs,
            warm_dofs.as_deref(),
            &config.nonlinear,
        );
        let (solution, report) = match solved {
            Ok(pair) => pair,
            Err(e) => return fail(trace, it, e),
        };
        if !report.converged {
            let mut partial = trace;
            partial.rows.push(TraceRow {
                iteration: it,
                n_elements: mesh.n_tris(),
                n_dofs: space.n_dofs(),
                eta: f64::NAN,
                eta_std: f64::NAN,
                osc: f64::NAN,
                n_marked: 0,
                newton: report.clone(),
                norms: None,
                proj_h1_err: None,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            return fail(
                partial,
                it,
                Error::NoConvergence(format!(
                    "nonlinear iteration stalled after {} steps (last increment {:.3e})",
                    report.iterations,
                    report.rel_increments.last().copied().unwrap_or(f64::NAN)
                )),
            );
        }

        let est = estimate(&mesh, problem, &solution.values);
        if it == 0 {
            eta0 = est.eta_total;
        } else if let Some(prev) = trace.rows.last() {
            if it >= 2 && est.eta_total > prev.eta {
                log::info!(
                    "estimator increased at iteration {it}: {:.4e} -> {:.4e}",
                    prev.eta,
                    est.eta_total
                );
            }
        }
        let norms = exact.map(|ex| {
            norms_against_exact(&mesh, &solution.values, ex, problem, NORM_QUAD_DEGREE)
        });
        let proj_h1_err = match (config.with_projection, exact) {
            (true, Some(ex)) => {
                let k_hint = problem.k_out.max(problem.k_in);
                match elliptic_projection(&mesh, &space, ex, k_hint) {
                    Ok(proj) => Some(
                        norms_against_exact(&mesh, &proj.values, ex, problem, NORM_QUAD_DEGREE)
                            .h1_err,
                    ),
                    Err(e) => return fail(trace, it, e),
                }
            }
            _ => None,
        };

        let mut row = TraceRow {
            iteration: it,
            n_elements: mesh.n_tris(),
            n_dofs: space.n_dofs(),
            eta: est.eta_total,
            eta_std: est.eta_std_total,
            osc: est.osc_total,
            n_marked: 0,
            newton: report,
            norms,
            proj_h1_err,
            wall_seconds: 0.0,
        };

        let stop = match config.stop_rule {
            StopRule::Iterations(n) => (it >= n).then_some(StopReason::Iterations),
            StopRule::EstimatorFactor(rho) => {
                (it > 0 && est.eta_total < rho * eta0).then_some(StopReason::EstimatorFactor)
            }
            StopRule::MaxElements(n) => {
                (mesh.n_tris() >= n).then_some(StopReason::MaxElements)
            }
        }
        .or_else(|| (it + 1 >= config.max_iterations).then_some(StopReason::IterationBudget));

        if let Some(reason) = stop {
            row.wall_seconds = started.elapsed().as_secs_f64();
            trace.rows.push(row);
            trace.stop = reason;
            trace.last = Some(LastState { mesh, solution });
            return Ok(trace);
        }

        let marked: Vec<usize> = if uniform {
            (0..mesh.n_tris()).collect()
        } else {
            dorfler_mark(&est, config.theta_d)?
        };
        if marked.is_empty() {
            row.wall_seconds = started.elapsed().as_secs_f64();
            trace.rows.push(row);
            trace.stop = StopReason::EstimatorZero;
            trace.last = Some(LastState { mesh, solution });
            return Ok(trace);
        }

        let refined = refine(&mesh, &marked, config.bisections)?;
        row.n_marked = marked.len();
        row.wall_seconds = started.elapsed().as_secs_f64();
        trace.rows.push(row);
        trace.last = Some(LastState { mesh: mesh.clone(), solution: solution.clone() });
        warm = Some(solution);
        mesh = refined;
    }
    unreachable!("loop returns at the iteration budget");
}

/// Least-squares slope of log(y) against log(x). Used for convergence-rate
/// fits of error or estimator series against element counts.
pub fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need at least two points for a slope");
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::hexagon_mesh;
    use crate::problem::bistability_problem;
    use std::sync::Arc;

    fn linear_problem(k: f64) -> (ProblemSpec, Field) {
        // manufactured: u = sin(x)·cos(y) (real), −Δu = 2u, so f = (2 − k²)u
        let value = |p: crate::geom::Point| C64::new(p.x.sin() * p.y.cos(), 0.0);
        let grad = |p: crate::geom::Point| {
            (
                C64::new(p.x.cos() * p.y.cos(), 0.0),
                C64::new(-p.x.sin() * p.y.sin(), 0.0),
            )
        };
        let problem = ProblemSpec {
            name: "linear".into(),
            k_out: k,
            k_in: k,
            eps: 0.0,
            f: Arc::new(move |p| (2.0 - k * k) * value(p)),
            g: Arc::new(move |p, n| {
                let (gx, gy) = grad(p);
                gx * n.x + gy * n.y + C64::new(0.0, k) * value(p)
            }),
        };
        (problem, Field { value: Arc::new(value), grad: Arc::new(grad) })
    }

    #[test]
    fn zero_refinements_means_one_solve() {
        let (problem, exact) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(0), ..Default::default() };
        let trace = adapt_loop(&problem, &mesh0, &config, Some(&exact)).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].n_marked, 0);
        assert_eq!(trace.stop, StopReason::Iterations);
        assert_eq!(trace.last.as_ref().unwrap().mesh.n_tris(), mesh0.n_tris());
        assert!(trace.rows[0].norms.unwrap().h1_rel > 0.0);
    }

    #[test]
    fn element_counts_increase_and_errors_shrink() {
        let (problem, exact) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(28), ..Default::default() };
        let trace = adapt_loop(&problem, &mesh0, &config, Some(&exact)).unwrap();
        assert_eq!(trace.rows.len(), 29);
        for w in trace.rows.windows(2) {
            assert!(w[1].n_elements > w[0].n_elements);
        }
        let first = trace.rows.first().unwrap().norms.unwrap().h1_rel;
        let last = trace.rows.last().unwrap().norms.unwrap().h1_rel;
        assert!(last < 0.25 * first, "{first} -> {last}");
        // smooth solution, adaptive P1: close to the optimal N^{-1/2} rate
        // once past the coarse preasymptotic wiggles
        let series = trace.series(|r| r.norms.map(|n| n.h1_rel));
        let slope = fit_log_slope(&series[series.len() - 14..]);
        assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
    }

    #[test]
    fn uniform_steps_multiply_elements_by_two_or_four() {
        let (problem, _) = linear_problem(1.5);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(3), ..Default::default() };
        let trace = uniform_loop(&problem, &mesh0, &config, None).unwrap();
        for w in trace.rows.windows(2) {
            let ratio = w[1].n_elements as f64 / w[0].n_elements as f64;
            assert!(ratio == 2.0 || ratio == 4.0, "ratio {ratio}");
        }
    }

    #[test]
    fn uniform_linear_run_matches_from_scratch_solve() {
        let (problem, _) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(3), ..Default::default() };
        let trace = uniform_loop(&problem, &mesh0, &config, None).unwrap();
        let last = trace.last.unwrap();
        // re-solve the final mesh cold; ε = 0 makes the problem linear
        let space = FeSpace::new(&last.mesh);
        let blocks = assemble_blocks(&last.mesh, &space, &problem);
        let rhs = assemble_rhs(&last.mesh, &space, &problem);
        let (fresh, _) = newton_solve(
            &last.mesh,
            &space,
            &blocks,
            &problem,
            &rhs,
            None,
            &config.nonlinear,
        )
        .unwrap();
        let scale: f64 = fresh.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fresh.values.iter().zip(&last.solution.values) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn estimator_factor_rule_stops_the_loop() {
        let (problem, _) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig {
            stop_rule: StopRule::EstimatorFactor(0.5),
            ..Default::default()
        };
        let trace = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        assert_eq!(trace.stop, StopReason::EstimatorFactor);
        let eta0 = trace.rows[0].eta;
        let eta_end = trace.rows.last().unwrap().eta;
        assert!(eta_end < 0.5 * eta0);
        // every earlier row was still above the threshold
        for row in &trace.rows[..trace.rows.len() - 1] {
            assert!(row.eta >= 0.5 * eta0 || row.iteration == 0);
        }
    }

    #[test]
    fn dof_cap_stops_before_assembly() {
        let (problem, _) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(4).unwrap();
        let config = AdaptConfig {
            stop_rule: StopRule::Iterations(50),
            max_dofs: 10,
            ..Default::default()
        };
        let trace = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        assert_eq!(trace.stop, StopReason::DofCap);
        assert!(trace.rows.is_empty());
        assert!(trace.last.is_none());
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let k0 = 4.0;
        let problem = bistability_problem(30.0, k0, 2.5, 1e-4);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(4), ..Default::default() };
        let a = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        let b = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.n_elements, rb.n_elements);
            assert_eq!(ra.n_dofs, rb.n_dofs);
            assert_eq!(ra.eta.to_bits(), rb.eta.to_bits());
            assert_eq!(ra.osc.to_bits(), rb.osc.to_bits());
            assert_eq!(ra.n_marked, rb.n_marked);
            assert_eq!(ra.newton.iterations, rb.newton.iterations);
        }
        let (sa, sb) = (&a.last.unwrap().solution, &b.last.unwrap().solution);
        for (va, vb) in sa.values.iter().zip(&sb.values) {
            assert_eq!(va.re.to_bits(), vb.re.to_bits());
            assert_eq!(va.im.to_bits(), vb.im.to_bits());
        }
    }

    #[test]
    fn warm_start_cuts_nonlinear_iterations() {
        // a visibly nonlinear configuration: later iterations should need
        // fewer Newton steps than the cold first solve
        let problem = bistability_problem(40.0, 4.0, 2.5, 1e-3);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(4), ..Default::default() };
        let trace = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        let first = trace.rows.first().unwrap().newton.iterations;
        let later: usize = trace.rows[1..].iter().map(|r| r.newton.iterations).max().unwrap();
        assert!(
            later <= first,
            "cold start took {first}, warmest later solve took {later}"
        );
        for row in &trace.rows {
            assert!(row.newton.converged);
        }
    }

    #[test]
    fn seeded_loop_skips_the_cold_start() {
        let problem = bistability_problem(40.0, 4.0, 2.5, 1e-3);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(0), ..Default::default() };
        let cold = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        let sol = cold.last.as_ref().unwrap().solution.clone();
        let seeded = adapt_loop_seeded(&problem, &mesh0, &config, None, Some(&sol)).unwrap();
        // starting from the converged solution, one check suffices
        assert!(seeded.rows[0].newton.iterations < cold.rows[0].newton.iterations);
        assert!(seeded.rows[0].newton.converged);
    }

    #[test]
    fn seed_on_wrong_mesh_is_rejected() {
        let (problem, _) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let other = hexagon_mesh(4).unwrap();
        let config = AdaptConfig::default();
        let trace = adapt_loop(&problem, &other, &config, None).unwrap();
        let sol = trace.last.unwrap().solution;
        let err = adapt_loop_seeded(&problem, &mesh0, &config, None, Some(&sol)).unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)), "{err}");
    }

    #[test]
    fn projection_error_bounds_the_galerkin_error_from_below() {
        let (problem, exact) = linear_problem(2.0);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig {
            stop_rule: StopRule::Iterations(3),
            with_projection: true,
            ..Default::default()
        };
        let trace = adapt_loop(&problem, &mesh0, &config, Some(&exact)).unwrap();
        for row in &trace.rows {
            let proj = row.proj_h1_err.unwrap();
            let h1 = row.norms.unwrap().h1_err;
            // P_h is the H1-orthogonal projection, the best fit in the space
            assert!(proj <= h1 * (1.0 + 1e-10), "{proj} vs {h1}");
            assert!(proj > 0.0);
        }
        let first = trace.rows.first().unwrap().proj_h1_err.unwrap();
        let last = trace.rows.last().unwrap().proj_h1_err.unwrap();
        assert!(last < first);
    }

    #[test]
    fn solver_failure_carries_partial_trace() {
        // strong Kerr nonlinearity with a one-step budget cannot converge
        let problem = bistability_problem(60.0, 4.0, 2.5, 1e-2);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig {
            stop_rule: StopRule::Iterations(8),
            nonlinear: NonlinearOptions { max_iter: 1, tol: 1e-14, ..Default::default() },
            ..Default::default()
        };
        let err = adapt_loop(&problem, &mesh0, &config, None).unwrap_err();
        match err {
            Error::Loop { at, partial, .. } => {
                assert_eq!(at, 0);
                assert_eq!(partial.stop, StopReason::SolverFailure);
                assert_eq!(partial.rows.len(), 1);
                assert!(!partial.rows[0].newton.converged);
            }
            other => panic!("expected loop failure, got {other}"),
        }
    }

    #[test]
    fn slope_fit_recovers_exact_power_law() {
        let pts: Vec<(f64, f64)> =
            (1..=6).map(|i| (10.0f64.powi(i), 3.0 * 10.0f64.powi(i).powf(-0.5))).collect();
        let slope = fit_log_slope(&pts);
        assert!((slope + 0.5).abs() < 1e-12);
    }
}
