//! `nlh bistability`: intensity sweeps of the hexagonal Kerr cavity.
//!
//! The branch chain lives on the base mesh: each scheduled intensity is
//! solved with the previous point as initial guess (up sweep ascending,
//! down sweep descending from the top), halving the intensity step on
//! non-convergence near the folds. Every chain point then seeds its own
//! adaptive run, and the reported energy is the adapted one. The middle
//! branch is seeded at one intensity with the average of the up and down
//! chain solutions and extended outward until it merges or the solver
//! fails.

use crate::manifest::RunDir;
use crate::{numerical, usage, Failure};
use nlhfem::adaptive::{adapt_loop_seeded, AdaptConfig, AdaptTrace, StopRule};
use nlhfem::assembly::{assemble_blocks, assemble_rhs, FeSpace, FormBlocks, Scheme};
use nlhfem::config::{default_gamma, Config, DEFAULT_BISECTIONS, DEFAULT_THETA_D};
use nlhfem::io;
use nlhfem::mesh::Mesh;
use nlhfem::mesh::hexagon_mesh;
use nlhfem::problem::{
    bistability_incident, bistability_problem, norms_against_exact, C64, ProblemSpec,
};
use nlhfem::solver::{
    continuation_step, energy_norm_nodal, newton_solve, NonlinearOptions, Solution,
};
use std::fmt::Write as _;
use std::path::Path;

const ALLOWED: &[(&str, &[&str])] = &[
    ("problem", &["k0", "contrast", "eps", "I0"]),
    ("mesh", &["m"]),
    ("sweep", &["I_list", "I_max", "n_points", "mid_I"]),
    ("adapt", &["theta_D", "b", "stop_factor", "max_adapt", "max_dofs"]),
    ("newton", &["scheme", "tol_newton", "max_newton"]),
    ("cip", &["gamma_re", "gamma_im"]),
];

/// Step halvings allowed while advancing a branch past a stiff spot.
const MAX_HALVINGS: usize = 5;
/// A continued solution this close (relatively) to an existing branch is
/// treated as merged into it.
const MERGE_REL: f64 = 0.01;
/// Adjacent sweep energies differing by more than this fraction count as a
/// branch jump.
const JUMP_REL: f64 = 0.5;

struct Settings {
    k0: f64,
    contrast: f64,
    eps: f64,
    i0: f64,
    m: usize,
    schedule: Vec<f64>,
    mid_i: f64,
    theta_d: f64,
    bisections: u32,
    stop_factor: f64,
    max_adapt: usize,
    max_dofs: usize,
    nonlinear: NonlinearOptions,
}

fn parse_settings(config: &Config) -> Result<Settings, Failure> {
    let as_usage = |e: nlhfem::Error| usage(e.to_string());
    let k0 = config.f64_or("problem", "k0", 9.6).map_err(as_usage)?;
    let contrast = config.f64_or("problem", "contrast", 2.5).map_err(as_usage)?;
    let eps = config.f64_or("problem", "eps", 1e-12).map_err(as_usage)?;
    let i0 = config.f64_or("problem", "I0", 1e5).map_err(as_usage)?;
    let m = config.usize_or("mesh", "m", 20).map_err(as_usage)?;

    let schedule: Vec<f64> = match config.f64_list("sweep", "I_list").map_err(as_usage)? {
        Some(list) => list,
        None => {
            let i_max = config.f64_or("sweep", "I_max", 450_000.0).map_err(as_usage)?;
            let n = config.usize_or("sweep", "n_points", 20).map_err(as_usage)?;
            if n == 0 {
                return Err(usage("n_points must be at least 1"));
            }
            if !(i_max > 0.0) {
                return Err(usage(format!("I_max must be positive, got {i_max}")));
            }
            (0..n).map(|j| i_max * j as f64 / (n - 1).max(1) as f64).collect()
        }
    };
    if schedule.is_empty() {
        return Err(usage("intensity schedule is empty"));
    }
    for w in schedule.windows(2) {
        if !(w[1] > w[0]) {
            return Err(usage(format!(
                "intensity schedule must increase strictly, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !schedule.iter().all(|i| i.is_finite() && *i >= 0.0) {
        return Err(usage("intensities must be finite and nonnegative"));
    }
    let top = *schedule.last().expect("nonempty");
    // anchor of the middle branch, scaled from its full-intensity location
    let mid_i = config.f64_or("sweep", "mid_I", 0.54 * top).map_err(as_usage)?;

    let gamma_default = default_gamma();
    Ok(Settings {
        k0,
        contrast,
        eps,
        i0,
        m,
        schedule,
        mid_i,
        theta_d: config.f64_or("adapt", "theta_D", DEFAULT_THETA_D).map_err(as_usage)?,
        bisections: config.u32_or("adapt", "b", DEFAULT_BISECTIONS).map_err(as_usage)?,
        stop_factor: config.f64_or("adapt", "stop_factor", 0.5).map_err(as_usage)?,
        max_adapt: config.usize_or("adapt", "max_adapt", 10).map_err(as_usage)?,
        max_dofs: config.usize_or("adapt", "max_dofs", 2_000_000).map_err(as_usage)?,
        nonlinear: NonlinearOptions {
            scheme: config
                .str_or("newton", "scheme", "newton")
                .parse::<Scheme>()
                .map_err(as_usage)?,
            gamma: C64::new(
                config.f64_or("cip", "gamma_re", gamma_default.re).map_err(as_usage)?,
                config.f64_or("cip", "gamma_im", gamma_default.im).map_err(as_usage)?,
            ),
            tol: config.f64_or("newton", "tol_newton", 1e-9).map_err(as_usage)?,
            max_iter: config.usize_or("newton", "max_newton", 30).map_err(as_usage)?,
        },
    })
}

impl Settings {
    fn problem_at(&self, intensity: f64) -> ProblemSpec {
        bistability_problem(intensity, self.k0, self.contrast, self.eps)
    }
}

/// Branch state on the base mesh.
struct Chain<'a> {
    st: &'a Settings,
    mesh: &'a Mesh,
    space: &'a FeSpace,
    blocks: &'a FormBlocks,
    intensity: f64,
    solution: Solution,
}

impl<'a> Chain<'a> {
    /// Cold start at the first intensity of a sweep.
    fn start(
        st: &'a Settings,
        mesh: &'a Mesh,
        space: &'a FeSpace,
        blocks: &'a FormBlocks,
        intensity: f64,
    ) -> Result<(Chain<'a>, usize), Failure> {
        let problem = st.problem_at(intensity);
        let rhs = assemble_rhs(mesh, space, &problem);
        let (solution, report) =
            newton_solve(mesh, space, blocks, &problem, &rhs, None, &st.nonlinear)?;
        if !report.converged {
            return Err(numerical(format!(
                "no convergence on the base mesh at I = {intensity} (cold start)"
            )));
        }
        Ok((Chain { st, mesh, space, blocks, intensity, solution }, report.iterations))
    }

    /// Continue from an existing solution (down sweep, middle branch).
    fn from_solution(
        st: &'a Settings,
        mesh: &'a Mesh,
        space: &'a FeSpace,
        blocks: &'a FormBlocks,
        intensity: f64,
        solution: Solution,
    ) -> Chain<'a> {
        Chain { st, mesh, space, blocks, intensity, solution }
    }

    /// Walk the branch to `target`, halving the intensity step on
    /// non-convergence, at most [`MAX_HALVINGS`] times. Halving cannot get
    /// past a fold (the branch simply ends there), so when it stalls the
    /// walk jumps to whichever branch still exists past the fold, which is
    /// exactly the jump the sweep is supposed to show. Returns the
    /// nonlinear iterations spent.
    fn advance(&mut self, target: f64) -> Result<usize, Failure> {
        self.walk(target, true)
    }

    fn walk(&mut self, target: f64, allow_jump: bool) -> Result<usize, Failure> {
        let mut halvings = 0;
        let mut next = target;
        let mut iterations = 0;
        loop {
            let problem = self.st.problem_at(next);
            let rhs = assemble_rhs(self.mesh, self.space, &problem);
            let solved = continuation_step(
                self.mesh,
                self.space,
                self.blocks,
                &problem,
                &rhs,
                &self.solution,
                &self.st.nonlinear,
            );
            match solved {
                Ok((sol, report)) if report.converged => {
                    iterations += report.iterations;
                    self.intensity = next;
                    self.solution = sol;
                    if next == target {
                        return Ok(iterations);
                    }
                    next = target;
                }
                // treat a failed linear solve near a fold like stalling
                Ok(_) | Err(nlhfem::Error::LinearSolve(_)) => {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        if allow_jump {
                            return self.cross_fold(target, iterations);
                        }
                        return Err(numerical(format!(
                            "branch lost between I = {} and I = {target}",
                            self.intensity
                        )));
                    }
                    next = 0.5 * (self.intensity + next);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Cross a fold where the followed branch ceases to exist. Right at the
    /// fold the warm iterate is a poor seed for `target` (the linearization
    /// on the vanishing branch is near singular there), but a step well past
    /// the fold lands in the basin of the branch the physical system jumps
    /// to. Probe such overshoot targets and walk back to `target` by plain
    /// continuation; a cold solve at `target` is the last resort.
    fn cross_fold(&mut self, target: f64, spent: usize) -> Result<usize, Failure> {
        let saved = (self.intensity, self.solution.clone());
        let wide = NonlinearOptions {
            max_iter: (2 * self.st.nonlinear.max_iter).max(60),
            ..self.st.nonlinear
        };
        // mult 1 retries the target itself: the halvings above walked the
        // seed closer to the fold, and basin-crossing Newton runs need the
        // wider iteration budget
        for mult in [1.0, 2.0, 4.0, 8.0] {
            let probe = self.intensity + mult * (target - self.intensity);
            if probe < 0.0 {
                continue;
            }
            let problem = self.st.problem_at(probe);
            let rhs = assemble_rhs(self.mesh, self.space, &problem);
            let solved = continuation_step(
                self.mesh,
                self.space,
                self.blocks,
                &problem,
                &rhs,
                &self.solution,
                &wide,
            );
            if let Ok((sol, report)) = solved {
                if report.converged {
                    self.intensity = probe;
                    self.solution = sol;
                    if let Ok(n) = self.walk(target, false) {
                        return Ok(spent + report.iterations + n);
                    }
                }
            }
            self.intensity = saved.0;
            self.solution = saved.1.clone();
        }
        let problem = self.st.problem_at(target);
        let rhs = assemble_rhs(self.mesh, self.space, &problem);
        let (sol, report) =
            newton_solve(self.mesh, self.space, self.blocks, &problem, &rhs, None, &wide)?;
        if !report.converged {
            return Err(numerical(format!(
                "branch lost between I = {} and I = {target}: step halvings and overshoot \
                 probes stalled and the cold solve at the target did not converge either",
                self.intensity
            )));
        }
        self.intensity = target;
        self.solution = sol;
        Ok(spent + report.iterations)
    }

    fn scaled_energy(&self, e_ref: f64) -> f64 {
        energy_norm_nodal(self.space, self.blocks, &self.solution.values) / e_ref
    }
}

/// One computed branch point. The sweep observable (scaled energy) lives on
/// the base mesh so the up/down/mid curves are compared at one resolution;
/// the per-point adaptive run supplements it and is best-effort, since near
/// a fold the refined problem can lose the followed branch.
struct BranchPoint {
    schedule_index: usize,
    intensity: f64,
    base: Solution,
    base_energy: f64,
    base_iters: usize,
    adapted: Option<Adapted>,
}

/// Summary of the final adapted solve at one branch point.
struct Adapted {
    energy: f64,
    n_elements: usize,
    n_dofs: usize,
    eta: f64,
    solves: usize,
}

fn adapt_config(st: &Settings) -> AdaptConfig {
    let stop_rule = if st.stop_factor > 0.0 {
        StopRule::EstimatorFactor(st.stop_factor)
    } else {
        StopRule::Iterations(st.max_adapt)
    };
    AdaptConfig {
        theta_d: st.theta_d,
        bisections: st.bisections,
        max_iterations: st.max_adapt + 1,
        stop_rule,
        nonlinear: st.nonlinear,
        max_dofs: st.max_dofs,
        with_projection: false,
    }
}

/// Adaptive run at one chain point, seeded with the base solution. A loop
/// abort is reported but not fatal: the branch point keeps its base-mesh
/// values and the sweep continues.
fn adapt_point(
    st: &Settings,
    mesh: &Mesh,
    base: &Solution,
    intensity: f64,
    branch: &str,
) -> Result<Option<AdaptTrace>, Failure> {
    let problem = st.problem_at(intensity);
    match adapt_loop_seeded(&problem, mesh, &adapt_config(st), None, Some(base)) {
        Ok(trace) => Ok(Some(trace)),
        Err(e @ nlhfem::Error::Loop { .. }) => {
            println!("note: {branch} branch at I = {intensity}: {e}; keeping base-mesh values");
            Ok(None)
        }
        Err(e) => Err(Failure {
            message: format!("adaptive run of the {branch} branch at I = {intensity} failed: {e}"),
            ..Failure::from(e)
        }),
    }
}

/// Scaled energy and mesh summary of the final adapted solve.
fn adapted_summary(st: &Settings, trace: &AdaptTrace, intensity: f64, e_ref: f64) -> Adapted {
    let last = trace.last.as_ref().expect("adaptive trace holds its final state");
    let space = FeSpace::new(&last.mesh);
    let problem = st.problem_at(intensity);
    let blocks = assemble_blocks(&last.mesh, &space, &problem);
    let energy = energy_norm_nodal(&space, &blocks, &last.solution.values) / e_ref;
    let row = trace.rows.last().expect("at least one row");
    Adapted {
        energy,
        n_elements: row.n_elements,
        n_dofs: row.n_dofs,
        eta: row.eta,
        solves: trace.rows.len(),
    }
}

struct Sweep {
    points: Vec<BranchPoint>,
    /// adaptive trace and final state at the marker index, when visited
    marker: Option<AdaptTrace>,
}

/// Walk one sweep over `visit` (indices into the schedule), adapting at
/// every point. The chain starts cold unless `start_from` hands over the
/// final solution of a previous sweep.
#[allow(clippy::too_many_arguments)]
fn run_sweep(
    st: &Settings,
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    visit: &[usize],
    start_from: Option<Solution>,
    marker_index: Option<usize>,
    branch: &str,
    e_ref: f64,
) -> Result<Sweep, Failure> {
    let first_i = st.schedule[visit[0]];
    let (mut chain, mut iters) = match start_from {
        Some(solution) => {
            let mut c = Chain::from_solution(st, mesh, space, blocks, first_i, solution);
            let it = c.advance(first_i)?;
            (c, it)
        }
        None => Chain::start(st, mesh, space, blocks, first_i)?,
    };

    let mut points = Vec::with_capacity(visit.len());
    let mut marker = None;
    for (order, &j) in visit.iter().enumerate() {
        if order > 0 {
            iters = chain.advance(st.schedule[j])?;
        }
        let trace = adapt_point(st, mesh, &chain.solution, chain.intensity, branch)?;
        points.push(BranchPoint {
            schedule_index: j,
            intensity: chain.intensity,
            base: chain.solution.clone(),
            base_energy: chain.scaled_energy(e_ref),
            base_iters: iters,
            adapted: trace.as_ref().map(|t| adapted_summary(st, t, chain.intensity, e_ref)),
        });
        if marker_index == Some(j) {
            marker = trace;
        }
    }
    Ok(Sweep { points, marker })
}

fn fnum(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

fn branches_csv(branches: &[(&str, &[BranchPoint])]) -> String {
    let mut s = String::new();
    s.push_str("# optical-bistability sweep, one row per computed branch point\n");
    s.push_str("# branch: up (I increasing), down (I decreasing), mid (middle branch)\n");
    s.push_str("# order: visit order within the branch\n");
    s.push_str("# intensity: incident beam amplitude I\n");
    s.push_str("# scaled_energy: ||u_h||_E over ||u_inc^0||_E on the base mesh, the\n");
    s.push_str("#   branch observable all three curves share\n");
    s.push_str("# newton_iterations: nonlinear steps advancing the base chain\n");
    s.push_str("# adapt_n_elements: triangles of the final adapted mesh\n");
    s.push_str("# adapt_n_dofs: complex unknowns of the final adapted mesh\n");
    s.push_str("# adapt_eta: estimator total on the final adapted mesh\n");
    s.push_str("# adapt_scaled_energy: the scaled energy on the final adapted mesh\n");
    s.push_str("# adapt_solves: solves of the per-point adaptive loop\n");
    s.push_str("# adapt_* columns are empty when the adaptive loop at the point\n");
    s.push_str("# did not converge (near a fold the refined problem can lose the\n");
    s.push_str("# followed branch); the base-mesh columns are always present\n");
    s.push_str(
        "branch,order,intensity,scaled_energy,newton_iterations,adapt_n_elements,\
         adapt_n_dofs,adapt_eta,adapt_scaled_energy,adapt_solves\n",
    );
    for (name, points) in branches {
        for (order, p) in points.iter().enumerate() {
            let ad = p.adapted.as_ref();
            let _ = writeln!(
                s,
                "{name},{order},{},{},{},{},{},{},{},{}",
                fnum(p.intensity),
                fnum(p.base_energy),
                p.base_iters,
                ad.map(|a| a.n_elements.to_string()).unwrap_or_default(),
                ad.map(|a| a.n_dofs.to_string()).unwrap_or_default(),
                ad.map(|a| fnum(a.eta)).unwrap_or_default(),
                ad.map(|a| fnum(a.energy)).unwrap_or_default(),
                ad.map(|a| a.solves.to_string()).unwrap_or_default(),
            );
        }
    }
    s
}

struct Jump {
    branch: &'static str,
    from_i: f64,
    to_i: f64,
    from_e: f64,
    to_e: f64,
}

/// Adjacent sweep points whose scaled energy changed by more than
/// [`JUMP_REL`] of the larger one.
fn detect_jumps(branch: &'static str, points: &[BranchPoint]) -> Vec<Jump> {
    let mut jumps = Vec::new();
    for w in points.windows(2) {
        let scale = w[0].base_energy.max(w[1].base_energy);
        if scale > 0.0 && (w[1].base_energy - w[0].base_energy).abs() > JUMP_REL * scale {
            jumps.push(Jump {
                branch,
                from_i: w[0].intensity,
                to_i: w[1].intensity,
                from_e: w[0].base_energy,
                to_e: w[1].base_energy,
            });
        }
    }
    jumps
}

fn events_csv(jumps: &[Jump]) -> String {
    let mut s = String::new();
    s.push_str("# branch-jump events: adjacent sweep points whose scaled energy\n");
    s.push_str("# changed by more than 50%\n");
    s.push_str("# branch: sweep where the jump occurred\n");
    s.push_str("# from_intensity,to_intensity: the intensity step across the jump\n");
    s.push_str("# from_energy,to_energy: scaled energies on both sides\n");
    s.push_str("branch,from_intensity,to_intensity,from_energy,to_energy\n");
    for j in jumps {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            j.branch,
            fnum(j.from_i),
            fnum(j.to_i),
            fnum(j.from_e),
            fnum(j.to_e)
        );
    }
    s
}

/// Dump the final adapted field and the trace of one marker point.
fn write_marker(
    run_dir: &mut RunDir,
    name: &str,
    intensity: f64,
    trace: &AdaptTrace,
) -> Result<(), Failure> {
    let last = trace.last.as_ref().expect("marker trace holds its final state");
    let title = format!("marker {name}: adapted solution at I = {intensity}");
    run_dir.write(
        &format!("field_{name}.vtk"),
        &io::field_to_vtk(&last.mesh, Some(&last.solution.values), &title),
    )?;
    run_dir.write(&format!("trace_{name}.csv"), &io::trace_to_csv(trace))
}

pub fn run(config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let config = Config::from_file(config_path).map_err(|e| usage(e.to_string()))?;
    config.validate_keys(ALLOWED).map_err(|e| usage(e.to_string()))?;
    let st = parse_settings(&config)?;

    let mesh = hexagon_mesh(st.m)?;
    let space = FeSpace::new(&mesh);
    if space.n_dofs() > st.max_dofs {
        return Err(usage(format!(
            "base mesh has {} dofs, beyond max_dofs = {}",
            space.n_dofs(),
            st.max_dofs
        )));
    }
    let problem0 = st.problem_at(0.0);
    let blocks = assemble_blocks(&mesh, &space, &problem0);

    // normalization: energy norm of the reference incident beam
    let zeros = vec![C64::new(0.0, 0.0); mesh.n_vertices()];
    let incident = bistability_incident(st.k0, st.i0);
    let e_ref = norms_against_exact(&mesh, &zeros, &incident, &problem0, 6).energy_exact;
    if !(e_ref > 0.0) {
        return Err(usage(format!(
            "reference intensity I0 = {} gives a zero-energy incident beam",
            st.i0
        )));
    }

    let base = out.unwrap_or(Path::new("runs"));
    let mut run_dir = RunDir::create(base, "bistability", config_path, &config.canonical_string())?;
    println!(
        "bistability: k0 = {}, contrast = {}, eps = {:e}, mesh m = {} ({} elements)",
        st.k0,
        st.contrast,
        st.eps,
        st.m,
        mesh.n_tris()
    );
    let n = st.schedule.len();
    println!(
        "sweep: {} points, I in [{}, {}]",
        n,
        st.schedule[0],
        st.schedule[n - 1]
    );

    // the marker intensity: the scheduled point closest to mid_I
    let marker_index = (n >= 2).then(|| {
        (0..n)
            .min_by(|&a, &b| {
                let da = (st.schedule[a] - st.mid_i).abs();
                let db = (st.schedule[b] - st.mid_i).abs();
                da.partial_cmp(&db).expect("finite schedule")
            })
            .expect("nonempty schedule")
    });

    // up sweep
    let ascending: Vec<usize> = (0..n).collect();
    let up = run_sweep(
        &st, &mesh, &space, &blocks, &ascending, None, marker_index, "up", e_ref,
    )?;
    println!(
        "up sweep done: {} points, top scaled energy {:.3}",
        up.points.len(),
        up.points.last().expect("nonempty sweep").energy
    );

    // down sweep, continuing from the top of the up sweep
    let down = if n >= 2 {
        let descending: Vec<usize> = (0..n).rev().collect();
        let top = up.points.last().expect("nonempty sweep").base.clone();
        let sweep = run_sweep(
            &st, &mesh, &space, &blocks, &descending, Some(top), marker_index, "down", e_ref,
        )?;
        println!(
            "down sweep done: {} points, bottom scaled energy {:.3}",
            sweep.points.len(),
            sweep.points.last().expect("nonempty sweep").energy
        );
        Some(sweep)
    } else {
        None
    };

    // middle branch: seed with the average of the two chains at the marker
    let mut mid_points: Vec<BranchPoint> = Vec::new();
    let mut mid_marker: Option<AdaptTrace> = None;
    if let (Some(jm), Some(down)) = (marker_index, down.as_ref()) {
        let i_m = st.schedule[jm];
        let u_a = &up.points[jm].base;
        let u_c = &down.points[n - 1 - jm].base;
        debug_assert_eq!(down.points[n - 1 - jm].schedule_index, jm);
        let seed = Solution {
            mesh_id: mesh.id(),
            values: u_a
                .values
                .iter()
                .zip(&u_c.values)
                .map(|(a, c)| 0.5 * (a + c))
                .collect(),
        };
        let problem = st.problem_at(i_m);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        match continuation_step(&mesh, &space, &blocks, &problem, &rhs, &seed, &st.nonlinear) {
            Ok((solution, report)) if report.converged => {
                let up_e = up.points[jm].base_energy;
                let down_e = down.points[n - 1 - jm].base_energy;
                let chain0 = Chain::from_solution(&st, &mesh, &space, &blocks, i_m, solution);
                let mid_e = chain0.scaled_energy(e_ref);
                let distinct = |e: f64, other: f64| {
                    let scale = e.max(other);
                    scale > 0.0 && (e - other).abs() > MERGE_REL * scale
                };
                if distinct(mid_e, up_e) && distinct(mid_e, down_e) {
                    // record the seed point, then extend in both directions
                    // until the branch merges or is lost at a fold
                    let trace = adapt_point(&st, &mesh, &chain0.solution, i_m, "mid")?;
                    let (energy, n_elements, n_dofs, eta) =
                        adapted_summary(&st, &trace, i_m, e_ref);
                    mid_points.push(BranchPoint {
                        schedule_index: jm,
                        intensity: i_m,
                        base: chain0.solution.clone(),
                        base_energy: mid_e,
                        base_iters: report.iterations,
                        energy,
                        n_elements,
                        n_dofs,
                        eta,
                        adapt_solves: trace.rows.len(),
                    });
                    mid_marker = Some(trace);

                    for dir in [-1i64, 1] {
                        let mut chain = Chain::from_solution(
                            &st,
                            &mesh,
                            &space,
                            &blocks,
                            i_m,
                            chain0.solution.clone(),
                        );
                        let mut j = jm as i64 + dir;
                        while (0..n as i64).contains(&j) {
                            let ju = j as usize;
                            let target = st.schedule[ju];
                            let Ok(iters) = chain.advance(target) else {
                                break; // fold: the middle branch ends here
                            };
                            let e = chain.scaled_energy(e_ref);
                            let up_e = up.points[ju].base_energy;
                            let down_e = down.points[n - 1 - ju].base_energy;
                            if !distinct(e, up_e) || !distinct(e, down_e) {
                                break; // merged into an outer branch
                            }
                            let trace =
                                adapt_point(&st, &mesh, &chain.solution, target, "mid")?;
                            let (energy, n_elements, n_dofs, eta) =
                                adapted_summary(&st, &trace, target, e_ref);
                            mid_points.push(BranchPoint {
                                schedule_index: ju,
                                intensity: target,
                                base: chain.solution.clone(),
                                base_energy: e,
                                base_iters: iters,
                                energy,
                                n_elements,
                                n_dofs,
                                eta,
                                adapt_solves: trace.rows.len(),
                            });
                            j += dir;
                        }
                    }
                    println!(
                        "middle branch: {} points around I = {}",
                        mid_points.len(),
                        i_m
                    );
                } else {
                    println!(
                        "middle-branch seed at I = {i_m} converged onto an existing branch"
                    );
                }
            }
            Ok(_) => println!("middle-branch seed at I = {i_m} did not converge"),
            Err(e) => println!("middle-branch seed at I = {i_m} failed: {e}"),
        }
    }

    // artifacts
    let mut branch_rows: Vec<(&str, &[BranchPoint])> = vec![("up", &up.points)];
    if let Some(d) = down.as_ref() {
        branch_rows.push(("down", &d.points));
    }
    if !mid_points.is_empty() {
        branch_rows.push(("mid", &mid_points));
    }
    run_dir.write("branches.csv", &branches_csv(&branch_rows))?;

    let mut jumps = detect_jumps("up", &up.points);
    if let Some(d) = down.as_ref() {
        jumps.extend(detect_jumps("down", &d.points));
    }
    for j in &jumps {
        println!(
            "branch jump on the {} sweep: I = {} -> {}, scaled energy {:.3} -> {:.3}",
            j.branch, j.from_i, j.to_i, j.from_e, j.to_e
        );
    }
    run_dir.write("events.csv", &events_csv(&jumps))?;

    if let (Some(jm), Some(trace)) = (marker_index, up.marker.as_ref()) {
        write_marker(&mut run_dir, "A", st.schedule[jm], trace)?;
    }
    if let (Some(jm), Some(trace)) = (marker_index, mid_marker.as_ref()) {
        write_marker(&mut run_dir, "B", st.schedule[jm], trace)?;
    }
    if let (Some(jm), Some(trace)) =
        (marker_index, down.as_ref().and_then(|d| d.marker.as_ref()))
    {
        write_marker(&mut run_dir, "C", st.schedule[jm], trace)?;
    }

    let dir = run_dir.finish()?;
    println!("run directory: {}", dir.display());
    Ok(())
}
