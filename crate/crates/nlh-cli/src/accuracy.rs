//! `nlh accuracy`: convergence study on the corner/soliton problem with a
//! known exact solution. Runs any subset of {fem, cipfem} × {adaptive,
//! uniform}, writes one trace per method, a rate-fit summary, and
//! estimator-effectivity tables.

use crate::manifest::RunDir;
use crate::{numerical, usage, Failure};
use nlhfem::adaptive::{
    adapt_loop, fit_log_slope, uniform_loop, AdaptConfig, AdaptTrace, StopRule,
};
use nlhfem::assembly::{FeSpace, Scheme};
use nlhfem::config::{default_gamma, Config, DEFAULT_BISECTIONS, DEFAULT_THETA_D};
use nlhfem::io;
use nlhfem::mesh::corner_polygon_mesh;
use nlhfem::problem::C64;
use nlhfem::problem::corner_soliton_problem;
use nlhfem::solver::NonlinearOptions;
use std::fmt::Write as _;
use std::path::Path;

const ALLOWED: &[(&str, &[&str])] = &[
    ("problem", &["k", "q", "R"]),
    ("mesh", &["h0"]),
    ("adapt", &["theta_D", "b", "max_adapt", "stop_factor", "max_uniform", "max_dofs"]),
    ("newton", &["scheme", "tol_newton", "max_newton"]),
    ("cip", &["gamma_re", "gamma_im"]),
    ("run", &["methods", "fit_window", "fit_window_uniform"]),
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stab {
    Plain,
    Cip,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Adaptive,
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Method {
    stab: Stab,
    strategy: Strategy,
}

impl Method {
    fn parse(s: &str) -> Result<Method, Failure> {
        let m = match s {
            "fem-adaptive" => Method { stab: Stab::Plain, strategy: Strategy::Adaptive },
            "fem-uniform" => Method { stab: Stab::Plain, strategy: Strategy::Uniform },
            "cipfem-adaptive" => Method { stab: Stab::Cip, strategy: Strategy::Adaptive },
            "cipfem-uniform" => Method { stab: Stab::Cip, strategy: Strategy::Uniform },
            other => {
                return Err(usage(format!(
                    "unknown method '{other}' (expected fem-adaptive, fem-uniform, \
                     cipfem-adaptive, cipfem-uniform)"
                )))
            }
        };
        Ok(m)
    }

    fn label(self) -> &'static str {
        match (self.stab, self.strategy) {
            (Stab::Plain, Strategy::Adaptive) => "fem-adaptive",
            (Stab::Plain, Strategy::Uniform) => "fem-uniform",
            (Stab::Cip, Strategy::Adaptive) => "cipfem-adaptive",
            (Stab::Cip, Strategy::Uniform) => "cipfem-uniform",
        }
    }
}

struct Settings {
    k: f64,
    q: f64,
    r: f64,
    h0: f64,
    theta_d: f64,
    bisections: u32,
    max_adapt: usize,
    stop_factor: f64,
    max_uniform: usize,
    max_dofs: usize,
    nonlinear_tol: f64,
    max_newton: usize,
    scheme: Scheme,
    gamma: C64,
    methods: Vec<Method>,
    fit_window: usize,
    fit_window_uniform: usize,
}

fn parse_settings(config: &Config) -> Result<Settings, Failure> {
    let as_usage = |e: nlhfem::Error| usage(e.to_string());
    let k = config.require_f64("problem", "k").map_err(as_usage)?;
    let q = config.require_f64("problem", "q").map_err(as_usage)?;
    let r = config.f64_or("problem", "R", 0.25).map_err(as_usage)?;
    let h0 = config.require_f64("mesh", "h0").map_err(as_usage)?;
    let gamma_default = default_gamma();
    let methods: Vec<Method> = match config.str_list("run", "methods") {
        Some(names) => names.iter().map(|s| Method::parse(s)).collect::<Result<_, _>>()?,
        None => vec![
            Method::parse("fem-adaptive")?,
            Method::parse("fem-uniform")?,
            Method::parse("cipfem-adaptive")?,
            Method::parse("cipfem-uniform")?,
        ],
    };
    if methods.is_empty() {
        return Err(usage("methods list is empty"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(usage(format!("method '{}' listed twice", m.label())));
        }
    }
    Ok(Settings {
        k,
        q,
        r,
        h0,
        theta_d: config.f64_or("adapt", "theta_D", DEFAULT_THETA_D).map_err(as_usage)?,
        bisections: config.u32_or("adapt", "b", DEFAULT_BISECTIONS).map_err(as_usage)?,
        max_adapt: config.usize_or("adapt", "max_adapt", 25).map_err(as_usage)?,
        stop_factor: config.f64_or("adapt", "stop_factor", 0.0).map_err(as_usage)?,
        max_uniform: config.usize_or("adapt", "max_uniform", 5).map_err(as_usage)?,
        max_dofs: config.usize_or("adapt", "max_dofs", 2_000_000).map_err(as_usage)?,
        nonlinear_tol: config.f64_or("newton", "tol_newton", 1e-9).map_err(as_usage)?,
        max_newton: config.usize_or("newton", "max_newton", 50).map_err(as_usage)?,
        scheme: config.str_or("newton", "scheme", "newton").parse().map_err(as_usage)?,
        gamma: C64::new(
            config.f64_or("cip", "gamma_re", gamma_default.re).map_err(as_usage)?,
            config.f64_or("cip", "gamma_im", gamma_default.im).map_err(as_usage)?,
        ),
        methods,
        fit_window: config.usize_or("run", "fit_window", 6).map_err(as_usage)?,
        fit_window_uniform: config.usize_or("run", "fit_window_uniform", 4).map_err(as_usage)?,
    })
}

fn fnum(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

fn adapt_config(st: &Settings, method: Method) -> AdaptConfig {
    let gamma = match method.stab {
        Stab::Plain => C64::new(0.0, 0.0),
        Stab::Cip => st.gamma,
    };
    let (stop_rule, budget) = match method.strategy {
        Strategy::Adaptive if st.stop_factor > 0.0 => {
            (StopRule::EstimatorFactor(st.stop_factor), st.max_adapt + 1)
        }
        Strategy::Adaptive => (StopRule::Iterations(st.max_adapt), st.max_adapt + 1),
        Strategy::Uniform => (StopRule::Iterations(st.max_uniform), st.max_uniform + 1),
    };
    AdaptConfig {
        theta_d: st.theta_d,
        bisections: st.bisections,
        max_iterations: budget,
        stop_rule,
        nonlinear: NonlinearOptions {
            scheme: st.scheme,
            gamma,
            tol: st.nonlinear_tol,
            max_iter: st.max_newton,
        },
        max_dofs: st.max_dofs,
        with_projection: true,
    }
}

/// Slope of log(value) vs log(N) over the trailing `window` rows; NaN when
/// fewer than two points carry the value.
fn tail_slope(trace: &AdaptTrace, window: usize, value: impl Fn(&nlhfem::adaptive::TraceRow) -> Option<f64>) -> f64 {
    let series = trace.series(value);
    let w = window.max(2).min(series.len());
    if w < 2 {
        return f64::NAN;
    }
    fit_log_slope(&series[series.len() - w..])
}

fn ratios_csv(method: &str, trace: &AdaptTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# estimator effectivity per iteration of {method}");
    s.push_str("# iteration: 0-based loop counter\n");
    s.push_str("# n_elements: triangles of this mesh\n");
    s.push_str("# eta: neighbor-augmented residual estimator total\n");
    s.push_str("# h1_err: H1 error of the discrete solution\n");
    s.push_str("# eta_over_h1: eta / h1_err\n");
    s.push_str("# proj_h1_err: H1 error of the elliptic projection (best fit in the space)\n");
    s.push_str("# osc: data oscillation total\n");
    s.push_str("# eta_over_proj_osc: eta / (proj_h1_err + osc)\n");
    s.push_str("iteration,n_elements,eta,h1_err,eta_over_h1,proj_h1_err,osc,eta_over_proj_osc\n");
    for r in &trace.rows {
        let h1_err = r.norms.map(|n| n.h1_err).unwrap_or(f64::NAN);
        let proj = r.proj_h1_err.unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.n_elements,
            fnum(r.eta),
            fnum(h1_err),
            fnum(r.eta / h1_err),
            fnum(proj),
            fnum(r.osc),
            fnum(r.eta / (proj + r.osc)),
        );
    }
    s
}

pub fn run(config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let config = Config::from_file(config_path).map_err(|e| usage(e.to_string()))?;
    config.validate_keys(ALLOWED).map_err(|e| usage(e.to_string()))?;
    let st = parse_settings(&config)?;

    let (problem, exact) = corner_soliton_problem(st.k, st.q, st.r);
    let mesh0 = corner_polygon_mesh(st.r, st.h0)?;
    let n0 = FeSpace::new(&mesh0).n_dofs();
    if n0 > st.max_dofs {
        return Err(usage(format!(
            "initial mesh already has {n0} dofs, beyond max_dofs = {}",
            st.max_dofs
        )));
    }
    // uniform bisection at least doubles the element count per step; refuse
    // schedules whose projected size cannot fit under the cap
    if st.methods.iter().any(|m| m.strategy == Strategy::Uniform) {
        let projected = (n0 as u128) << st.max_uniform.min(64);
        if projected > st.max_dofs as u128 {
            return Err(usage(format!(
                "{} uniform steps from {n0} dofs are projected to reach at least \
                 {projected} dofs, beyond max_dofs = {}; lower max_uniform or raise max_dofs",
                st.max_uniform, st.max_dofs
            )));
        }
    }

    let base = out.unwrap_or(Path::new("runs"));
    let mut run_dir = RunDir::create(base, "accuracy", config_path, &config.canonical_string())?;
    println!("accuracy: k = {}, q = {}, R = {}, h0 = {}", st.k, st.q, st.r, st.h0);
    println!("initial mesh: {} elements, {} dofs", mesh0.n_tris(), n0);

    let mut rates = String::new();
    rates.push_str("# least-squares slopes of log(value) against log(n_elements)\n");
    rates.push_str("# method: refinement driver and stabilization of the run\n");
    rates.push_str("# rows_total: trace rows available\n");
    rates.push_str("# window: trailing rows used for the fit\n");
    rates.push_str("# slope_h1_rel: fitted slope of the relative H1 error\n");
    rates.push_str("# slope_eta: fitted slope of the total estimator\n");
    rates.push_str("method,rows_total,window,slope_h1_rel,slope_eta\n");

    for &method in &st.methods {
        let label = method.label();
        let cfg = adapt_config(&st, method);
        let outcome = match method.strategy {
            Strategy::Adaptive => adapt_loop(&problem, &mesh0, &cfg, Some(&exact)),
            Strategy::Uniform => uniform_loop(&problem, &mesh0, &cfg, Some(&exact)),
        };
        let trace = match outcome {
            Ok(t) => t,
            Err(nlhfem::Error::Loop { at, source, partial }) => {
                // keep the partial trace on disk so the failure can be read
                run_dir.write(&format!("trace_{label}.csv"), &io::trace_to_csv(&partial))?;
                run_dir.write(
                    &format!("failure_{label}.txt"),
                    &format!("aborted at iteration {at}: {source}\n"),
                )?;
                run_dir.finish()?;
                return Err(numerical(format!("{label} aborted at iteration {at}: {source}")));
            }
            Err(e) => return Err(e.into()),
        };

        run_dir.write(&format!("trace_{label}.csv"), &io::trace_to_csv(&trace))?;
        run_dir.write(&format!("trace_{label}.json"), &io::trace_to_json(&trace))?;
        run_dir.write(&format!("ratios_{label}.csv"), &ratios_csv(label, &trace))?;

        let window = match method.strategy {
            Strategy::Adaptive => st.fit_window,
            Strategy::Uniform => st.fit_window_uniform,
        };
        let slope_h1 = tail_slope(&trace, window, |r| r.norms.map(|n| n.h1_rel));
        let slope_eta = tail_slope(&trace, window, |r| Some(r.eta));
        let _ = writeln!(
            rates,
            "{label},{},{},{},{}",
            trace.rows.len(),
            window.max(2).min(trace.rows.len()),
            fnum(slope_h1),
            fnum(slope_eta)
        );

        let last = trace.rows.last().expect("loop writes at least one row");
        println!(
            "{label}: {} meshes, final N = {}, rel H1 = {:.3e}, eta = {:.3e}, slope = {:.3}",
            trace.rows.len(),
            last.n_elements,
            last.norms.map(|n| n.h1_rel).unwrap_or(f64::NAN),
            last.eta,
            slope_h1,
        );
    }

    run_dir.write("rates.csv", &rates)?;
    let dir = run_dir.finish()?;
    println!("run directory: {}", dir.display());
    Ok(())
}
