//! Sparse direct solves of the real-block systems and the outer nonlinear
//! iteration with convergence control, plus prolongation for warm starts
//! across refinements.

use crate::assembly::{
    assemble_system, residual_vector, FeSpace, FormBlocks, RealBlockSystem, Scheme,
};
use crate::mesh::Mesh;
use crate::problem::{C64, ProblemSpec};
use crate::{Error, Result};
use faer::linalg::solvers::Solve;

/// A discrete solution: nodal values (Dirichlet vertices hold zeros) tied to
/// the mesh they live on.
#[derive(Clone, Debug)]
pub struct Solution {
    pub mesh_id: u64,
    pub values: Vec<C64>,
}

/// Direct sparse LU solve of a real-block system, returned as the complex
/// dof vector. The relative residual is checked to 1e-10 to catch
/// near-singular systems.
pub fn solve_linear(sys: &RealBlockSystem) -> Result<Vec<C64>> {
    let n = sys.n_complex;
    let lu = sys
        .mat
        .sp_lu()
        .map_err(|e| Error::LinearSolve(format!("sparse LU factorization failed: {e:?}")))?;
    let x = lu.solve(&sys.rhs);
    // residual check ‖Ax − b‖ ≤ 1e-10 ‖b‖
    let ax = &sys.mat * &x;
    let mut rr = 0.0;
    let mut bb = 0.0;
    for i in 0..2 * n {
        rr += (ax[(i, 0)] - sys.rhs[(i, 0)]).powi(2);
        bb += sys.rhs[(i, 0)].powi(2);
    }
    if bb > 0.0 && rr > 1e-20 * bb {
        return Err(Error::LinearSolve(format!(
            "direct solve residual {:.3e} exceeds 1e-10 relative",
            (rr / bb).sqrt()
        )));
    }
    Ok((0..n).map(|i| C64::new(x[(i, 0)], x[(i + n, 0)])).collect())
}

/// Energy norm ‖v‖_E = (|v|₁² + ‖k v‖₀²)^{1/2} of a dof vector, through the
/// assembled stiffness and weighted-mass blocks.
pub fn energy_norm(blocks: &FormBlocks, u: &[C64]) -> f64 {
    let mut y = vec![C64::new(0.0, 0.0); u.len()];
    let one = C64::new(1.0, 0.0);
    blocks.stiffness.acc_mul(one, u, &mut y);
    blocks.mass_k.acc_mul(one, u, &mut y);
    let e: f64 = u.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
    e.max(0.0).sqrt()
}

/// Options of the outer nonlinear iteration.
#[derive(Clone, Copy, Debug)]
pub struct NonlinearOptions {
    pub scheme: Scheme,
    pub gamma: C64,
    /// stop when ‖u^{l+1} − u^l‖_E / ‖u^{l+1}‖_E ≤ tol
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions {
            scheme: Scheme::Newton,
            gamma: C64::new(0.0, 0.0),
            tol: 1e-9,
            max_iter: 50,
        }
    }
}

/// Convergence history of one nonlinear solve.
#[derive(Clone, Debug, serde::Serialize)]
pub struct NonlinearReport {
    pub iterations: usize,
    /// ‖u^{l+1} − u^l‖_E / ‖u^{l+1}‖_E per iteration
    pub rel_increments: Vec<f64>,
    pub converged: bool,
    /// ‖r(u)‖ / ‖b‖ in the discrete l² sense at the returned iterate
    pub final_residual_norm: f64,
}

/// Outer iteration: repeat linearized solves until the relative increment in
/// the energy norm falls below `opts.tol`. Without a warm start the initial
/// guess is the solution of the linear problem (ε treated as 0). Returns the
/// last iterate even when not converged; the caller decides.
pub fn newton_solve(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    rhs_b: &[C64],
    u0: Option<&[C64]>,
    opts: &NonlinearOptions,
) -> Result<(Solution, NonlinearReport)> {
    let zero_nodal = vec![C64::new(0.0, 0.0); mesh.n_vertices()];
    let mut u = match u0 {
        Some(w) => {
            assert_eq!(w.len(), space.n_dofs(), "warm start must be a dof vector");
            w.to_vec()
        }
        None => {
            let sys = assemble_system(
                mesh, space, blocks, problem, opts.gamma, &zero_nodal, rhs_b, opts.scheme,
            )?;
            solve_linear(&sys)?
        }
    };

    let mut rel_increments = Vec::new();
    let mut converged = false;
    while rel_increments.len() < opts.max_iter {
        let w_nodal = space.expand(&u);
        let sys = assemble_system(
            mesh, space, blocks, problem, opts.gamma, &w_nodal, rhs_b, opts.scheme,
        )?;
        let u_next = solve_linear(&sys)?;
        let diff: Vec<C64> = u_next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let norm_next = energy_norm(blocks, &u_next);
        let inc = if norm_next > 0.0 {
            energy_norm(blocks, &diff) / norm_next
        } else {
            energy_norm(blocks, &diff)
        };
        rel_increments.push(inc);
        u = u_next;
        if inc <= opts.tol {
            converged = true;
            break;
        }
    }

    let r = residual_vector(mesh, space, blocks, problem, opts.gamma, rhs_b, &u);
    let rn: f64 = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bn: f64 = rhs_b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let report = NonlinearReport {
        iterations: rel_increments.len(),
        rel_increments,
        converged,
        final_residual_norm: if bn > 0.0 { rn / bn } else { rn },
    };
    let solution = Solution { mesh_id: mesh.id(), values: space.expand(&u) };
    Ok((solution, report))
}

/// One continuation solve: the warm start (typically the converged solution
/// at the previous parameter value, prolongated if meshes differ) seeds the
/// nonlinear iteration on the given problem.
pub fn continuation_step(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    rhs_b: &[C64],
    warm_start: &Solution,
    opts: &NonlinearOptions,
) -> Result<(Solution, NonlinearReport)> {
    if warm_start.mesh_id != mesh.id() {
        return Err(Error::Mesh(format!(
            "warm start lives on mesh {} but the system is on mesh {}",
            warm_start.mesh_id,
            mesh.id()
        )));
    }
    let dofs = space.restrict(&warm_start.values);
    newton_solve(mesh, space, blocks, problem, rhs_b, Some(&dofs), opts)
}

/// Embed a coarse solution into a descendant mesh: inherited vertices keep
/// their values; bisection vertices take the parent-edge midpoint value.
/// Exact since the coarse P1 space is a subspace of the fine one.
pub fn prolongate(sol: &Solution, fine: &Mesh) -> Result<Solution> {
    if fine.parent_id() != Some(sol.mesh_id) {
        return Err(Error::Mesh(format!(
            "mesh {} was not refined from mesh {}",
            fine.id(),
            sol.mesh_id
        )));
    }
    let n_coarse = fine.vertex_parents.iter().filter(|p| p.is_none()).count();
    if sol.values.len() != n_coarse {
        return Err(Error::Mesh(format!(
            "solution has {} values but the parent mesh had {} vertices",
            sol.values.len(),
            n_coarse
        )));
    }
    let mut values = Vec::with_capacity(fine.n_vertices());
    values.extend_from_slice(&sol.values);
    for v in n_coarse..fine.n_vertices() {
        let (a, b) = fine.vertex_parents[v].expect("new vertices follow the inherited prefix");
        let val = (values[a as usize] + values[b as usize]) * 0.5;
        values.push(val);
    }
    Ok(Solution { mesh_id: fine.id(), values })
}

/// Evaluate a nodal P1 field at an arbitrary point by locating a containing
/// triangle (linear scan; for tests and spot checks, not hot paths).
pub fn eval_p1(mesh: &Mesh, values: &[C64], p: crate::geom::Point) -> Option<C64> {
    for t in 0..mesh.n_tris() {
        let [a, b, c] = mesh.tri_points(t);
        let twoa = crate::geom::signed_area2(a, b, c);
        let l1 = crate::geom::signed_area2(p, b, c) / twoa;
        let l2 = crate::geom::signed_area2(a, p, c) / twoa;
        let l3 = 1.0 - l1 - l2;
        let tol = -1e-12;
        if l1 >= tol && l2 >= tol && l3 >= tol {
            let [va, vb, vc] = mesh.tris[t].map(|v| values[v as usize]);
            return Some(va * l1 + vb * l2 + vc * l3.max(0.0));
        }
    }
    None
}

/// Scheme-tagged helper: discrete residual norm relative to the load, used
/// by drivers for logging.
pub fn relative_residual(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    gamma: C64,
    rhs_b: &[C64],
    sol: &Solution,
) -> f64 {
    let u = space.restrict(&sol.values);
    let r = residual_vector(mesh, space, blocks, problem, gamma, rhs_b, &u);
    let rn: f64 = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bn: f64 = rhs_b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if bn > 0.0 {
        rn / bn
    } else {
        rn
    }
}

/// Energy norm of a full nodal vector (restricts to dofs first). The
/// Dirichlet entries of a conforming field are zero, so nothing is lost.
pub fn energy_norm_nodal(space: &FeSpace, blocks: &FormBlocks, nodal: &[C64]) -> f64 {
    energy_norm(blocks, &space.restrict(nodal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_blocks, assemble_rhs};
    use crate::mesh::{hexagon_mesh, refine};
    use crate::problem::bistability_problem;
    use std::sync::Arc;

    fn small_problem(eps: f64, k: f64) -> ProblemSpec {
        ProblemSpec {
            name: "test".into(),
            k_out: k,
            k_in: k,
            eps,
            f: Arc::new(|p| C64::new(p.x + 0.2, p.y - 0.1)),
            g: Arc::new(|_, _| C64::new(0.3, 0.1)),
        }
    }

    #[test]
    fn linear_problem_converges_in_one_iteration() {
        let mesh = hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = small_problem(0.0, 3.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let (sol, report) =
            newton_solve(&mesh, &space, &blocks, &problem, &rhs, None, &Default::default())
                .unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!(report.final_residual_norm < 1e-10);
        assert_eq!(sol.values.len(), mesh.n_vertices());
    }

    #[test]
    fn all_schemes_agree_on_weak_nonlinearity() {
        let mesh = hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = small_problem(1e-3, 3.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let mut sols = Vec::new();
        for scheme in [Scheme::Newton, Scheme::Frozen, Scheme::ModifiedNewton] {
            let opts = NonlinearOptions { scheme, ..Default::default() };
            let (sol, report) =
                newton_solve(&mesh, &space, &blocks, &problem, &rhs, None, &opts).unwrap();
            assert!(report.converged, "{scheme:?} failed to converge");
            assert!(report.final_residual_norm < 1e-8, "{scheme:?}");
            sols.push(sol);
        }
        let norm0 = energy_norm_nodal(&space, &blocks, &sols[0].values);
        for s in &sols[1..] {
            let diff: Vec<C64> = sols[0]
                .values
                .iter()
                .zip(&s.values)
                .map(|(a, b)| a - b)
                .collect();
            assert!(energy_norm_nodal(&space, &blocks, &diff) < 1e-8 * norm0);
        }
    }

    #[test]
    fn warm_start_at_fixed_point_converges_immediately() {
        let mesh = hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = small_problem(1e-3, 3.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let (sol, _) =
            newton_solve(&mesh, &space, &blocks, &problem, &rhs, None, &Default::default())
                .unwrap();
        let (_, report) = continuation_step(
            &mesh,
            &space,
            &blocks,
            &problem,
            &rhs,
            &sol,
            &Default::default(),
        )
        .unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn prolongation_preserves_field() {
        let mesh = hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = bistability_problem(1.0, 2.0, 2.5, 1e-3);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let values: Vec<C64> = mesh
            .points
            .iter()
            .map(|p| C64::new(1.5 * p.x - p.y, 0.4 * p.x * 0.0 + 0.7))
            .collect();
        let sol = Solution { mesh_id: mesh.id(), values: values.clone() };
        let fine = refine(&mesh, &[0, 3, 7], 1).unwrap();
        let fsol = prolongate(&sol, &fine).unwrap();

        // energy norm is preserved (same function in a larger space)
        let fspace = FeSpace::new(&fine);
        let fblocks = assemble_blocks(&fine, &fspace, &problem);
        let e0 = energy_norm_nodal(&space, &blocks, &values);
        let e1 = energy_norm_nodal(&fspace, &fblocks, &fsol.values);
        assert!((e0 - e1).abs() < 1e-12 * e0, "{e0} vs {e1}");

        // pointwise agreement at sample points
        for i in 0..50 {
            let s = i as f64 / 50.0;
            let p = crate::geom::Point::new(0.9 * (s - 0.5), 0.7 * (0.5 - s) + 0.1 * s * s);
            let a = eval_p1(&mesh, &values, p).unwrap();
            let b = eval_p1(&fine, &fsol.values, p).unwrap();
            assert!((a - b).norm() < 1e-12, "mismatch at {p:?}");
        }

        // constants prolongate to constants
        let ones = Solution {
            mesh_id: mesh.id(),
            values: vec![C64::new(1.0, 0.0); mesh.n_vertices()],
        };
        let fones = prolongate(&ones, &fine).unwrap();
        assert!(fones.values.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));

        // unrelated mesh is rejected
        let other = hexagon_mesh(2).unwrap();
        assert!(prolongate(&sol, &other).is_err());
    }

    #[test]
    fn single_dof_system_is_closed_form_division() {
        // a one-triangle mesh with two Dirichlet edges leaves one dof
        let mesh = crate::mesh::build_mesh(
            vec![
                crate::geom::Point::new(0.0, 0.0),
                crate::geom::Point::new(1.0, 0.0),
                crate::geom::Point::new(0.0, 1.0),
            ],
            vec![[0, 1, 2]],
            |a, b| {
                if a.x.abs() < 1e-12 && b.x.abs() < 1e-12 {
                    crate::mesh::BoundaryKind::Dirichlet
                } else {
                    crate::mesh::BoundaryKind::Impedance
                }
            },
            |_| false,
        )
        .unwrap();
        let space = FeSpace::new(&mesh);
        assert_eq!(space.n_dofs(), 1);
        let problem = small_problem(0.0, 2.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let zero = vec![C64::new(0.0, 0.0); 3];
        let sys = assemble_system(
            &mesh, &space, &blocks, &problem, C64::new(0.0, 0.0), &zero, &rhs, Scheme::Newton,
        )
        .unwrap();
        let u = solve_linear(&sys).unwrap();
        // dense complex scalar: a·u = b
        let d = sys.mat.to_dense();
        let a = C64::new(d[(0, 0)], d[(1, 0)]);
        let b = C64::new(sys.rhs[(0, 0)], sys.rhs[(1, 0)]);
        assert!((u[0] - b / a).norm() < 1e-13 * (b / a).norm());
    }

    #[test]
    fn quadratic_vs_linear_convergence_signature() {
        // strong enough nonlinearity to need several iterations
        let mesh = hexagon_mesh(4).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = bistability_problem(2.0, 3.0, 2.0, 1e-2);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let newton = newton_solve(
            &mesh,
            &space,
            &blocks,
            &problem,
            &rhs,
            None,
            &NonlinearOptions { tol: 1e-12, ..Default::default() },
        )
        .unwrap()
        .1;
        let frozen = newton_solve(
            &mesh,
            &space,
            &blocks,
            &problem,
            &rhs,
            None,
            &NonlinearOptions { scheme: Scheme::Frozen, tol: 1e-12, ..Default::default() },
        )
        .unwrap()
        .1;
        assert!(newton.converged && frozen.converged);
        assert!(
            newton.iterations < frozen.iterations,
            "newton {} vs frozen {}",
            newton.iterations,
            frozen.iterations
        );
    }
}
