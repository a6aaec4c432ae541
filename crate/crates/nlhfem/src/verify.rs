//! Self-contained oracle suite behind `nlh verify`.
//!
//! Every check recomputes its reference quantity through an independent code
//! path: dense complex matrices from affine coefficients solved per element
//! (instead of the cofactor gradients of the assembly), subset enumeration
//! for the marking, pair scans for mesh topology, finite differences for the
//! manufactured load. A bug shared between the implementation and its oracle
//! would have to be introduced twice.
//!
//! The suite is deterministic: fixed RNG seeds, no timing output, stable
//! float formatting. Running it twice yields identical bytes.

use crate::assembly::{
    assemble_blocks, assemble_rhs, assemble_system, residual_vector, FeSpace, Scheme,
};
use crate::estimator::{dorfler_mark, estimate, estimate_with_sign, EstimateReport};
use crate::geom::{tri_area, Point};
use crate::mesh::{
    build_mesh, corner_polygon_mesh, hexagon_mesh, refine, BoundaryKind, Mesh, NO_TRI,
};
use crate::problem::{corner_soliton_problem, C64, ProblemSpec};
use crate::quadrature::{edge_rule, tri_rule};
use crate::solver::{energy_norm_nodal, newton_solve, relative_residual, NonlinearOptions};
use faer::prelude::*;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Outcome of one oracle check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { name, passed, detail }
    }
}

/// Run the whole suite in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_assembly_dense_equivalence(),
        check_scheme_action_quadrature(),
        check_residual_vector_quadrature(),
        check_energy_norm_quadrature(),
        check_estimator_patch_oracle(),
        check_estimator_mutation_detected(),
        check_dorfler_brute_force(),
        check_refine_conformity_randomized(),
        check_manufactured_load_consistency(),
        check_discrete_residual_after_solve(),
    ]
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

/// Fixed-width pass/fail table plus a summary line.
pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{tag} {:width$}  {}\n", r.name, r.detail));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        out.push_str(&format!("all {} checks passed\n", results.len()));
    } else {
        out.push_str(&format!("{failed} of {} checks failed\n", results.len()));
    }
    out
}

// ---------------------------------------------------------------- fixtures

/// Two-triangle unit square, impedance boundary; optionally all of it Ω₀.
fn square_mesh(kerr: bool) -> Mesh {
    build_mesh(
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        |_, _| BoundaryKind::Impedance,
        move |_| kerr,
    )
    .expect("unit square is a valid mesh")
}

fn poly_problem(k: f64, eps: f64) -> ProblemSpec {
    // polynomial data so that implementation and oracle quadratures are both
    // exact and comparisons hold to rounding
    ProblemSpec {
        name: "verify".into(),
        k_out: k,
        k_in: k,
        eps,
        f: Arc::new(|p| C64::new(0.4 + p.x * p.x - 0.3 * p.y, 0.2 * p.x * p.y - 1.0)),
        g: Arc::new(|p, n| {
            C64::new(0.3 * n.x - 0.1 * n.y + 0.5 * p.x, 0.2 * p.y - 0.7) * (0.8 + 0.4 * p.x)
        }),
    }
}

fn random_nodal(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

// ------------------------------------------------- independent P1 machinery

/// Affine coefficients (c₀, cₓ, c_y) of the three vertex basis functions,
/// from a dense 3×3 solve of φ_j(p_i) = δ_ij. Independent of the cofactor
/// formula used by the assembly.
fn affine_basis(a: Point, b: Point, c: Point) -> [[f64; 3]; 3] {
    let m = Mat::<f64>::from_fn(3, 3, |i, j| {
        let p = [a, b, c][i];
        [1.0, p.x, p.y][j]
    });
    let id = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
    let coef = m.partial_piv_lu().solve(&id);
    std::array::from_fn(|j| [coef[(0, j)], coef[(1, j)], coef[(2, j)]])
}

fn basis_value(coef: &[f64; 3], p: Point) -> f64 {
    coef[0] + coef[1] * p.x + coef[2] * p.y
}

/// Complex P1 gradient on a triangle via the affine coefficients.
fn field_gradient(mesh: &Mesh, u: &[C64], t: usize) -> (C64, C64) {
    let [a, b, c] = mesh.tri_points(t);
    let basis = affine_basis(a, b, c);
    let mut gx = C64::new(0.0, 0.0);
    let mut gy = C64::new(0.0, 0.0);
    for (i, &v) in mesh.tris[t].iter().enumerate() {
        gx += u[v as usize] * basis[i][1];
        gy += u[v as usize] * basis[i][2];
    }
    (gx, gy)
}

/// Outward unit normal of the segment (pa, pb) of a triangle whose third
/// vertex is pc, from scratch.
fn outward(pa: Point, pb: Point, pc: Point) -> Point {
    let d = pb - pa;
    let len = d.norm();
    let mut n = Point::new(d.y / len, -d.x / len);
    if n.dot(pc - pa) > 0.0 {
        n = n * -1.0;
    }
    n
}

/// Dense complex matrix of the linear form (∇u,∇v) − (k²u,v) + ik⟨u,v⟩ over
/// the dof indices, by direct quadrature per element; row i, column j stored
/// at i·n + j.
fn dense_linear_matrix(mesh: &Mesh, space: &FeSpace, problem: &ProblemSpec) -> Vec<C64> {
    let n = space.n_dofs();
    let mut a = vec![C64::new(0.0, 0.0); n * n];
    let rule = tri_rule(6);
    for t in 0..mesh.n_tris() {
        let [pa, pb, pc] = mesh.tri_points(t);
        let area = tri_area(pa, pb, pc);
        let basis = affine_basis(pa, pb, pc);
        let ksq = problem.k_sq(mesh.in_kerr[t]);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        for i in 0..3 {
            let Some(di) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs[j] else { continue };
                let grad = basis[i][1] * basis[j][1] + basis[i][2] * basis[j][2];
                let mut mass = 0.0;
                for &(l1, l2, l3, w) in rule.nodes {
                    let p = pa * l1 + pb * l2 + pc * l3;
                    mass += w * basis_value(&basis[i], p) * basis_value(&basis[j], p);
                }
                let entry = C64::new(area * (grad - ksq * mass), 0.0);
                a[di as usize * n + dj as usize] += entry;
            }
        }
    }
    for edge in &mesh.edges {
        if edge.kind != BoundaryKind::Impedance {
            continue;
        }
        let t = edge.tris[0] as usize;
        let [pa3, pb3, pc3] = mesh.tri_points(t);
        let basis = affine_basis(pa3, pb3, pc3);
        let (qa, qb) = (mesh.points[edge.v[0] as usize], mesh.points[edge.v[1] as usize]);
        let len = qa.dist(qb);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        // integrate all three bases of t along the edge; the opposite one
        // vanishes there by itself
        for i in 0..3 {
            let Some(di) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs[j] else { continue };
                let mut acc = 0.0;
                for &(s, w) in edge_rule(8) {
                    let p = qa * (1.0 - s) + qb * s;
                    acc += w * basis_value(&basis[i], p) * basis_value(&basis[j], p);
                }
                a[di as usize * n + dj as usize] += C64::new(0.0, problem.k_out * acc * len);
            }
        }
    }
    a
}

fn check_assembly_dense_equivalence() -> CheckResult {
    // ε = 0, γ = 0: the block system must reproduce S − k²M + ikB
    let four_tri = refine(&square_mesh(false), &[0, 1], 1).expect("refine square");
    let hexagon = hexagon_mesh(2).expect("hexagon mesh");
    let cases: Vec<(Mesh, ProblemSpec)> = vec![
        (square_mesh(false), poly_problem(2.0, 0.0)),
        (four_tri, poly_problem(3.5, 0.0)),
        // piecewise wave number, impedance all around
        (hexagon, {
            let mut p = poly_problem(2.0, 0.0);
            p.k_in = 5.0;
            p
        }),
    ];
    let mut worst: f64 = 0.0;
    for (mesh, problem) in &cases {
        let space = FeSpace::new(mesh);
        let n = space.n_dofs();
        let zero = vec![C64::new(0.0, 0.0); mesh.n_vertices()];
        let rhs = vec![C64::new(0.0, 0.0); n];
        let sys = match assemble_system(
            mesh, &space, &assemble_blocks(mesh, &space, problem), problem,
            C64::new(0.0, 0.0), &zero, &rhs, Scheme::Newton,
        ) {
            Ok(s) => s,
            Err(e) => return CheckResult::new("assembly-dense-equivalence", false, format!("{e}")),
        };
        let d = sys.mat.to_dense();
        let oracle = dense_linear_matrix(mesh, &space, problem);
        let scale = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                let got = C64::new(d[(i, j)], d[(i + n, j)]);
                // the ε = 0 operator is ℂ-linear: the blocks must satisfy
                // A12 = −A21 and A22 = A11
                let skew = (d[(i, j + n)] + d[(i + n, j)]).abs()
                    + (d[(i + n, j + n)] - d[(i, j)]).abs();
                let dev = ((got - oracle[i * n + j]).norm() + skew) / scale;
                worst = worst.max(dev);
            }
        }
    }
    CheckResult::new(
        "assembly-dense-equivalence",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} over {} meshes (tol 1e-12)", cases.len()),
    )
}

fn check_scheme_action_quadrature() -> CheckResult {
    // each linearization matrix applied to [Re w; Im w] must equal the
    // quadrature of its complex form, Kerr and CIP terms included
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let gamma = C64::new(-0.07, 0.004);
    let cases = [
        (square_mesh(true), poly_problem(2.5, 0.08)),
        (hexagon_mesh(2).expect("hexagon mesh"), {
            let mut p = poly_problem(2.0, 0.05);
            p.k_in = 4.0;
            p
        }),
    ];
    let rule = tri_rule(6);
    let mut worst: f64 = 0.0;
    for (mesh, problem) in &cases {
        let space = FeSpace::new(mesh);
        let n = space.n_dofs();
        let blocks = assemble_blocks(mesh, &space, problem);
        let rhs = vec![C64::new(0.0, 0.0); n];
        let u_prev = random_nodal(&mut rng, mesh.n_vertices());
        let w_dofs = random_nodal(&mut rng, n);
        let w_nodal = space.expand(&w_dofs);
        let tk = problem.k_sq(true) * problem.eps;

        for scheme in [Scheme::Newton, Scheme::Frozen, Scheme::ModifiedNewton] {
            let sys = match assemble_system(
                mesh, &space, &blocks, problem, gamma, &u_prev, &rhs, scheme,
            ) {
                Ok(s) => s,
                Err(e) => {
                    return CheckResult::new("scheme-action-quadrature", false, format!("{e}"))
                }
            };
            let x = Mat::<f64>::from_fn(2 * n, 1, |i, _| {
                if i < n { w_dofs[i].re } else { w_dofs[i - n].im }
            });
            let got_mat = &sys.mat * &x;

            // oracle action by quadrature
            let mut y = vec![C64::new(0.0, 0.0); n];
            for t in 0..mesh.n_tris() {
                let [pa, pb, pc] = mesh.tri_points(t);
                let area = tri_area(pa, pb, pc);
                let basis = affine_basis(pa, pb, pc);
                let ksq = problem.k_sq(mesh.in_kerr[t]);
                let (wgx, wgy) = field_gradient(mesh, &w_nodal, t);
                let verts = mesh.tris[t];
                let dofs = verts.map(|v| space.dof_of_vertex[v as usize]);
                for &(l1, l2, l3, w) in rule.nodes {
                    let p = pa * l1 + pb * l2 + pc * l3;
                    let wv: C64 = (0..3).map(|i| w_nodal[verts[i] as usize] * [l1, l2, l3][i]).sum();
                    let uv: C64 = (0..3).map(|i| u_prev[verts[i] as usize] * [l1, l2, l3][i]).sum();
                    // scheme-dependent zeroth-order coefficient acting on w
                    let kerr: C64 = if mesh.in_kerr[t] {
                        match scheme {
                            Scheme::Newton => {
                                -tk * (2.0 * uv.norm_sqr() * wv + uv * uv * wv.conj())
                            }
                            Scheme::Frozen => -tk * uv.norm_sqr() * wv,
                            Scheme::ModifiedNewton => -tk * 2.0 * uv.norm_sqr() * wv,
                        }
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    for i in 0..3 {
                        let Some(di) = dofs[i] else { continue };
                        let phi = basis_value(&basis[i], p);
                        y[di as usize] += w * area * phi * (kerr - ksq * wv);
                    }
                }
                for i in 0..3 {
                    let Some(di) = dofs[i] else { continue };
                    y[di as usize] += area * (wgx * basis[i][1] + wgy * basis[i][2]);
                }
            }
            // impedance term ik⟨w, φ⟩
            for edge in &mesh.edges {
                if edge.kind != BoundaryKind::Impedance {
                    continue;
                }
                let t = edge.tris[0] as usize;
                let [pa3, pb3, pc3] = mesh.tri_points(t);
                let basis = affine_basis(pa3, pb3, pc3);
                let (qa, qb) = (mesh.points[edge.v[0] as usize], mesh.points[edge.v[1] as usize]);
                let len = qa.dist(qb);
                let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
                for &(s, w) in edge_rule(8) {
                    let p = qa * (1.0 - s) + qb * s;
                    let wv = C64::new(0.0, problem.k_out)
                        * (w_nodal[edge.v[0] as usize] * (1.0 - s)
                            + w_nodal[edge.v[1] as usize] * s);
                    for i in 0..3 {
                        if let Some(di) = dofs[i] {
                            y[di as usize] += w * len * wv * basis_value(&basis[i], p);
                        }
                    }
                }
            }
            // CIP term γ Σ_e |e|³ [∇w]·[∇φ]
            for edge in &mesh.edges {
                if edge.tris[1] == NO_TRI {
                    continue;
                }
                let (t1, t2) = (edge.tris[0] as usize, edge.tris[1] as usize);
                let len = mesh.points[edge.v[0] as usize].dist(mesh.points[edge.v[1] as usize]);
                let (g1x, g1y) = field_gradient(mesh, &w_nodal, t1);
                let (g2x, g2y) = field_gradient(mesh, &w_nodal, t2);
                let (jx, jy) = (g1x - g2x, g1y - g2y);
                // gradient jump of each vertex basis of the edge patch
                let mut contrib: Vec<(u32, Point)> = Vec::new();
                for (t, sgn) in [(t1, 1.0), (t2, -1.0)] {
                    let [pa3, pb3, pc3] = mesh.tri_points(t);
                    let basis = affine_basis(pa3, pb3, pc3);
                    for (i, &v) in mesh.tris[t].iter().enumerate() {
                        let g = Point::new(basis[i][1], basis[i][2]) * sgn;
                        if let Some(slot) = contrib.iter_mut().find(|(w, _)| *w == v) {
                            slot.1 = slot.1 + g;
                        } else {
                            contrib.push((v, g));
                        }
                    }
                }
                for (v, jphi) in contrib {
                    if let Some(di) = space.dof_of_vertex[v as usize] {
                        y[di as usize] +=
                            gamma * len.powi(3) * (jx * jphi.x + jy * jphi.y);
                    }
                }
            }

            let scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-30);
            for i in 0..n {
                let got = C64::new(got_mat[(i, 0)], got_mat[(i + n, 0)]);
                worst = worst.max((got - y[i]).norm() / scale);
            }
        }
    }
    CheckResult::new(
        "scheme-action-quadrature",
        worst <= 1e-10,
        format!("max action deviation {worst:.3e} over 3 schemes x 2 meshes (tol 1e-10)"),
    )
}

fn check_residual_vector_quadrature() -> CheckResult {
    // r_i = (f,φi) + ⟨g,φi⟩ − a_u(u, φi), recomputed entirely by quadrature
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let gamma = C64::new(-0.05, 0.006);
    let mesh = hexagon_mesh(2).expect("hexagon mesh");
    let mut problem = poly_problem(2.0, 0.07);
    problem.k_in = 3.0;
    let space = FeSpace::new(&mesh);
    let n = space.n_dofs();
    let blocks = assemble_blocks(&mesh, &space, &problem);
    let rhs = assemble_rhs(&mesh, &space, &problem);
    let u_dofs = random_nodal(&mut rng, n);
    let u_nodal = space.expand(&u_dofs);
    let got = residual_vector(&mesh, &space, &blocks, &problem, gamma, &rhs, &u_dofs);

    let rule = tri_rule(6);
    let mut want = vec![C64::new(0.0, 0.0); n];
    for t in 0..mesh.n_tris() {
        let [pa, pb, pc] = mesh.tri_points(t);
        let area = tri_area(pa, pb, pc);
        let basis = affine_basis(pa, pb, pc);
        let ksq = problem.k_sq(mesh.in_kerr[t]);
        let (ugx, ugy) = field_gradient(&mesh, &u_nodal, t);
        let verts = mesh.tris[t];
        let dofs = verts.map(|v| space.dof_of_vertex[v as usize]);
        for &(l1, l2, l3, w) in rule.nodes {
            let p = pa * l1 + pb * l2 + pc * l3;
            let uv: C64 = (0..3).map(|i| u_nodal[verts[i] as usize] * [l1, l2, l3][i]).sum();
            let coeff = 1.0 + if mesh.in_kerr[t] { problem.eps * uv.norm_sqr() } else { 0.0 };
            let val = (problem.f)(p) + ksq * coeff * uv;
            for i in 0..3 {
                if let Some(di) = dofs[i] {
                    want[di as usize] += w * area * val * basis_value(&basis[i], p);
                }
            }
        }
        for i in 0..3 {
            if let Some(di) = dofs[i] {
                want[di as usize] -= area * (ugx * basis[i][1] + ugy * basis[i][2]);
            }
        }
    }
    for edge in &mesh.edges {
        if edge.kind != BoundaryKind::Impedance {
            continue;
        }
        let t = edge.tris[0] as usize;
        let [pa3, pb3, pc3] = mesh.tri_points(t);
        let other = mesh.tris[t]
            .iter()
            .position(|v| !edge.v.contains(v))
            .expect("triangle has a vertex off the edge");
        let nrm = outward(
            mesh.points[edge.v[0] as usize],
            mesh.points[edge.v[1] as usize],
            [pa3, pb3, pc3][other],
        );
        let basis = affine_basis(pa3, pb3, pc3);
        let (qa, qb) = (mesh.points[edge.v[0] as usize], mesh.points[edge.v[1] as usize]);
        let len = qa.dist(qb);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        for &(s, w) in edge_rule(8) {
            let p = qa * (1.0 - s) + qb * s;
            let uv = u_nodal[edge.v[0] as usize] * (1.0 - s) + u_nodal[edge.v[1] as usize] * s;
            let val = (problem.g)(p, nrm) - C64::new(0.0, problem.k_out) * uv;
            for i in 0..3 {
                if let Some(di) = dofs[i] {
                    want[di as usize] += w * len * val * basis_value(&basis[i], p);
                }
            }
        }
    }
    // CIP part of a_u(u, φ)
    for edge in &mesh.edges {
        if edge.tris[1] == NO_TRI {
            continue;
        }
        let (t1, t2) = (edge.tris[0] as usize, edge.tris[1] as usize);
        let len = mesh.points[edge.v[0] as usize].dist(mesh.points[edge.v[1] as usize]);
        let (g1x, g1y) = field_gradient(&mesh, &u_nodal, t1);
        let (g2x, g2y) = field_gradient(&mesh, &u_nodal, t2);
        let (jx, jy) = (g1x - g2x, g1y - g2y);
        for (t, sgn) in [(t1, 1.0), (t2, -1.0)] {
            let [pa3, pb3, pc3] = mesh.tri_points(t);
            let basis = affine_basis(pa3, pb3, pc3);
            for (i, &v) in mesh.tris[t].iter().enumerate() {
                if let Some(di) = space.dof_of_vertex[v as usize] {
                    let jphi = Point::new(basis[i][1], basis[i][2]) * sgn;
                    want[di as usize] -=
                        gamma * len.powi(3) * (jx * jphi.x + jy * jphi.y);
                }
            }
        }
    }

    let scale = want.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-30);
    let worst = got
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).norm() / scale)
        .fold(0.0, f64::max);
    CheckResult::new(
        "residual-vector-quadrature",
        worst <= 1e-10,
        format!("max residual deviation {worst:.3e} (tol 1e-10)"),
    )
}

fn check_energy_norm_quadrature() -> CheckResult {
    // u = x + iy on the hexagon: ‖u‖_E² = 2|Ω| + ∫ k(x)²(x² + y²)
    let mesh = hexagon_mesh(4).expect("hexagon mesh");
    let mut problem = poly_problem(2.0, 0.0);
    problem.k_in = 5.0;
    let space = FeSpace::new(&mesh);
    let blocks = assemble_blocks(&mesh, &space, &problem);
    let nodal: Vec<C64> = mesh.points.iter().map(|p| C64::new(p.x, p.y)).collect();
    let got = energy_norm_nodal(&space, &blocks, &nodal);
    let rule = tri_rule(2);
    let mut want_sq = 0.0;
    for t in 0..mesh.n_tris() {
        let [pa, pb, pc] = mesh.tri_points(t);
        let area = tri_area(pa, pb, pc);
        let ksq = problem.k_sq(mesh.in_kerr[t]);
        for &(l1, l2, l3, w) in rule.nodes {
            let p = pa * l1 + pb * l2 + pc * l3;
            want_sq += w * area * (2.0 + ksq * (p.x * p.x + p.y * p.y));
        }
    }
    let want = want_sq.sqrt();
    let dev = (got - want).abs() / want;
    CheckResult::new(
        "energy-norm-quadrature",
        dev <= 1e-10,
        format!("|got - oracle|/oracle = {dev:.3e} (tol 1e-10)"),
    )
}

/// Brute-force recomputation of η_T² and (η_T^std)² with its own topology
/// scans and quadratures.
fn brute_force_estimate(mesh: &Mesh, problem: &ProblemSpec, u: &[C64]) -> (Vec<f64>, Vec<f64>) {
    let nt = mesh.n_tris();
    let rule = tri_rule(6);
    // volume residual by a composite rule over the four midpoint children
    let vol: Vec<f64> = (0..nt)
        .map(|t| {
            let [a, b, c] = mesh.tri_points(t);
            let (ab, bc, ca) = (a.midpoint(b), b.midpoint(c), c.midpoint(a));
            let ksq = problem.k_sq(mesh.in_kerr[t]);
            let verts = mesh.tris[t];
            let basis = affine_basis(a, b, c);
            let mut acc = 0.0;
            for kid in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
                let karea = tri_area(kid[0], kid[1], kid[2]);
                for &(l1, l2, l3, w) in rule.nodes {
                    let p = kid[0] * l1 + kid[1] * l2 + kid[2] * l3;
                    let uv: C64 = (0..3)
                        .map(|i| u[verts[i] as usize] * basis_value(&basis[i], p))
                        .sum();
                    let coeff =
                        1.0 + if mesh.in_kerr[t] { problem.eps * uv.norm_sqr() } else { 0.0 };
                    acc += w * karea * ((problem.f)(p) + ksq * coeff * uv).norm_sqr();
                }
            }
            acc
        })
        .collect();

    // edge terms per triangle by vertex-pair scanning
    let pair_key = |p: u32, q: u32| (p.min(q), p.max(q));
    let edge_kind = |p: u32, q: u32| {
        mesh.edges
            .iter()
            .find(|e| pair_key(e.v[0], e.v[1]) == pair_key(p, q))
            .map(|e| e.kind)
            .expect("every triangle side is a mesh edge")
    };
    let mut eta_sq = vec![0.0; nt];
    let mut eta_std_sq = vec![0.0; nt];
    for t in 0..nt {
        let area = mesh.area(t);
        let h = area.sqrt();
        let verts = mesh.tris[t];
        let pts = mesh.tri_points(t);
        let mut patch = h * h * vol[t];
        let mut bdry = 0.0;
        for j in 0..3 {
            let (p, q) = (verts[j], verts[(j + 1) % 3]);
            // the neighbor is the only other triangle containing both p and q
            let neighbor = (0..nt).find(|&s| {
                s != t && mesh.tris[s].contains(&p) && mesh.tris[s].contains(&q)
            });
            let (qa, qb) = (mesh.points[p as usize], mesh.points[q as usize]);
            let len = qa.dist(qb);
            match neighbor {
                Some(s) => {
                    patch += mesh.area(s) * vol[s];
                    let (g1x, g1y) = field_gradient(mesh, u, t);
                    let (g2x, g2y) = field_gradient(mesh, u, s);
                    let jump =
                        (g1x - g2x).norm_sqr() + (g1y - g2y).norm_sqr();
                    bdry += 0.25 * jump * len;
                }
                None => match edge_kind(p, q) {
                    BoundaryKind::Dirichlet => {}
                    BoundaryKind::Interior => unreachable!("boundary side tagged interior"),
                    BoundaryKind::Impedance => {
                        let nrm = outward(qa, qb, pts[(j + 2) % 3]);
                        let (gx, gy) = field_gradient(mesh, u, t);
                        let dn = gx * nrm.x + gy * nrm.y;
                        let mut acc = 0.0;
                        for &(s8, w) in edge_rule(8) {
                            let pp = qa * (1.0 - s8) + qb * s8;
                            let uv = u[p as usize] * (1.0 - s8) + u[q as usize] * s8;
                            let r = -dn - C64::new(0.0, problem.k_out) * uv
                                + (problem.g)(pp, nrm);
                            acc += w * r.norm_sqr();
                        }
                        bdry += acc * len;
                    }
                },
            }
        }
        eta_std_sq[t] = h * h * vol[t] + h * bdry;
        eta_sq[t] = patch + h * bdry;
    }
    (eta_sq, eta_std_sq)
}

fn estimator_fixture() -> (Mesh, ProblemSpec, Vec<C64>) {
    let mesh = refine(&square_mesh(true), &[0, 1], 1).expect("refine square");
    let problem = poly_problem(2.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let u = random_nodal(&mut rng, mesh.n_vertices());
    (mesh, problem, u)
}

fn check_estimator_patch_oracle() -> CheckResult {
    let (mesh, problem, u) = estimator_fixture();
    let rep = estimate(&mesh, &problem, &u);
    let (eta_sq, eta_std_sq) = brute_force_estimate(&mesh, &problem, &u);
    let scale = eta_sq.iter().cloned().fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for t in 0..mesh.n_tris() {
        worst = worst.max((rep.eta_sq[t] - eta_sq[t]).abs() / scale);
        worst = worst.max((rep.eta_std_sq[t] - eta_std_sq[t]).abs() / scale);
    }
    CheckResult::new(
        "estimator-patch-oracle",
        worst <= 1e-12,
        format!(
            "max indicator deviation {worst:.3e} on a {}-element mesh (tol 1e-12)",
            mesh.n_tris()
        ),
    )
}

fn check_estimator_mutation_detected() -> CheckResult {
    // flipping the jump sign (adding the neighbor gradient instead of
    // subtracting it) must be caught by the brute-force comparison,
    // otherwise the patch oracle has no teeth
    let (mesh, problem, u) = estimator_fixture();
    let mutated = estimate_with_sign(&mesh, &problem, &u, -1.0);
    let (eta_sq, _) = brute_force_estimate(&mesh, &problem, &u);
    let scale = eta_sq.iter().cloned().fold(0.0, f64::max);
    let dev = mutated
        .eta_sq
        .iter()
        .zip(&eta_sq)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max);
    CheckResult::new(
        "estimator-mutation-detected",
        dev > 1e-6,
        format!("jump-sign flip moves indicators by {dev:.3e} (must exceed 1e-6)"),
    )
}

fn check_dorfler_brute_force() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let thetas = [0.2, 0.4, 0.7, 1.0];
    let mut cases = 0usize;
    for _ in 0..200 {
        let n = rng.gen_range(1..=12);
        let eta_sq: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..1.0) })
            .collect();
        let rep = EstimateReport {
            mesh_id: 0,
            eta_total: eta_sq.iter().sum::<f64>().sqrt(),
            eta_std_total: 0.0,
            osc_total: 0.0,
            eta_std_sq: vec![0.0; n],
            osc_sq: vec![0.0; n],
            eta_sq: eta_sq.clone(),
        };
        let total: f64 = eta_sq.iter().sum();
        for theta in thetas {
            let marked = match dorfler_mark(&rep, theta) {
                Ok(m) => m,
                Err(e) => return CheckResult::new("dorfler-brute-force", false, format!("{e}")),
            };
            // minimal cardinality over all subsets
            let target = theta * theta * total;
            let mut min_card = usize::MAX;
            for mask in 0u32..(1 << n) {
                let mass: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| eta_sq[i]).sum();
                if mass >= target || total <= 0.0 {
                    min_card = min_card.min(mask.count_ones() as usize);
                }
            }
            let mass: f64 = marked.iter().map(|&t| eta_sq[t]).sum();
            let ok = marked.len() == min_card && mass >= target * (1.0 - 1e-12);
            if !ok {
                return CheckResult::new(
                    "dorfler-brute-force",
                    false,
                    format!(
                        "greedy {} vs minimal {min_card} at theta {theta} for {eta_sq:?}",
                        marked.len()
                    ),
                );
            }
            cases += 1;
        }
    }
    CheckResult::new(
        "dorfler-brute-force",
        true,
        format!("{cases} draws match subset enumeration and hold the marking bound"),
    )
}

fn check_refine_conformity_randomized() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let initial = [
        hexagon_mesh(2).expect("hexagon mesh"),
        corner_polygon_mesh(0.25, 0.3).expect("corner mesh"),
    ];
    let mut cycles = 0usize;
    let mut min_angle = f64::INFINITY;
    for m0 in &initial {
        let floor = m0.min_angle_deg() / 3.0;
        let (area0, kerr0) = (m0.total_area(), m0.kerr_area());
        let mut mesh = refine(m0, &[], 1).expect("identity refine");
        for _ in 0..30 {
            let mut marked: Vec<usize> =
                (0..mesh.n_tris()).filter(|_| rng.gen_bool(0.25)).collect();
            if marked.is_empty() {
                marked.push(rng.gen_range(0..mesh.n_tris()));
            }
            mesh = match refine(&mesh, &marked, 1) {
                Ok(m) => m,
                Err(e) => {
                    return CheckResult::new(
                        "refine-conformity-randomized",
                        false,
                        format!("refinement failed: {e}"),
                    )
                }
            };
            cycles += 1;
            if let Err(e) = mesh.check_conformity() {
                return CheckResult::new(
                    "refine-conformity-randomized",
                    false,
                    format!("after {cycles} cycles: {e}"),
                );
            }
            let darea = (mesh.total_area() - area0).abs() / area0;
            let dkerr = (mesh.kerr_area() - kerr0).abs() / kerr0.max(1e-300);
            let ang = mesh.min_angle_deg();
            min_angle = min_angle.min(ang);
            if darea > 1e-12 || dkerr > 1e-12 || ang < floor {
                return CheckResult::new(
                    "refine-conformity-randomized",
                    false,
                    format!(
                        "after {cycles} cycles: area drift {darea:.3e}, kerr drift {dkerr:.3e}, min angle {ang:.2} deg (floor {floor:.2})"
                    ),
                );
            }
            if mesh.n_tris() > 1500 {
                mesh = refine(m0, &[], 1).expect("identity refine");
            }
        }
    }
    CheckResult::new(
        "refine-conformity-randomized",
        true,
        format!("{cycles} mark/refine cycles conforming, min angle {min_angle:.2} deg"),
    )
}

fn check_manufactured_load_consistency() -> CheckResult {
    // the analytic load must satisfy f = −Δu − k²(1 + ε 1_{Ω₀}|u|²)u; the
    // Laplacian is recomputed by five-point differences with Richardson
    // extrapolation
    let r = 0.25;
    let (spec, exact) = corner_soliton_problem(5.0, 1.0, r);
    let lap_fd = |p: Point, h: f64| -> C64 {
        let f = &exact.value;
        let lap = |h: f64| {
            (f(Point::new(p.x + h, p.y))
                + f(Point::new(p.x - h, p.y))
                + f(Point::new(p.x, p.y + h))
                + f(Point::new(p.x, p.y - h))
                - 4.0 * f(p))
                / (h * h)
        };
        (lap(h / 2.0) * 4.0 - lap(h)) / 3.0
    };
    let pts = [
        Point::new(0.05, 0.1),
        Point::new(0.13, -0.21),
        Point::new(0.62, 0.04),
        Point::new(0.55, -0.08),
        Point::new(0.1, 0.6),
        Point::new(-0.6, 0.3),
        Point::new(0.22, 0.18),
        Point::new(0.4, -0.55),
    ];
    let mut worst: f64 = 0.0;
    for p in pts {
        let u = (exact.value)(p);
        let in_kerr = p.x.abs() <= r && p.y.abs() <= r;
        let coeff = 1.0 + if in_kerr { spec.eps * u.norm_sqr() } else { 0.0 };
        let want = -lap_fd(p, 2e-4) - spec.k_out * spec.k_out * coeff * u;
        let got = (spec.f)(p);
        let scale = want.norm().max(25.0 * u.norm()).max(1.0);
        worst = worst.max((got - want).norm() / scale);
    }
    CheckResult::new(
        "manufactured-load-consistency",
        worst <= 2e-5,
        format!("max FD load deviation {worst:.3e} over {} points (tol 2e-5)", pts.len()),
    )
}

fn check_discrete_residual_after_solve() -> CheckResult {
    // end to end: Newton on the manufactured problem drives the discrete
    // residual to the solver tolerance
    let (problem, _) = corner_soliton_problem(5.0, 1.0, 0.25);
    let mesh = match corner_polygon_mesh(0.25, 0.25) {
        Ok(m) => m,
        Err(e) => return CheckResult::new("discrete-residual-after-solve", false, format!("{e}")),
    };
    let space = FeSpace::new(&mesh);
    let blocks = assemble_blocks(&mesh, &space, &problem);
    let rhs = assemble_rhs(&mesh, &space, &problem);
    let opts = NonlinearOptions::default();
    let (sol, report) = match newton_solve(&mesh, &space, &blocks, &problem, &rhs, None, &opts) {
        Ok(v) => v,
        Err(e) => return CheckResult::new("discrete-residual-after-solve", false, format!("{e}")),
    };
    let rel = relative_residual(&mesh, &space, &blocks, &problem, opts.gamma, &rhs, &sol);
    let ok = report.converged && rel <= 1e-8;
    CheckResult::new(
        "discrete-residual-after-solve",
        ok,
        format!(
            "{} Newton steps on {} elements, relative residual {rel:.3e} (tol 1e-8)",
            report.iterations,
            mesh.n_tris()
        ),
    )
}
