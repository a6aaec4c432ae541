//! P1 finite element assembly: dof management, the sesquilinear form blocks,
//! iterate-dependent Kerr matrices, load vectors, and the real 2N×2N systems
//! of the linearization schemes.
//!
//! The complex form on the continuous level is
//!
//! ```text
//! a_ψ(u, v) = (∇u, ∇v) − (k²(1 + ε 1_{Ω₀} |ψ|²) u, v) + ik⟨u, v⟩_{Γimp} + γ J(u, v)
//! ```
//!
//! with the gradient-jump penalty J(u, v) = Σ_e |e|² [∇u]·[∇v] over interior
//! edges. Each linearization step solves a complex N×N system that is
//! ℝ-linear but (for the Newton scheme) not ℂ-linear, because the derivative
//! of |u|²u contains a u̅ term. Splitting u = u_r + i u_i turns every scheme
//! into one real system over [u_r; u_i], assembled here.

use crate::geom::{signed_area2, Point};
use crate::mesh::{BoundaryKind, Mesh, NO_TRI};
use crate::problem::{ProblemSpec, C64};
use crate::quadrature::{edge_rule, tri_rule};
use crate::{Error, Result};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Continuous P1 space with homogeneous Dirichlet constraints eliminated.
/// Dof order follows vertex order.
pub struct FeSpace {
    pub dof_of_vertex: Vec<Option<u32>>,
    pub vertex_of_dof: Vec<u32>,
}

impl FeSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let dirichlet = mesh.dirichlet_vertices();
        let mut dof_of_vertex = vec![None; mesh.n_vertices()];
        let mut vertex_of_dof = Vec::new();
        for v in 0..mesh.n_vertices() {
            if !dirichlet[v] {
                dof_of_vertex[v] = Some(vertex_of_dof.len() as u32);
                vertex_of_dof.push(v as u32);
            }
        }
        FeSpace { dof_of_vertex, vertex_of_dof }
    }

    pub fn n_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    /// Dof vector → nodal vector with zeros on Dirichlet vertices.
    pub fn expand(&self, dofs: &[C64]) -> Vec<C64> {
        assert_eq!(dofs.len(), self.n_dofs());
        let mut nodal = vec![C64::new(0.0, 0.0); self.dof_of_vertex.len()];
        for (d, &v) in dofs.iter().zip(&self.vertex_of_dof) {
            nodal[v as usize] = *d;
        }
        nodal
    }

    /// Nodal vector → dof vector (drops Dirichlet entries).
    pub fn restrict(&self, nodal: &[C64]) -> Vec<C64> {
        assert_eq!(nodal.len(), self.dof_of_vertex.len());
        self.vertex_of_dof.iter().map(|&v| nodal[v as usize]).collect()
    }
}

/// Real sparse matrix in triplet form over dof indices. Duplicate entries
/// accumulate.
#[derive(Clone, Debug, Default)]
pub struct Coo {
    pub n: usize,
    pub trip: Vec<(u32, u32, f64)>,
}

impl Coo {
    pub fn new(n: usize) -> Self {
        Coo { n, trip: Vec::new() }
    }

    pub fn push(&mut self, i: u32, j: u32, v: f64) {
        self.trip.push((i, j, v));
    }

    /// y += s · A · x for complex x, treating A as the real matrix.
    pub fn acc_mul(&self, s: C64, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for &(i, j, v) in &self.trip {
            y[i as usize] += s * v * x[j as usize];
        }
    }
}

/// Iterate-independent form blocks. The CIP penalty factor γ and the
/// impedance weight k are applied when a system is combined, so the blocks
/// are assembled once per mesh.
pub struct FormBlocks {
    pub n_dofs: usize,
    /// (∇φj, ∇φi)
    pub stiffness: Coo,
    /// (φj, φi)
    pub mass: Coo,
    /// (k(x)² φj, φi) with the piecewise wave number
    pub mass_k: Coo,
    /// ⟨φj, φi⟩ over the impedance boundary
    pub bnd_mass: Coo,
    /// Σ_e |e|² [∇φj]·[∇φi] over interior edges
    pub cip: Coo,
}

/// Gradients of the three barycentric coordinates and the element area.
pub(crate) fn p1_grads(a: Point, b: Point, c: Point) -> ([Point; 3], f64) {
    let two_a = signed_area2(a, b, c);
    let g = [
        Point::new(b.y - c.y, c.x - b.x) * (1.0 / two_a),
        Point::new(c.y - a.y, a.x - c.x) * (1.0 / two_a),
        Point::new(a.y - b.y, b.x - a.x) * (1.0 / two_a),
    ];
    (g, 0.5 * two_a)
}

pub fn assemble_blocks(mesh: &Mesh, space: &FeSpace, problem: &ProblemSpec) -> FormBlocks {
    let n = space.n_dofs();
    let mut stiffness = Coo::new(n);
    let mut mass = Coo::new(n);
    let mut mass_k = Coo::new(n);
    let mut bnd_mass = Coo::new(n);
    let mut cip = Coo::new(n);

    for t in 0..mesh.n_tris() {
        let [a, b, c] = mesh.tri_points(t);
        let (g, area) = p1_grads(a, b, c);
        let ksq = problem.k_sq(mesh.in_kerr[t]);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        for i in 0..3 {
            let Some(di) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs[j] else { continue };
                let m = area * if i == j { 1.0 / 6.0 } else { 1.0 / 12.0 };
                stiffness.push(di, dj, area * g[i].dot(g[j]));
                mass.push(di, dj, m);
                mass_k.push(di, dj, ksq * m);
            }
        }
    }

    // impedance boundary mass: each boundary edge belongs to one triangle
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.kind == BoundaryKind::Impedance {
            let len = mesh.edge_len(e as u32);
            let dofs = edge.v.map(|v| space.dof_of_vertex[v as usize]);
            for i in 0..2 {
                let Some(di) = dofs[i] else { continue };
                for j in 0..2 {
                    let Some(dj) = dofs[j] else { continue };
                    let m = len / 6.0 * if i == j { 2.0 } else { 1.0 };
                    bnd_mass.push(di, dj, m);
                }
            }
        }
    }

    // gradient-jump penalty: for P1 the jump is constant along each edge
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.tris[1] == NO_TRI {
            continue;
        }
        let len = mesh.edge_len(e as u32);
        let (t1, t2) = (edge.tris[0] as usize, edge.tris[1] as usize);
        // jump of ∇φv across e, for the up to four vertices of the edge patch
        let mut verts: Vec<u32> = Vec::with_capacity(4);
        let mut jumps: Vec<Point> = Vec::with_capacity(4);
        for (t, sign) in [(t1, 1.0), (t2, -1.0)] {
            let [a, b, c] = mesh.tri_points(t);
            let (g, _) = p1_grads(a, b, c);
            for (loc, &v) in mesh.tris[t].iter().enumerate() {
                if let Some(pos) = verts.iter().position(|&w| w == v) {
                    jumps[pos] = jumps[pos] + g[loc] * sign;
                } else {
                    verts.push(v);
                    jumps.push(g[loc] * sign);
                }
            }
        }
        let w = len * len * len; // |e|² penalty scale × |e| from the edge integral
        for i in 0..verts.len() {
            let Some(di) = space.dof_of_vertex[verts[i] as usize] else { continue };
            for j in 0..verts.len() {
                let Some(dj) = space.dof_of_vertex[verts[j] as usize] else { continue };
                cip.push(di, dj, w * jumps[i].dot(jumps[j]));
            }
        }
    }

    FormBlocks { n_dofs: n, stiffness, mass, mass_k, bnd_mass, cip }
}

/// Matrices of the Kerr term for the current iterate w, all supported on Ω₀:
/// masses weighted by |w|², 2|w|², Re(w²) and Im(w²).
pub struct KerrMatrices {
    pub w1: Coo,
    pub w2: Coo,
    pub p_re: Coo,
    pub p_im: Coo,
}

pub fn kerr_matrices(mesh: &Mesh, space: &FeSpace, w_nodal: &[C64]) -> KerrMatrices {
    assert_eq!(w_nodal.len(), mesh.n_vertices());
    let n = space.n_dofs();
    let mut out = KerrMatrices {
        w1: Coo::new(n),
        w2: Coo::new(n),
        p_re: Coo::new(n),
        p_im: Coo::new(n),
    };
    // |w_h|² φi φj has degree 4
    let rule = tri_rule(4);
    for t in 0..mesh.n_tris() {
        if !mesh.in_kerr[t] {
            continue;
        }
        let area = mesh.area(t);
        let wv = mesh.tris[t].map(|v| w_nodal[v as usize]);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        let mut abs_loc = [[0.0; 3]; 3];
        let mut re_loc = [[0.0; 3]; 3];
        let mut im_loc = [[0.0; 3]; 3];
        for &(l1, l2, l3, qw) in rule.nodes {
            let lam = [l1, l2, l3];
            let w = wv[0] * l1 + wv[1] * l2 + wv[2] * l3;
            let wsq = w * w;
            let f = qw * area;
            for i in 0..3 {
                for j in 0..3 {
                    let phi = lam[i] * lam[j] * f;
                    abs_loc[i][j] += w.norm_sqr() * phi;
                    re_loc[i][j] += wsq.re * phi;
                    im_loc[i][j] += wsq.im * phi;
                }
            }
        }
        for i in 0..3 {
            let Some(di) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(dj) = dofs[j] else { continue };
                out.w1.push(di, dj, abs_loc[i][j]);
                out.w2.push(di, dj, 2.0 * abs_loc[i][j]);
                out.p_re.push(di, dj, re_loc[i][j]);
                out.p_im.push(di, dj, im_loc[i][j]);
            }
        }
    }
    out
}

/// Cubic Kerr vector (|w_h|² w_h, φi)_{Ω₀}, integrated exactly (degree 4).
pub fn kerr_cubic_vector(mesh: &Mesh, space: &FeSpace, w_nodal: &[C64]) -> Vec<C64> {
    assert_eq!(w_nodal.len(), mesh.n_vertices());
    let mut out = vec![C64::new(0.0, 0.0); space.n_dofs()];
    let rule = tri_rule(4);
    for t in 0..mesh.n_tris() {
        if !mesh.in_kerr[t] {
            continue;
        }
        let area = mesh.area(t);
        let wv = mesh.tris[t].map(|v| w_nodal[v as usize]);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        for &(l1, l2, l3, qw) in rule.nodes {
            let lam = [l1, l2, l3];
            let w = wv[0] * l1 + wv[1] * l2 + wv[2] * l3;
            let val = w.norm_sqr() * w * (qw * area);
            for i in 0..3 {
                if let Some(di) = dofs[i] {
                    out[di as usize] += val * lam[i];
                }
            }
        }
    }
    out
}

/// Quadrature degree for the volume load.
pub const LOAD_QUAD_DEGREE: usize = 6;
/// Gauss point count for boundary data.
pub const EDGE_QUAD_POINTS: usize = 6;

/// Load vector (f, φi) + ⟨g, φi⟩_{Γimp}.
pub fn assemble_rhs(mesh: &Mesh, space: &FeSpace, problem: &ProblemSpec) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); space.n_dofs()];
    let rule = tri_rule(LOAD_QUAD_DEGREE);
    for t in 0..mesh.n_tris() {
        let [a, b, c] = mesh.tri_points(t);
        let area = mesh.area(t);
        let dofs = mesh.tris[t].map(|v| space.dof_of_vertex[v as usize]);
        for &(l1, l2, l3, qw) in rule.nodes {
            let lam = [l1, l2, l3];
            let p = a * l1 + b * l2 + c * l3;
            let fv = (problem.f)(p) * (qw * area);
            for i in 0..3 {
                if let Some(di) = dofs[i] {
                    out[di as usize] += fv * lam[i];
                }
            }
        }
    }
    // boundary term: visit each impedance edge from its unique triangle so
    // the outward normal is available
    for t in 0..mesh.n_tris() {
        for j in 0..3 {
            let e = mesh.tri_edges[t][j] as usize;
            if mesh.edges[e].kind != BoundaryKind::Impedance {
                continue;
            }
            let n = mesh.outward_normal(t, j);
            let va = mesh.tris[t][j] as usize;
            let vb = mesh.tris[t][(j + 1) % 3] as usize;
            let (pa, pb) = (mesh.points[va], mesh.points[vb]);
            let len = pa.dist(pb);
            let dofs = [space.dof_of_vertex[va], space.dof_of_vertex[vb]];
            for &(s, qw) in edge_rule(EDGE_QUAD_POINTS) {
                let p = pa * (1.0 - s) + pb * s;
                let gv = (problem.g)(p, n) * (qw * len);
                if let Some(da) = dofs[0] {
                    out[da as usize] += gv * (1.0 - s);
                }
                if let Some(db) = dofs[1] {
                    out[db as usize] += gv * s;
                }
            }
        }
    }
    out
}

/// Linearization scheme for the fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact Newton step; the u̅ term makes the complex form ℝ-linear only.
    Newton,
    /// Freeze |u|² at the previous iterate.
    Frozen,
    /// Newton with the u̅ term dropped and |w|² doubled.
    ModifiedNewton,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(Scheme::Newton),
            "frozen" => Ok(Scheme::Frozen),
            "modified-newton" => Ok(Scheme::ModifiedNewton),
            other => Err(Error::InvalidParam(format!(
                "unknown scheme '{other}' (expected newton, frozen, modified-newton)"
            ))),
        }
    }
}

/// One linearized step as a real 2N×2N sparse system over [Re u; Im u].
pub struct RealBlockSystem {
    pub n_complex: usize,
    pub mat: SparseColMat<usize, f64>,
    pub rhs: Mat<f64>,
}

/// Newton step system at iterate `u_prev` (nodal values).
pub fn assemble_newton_system(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    gamma: C64,
    u_prev: &[C64],
    rhs_b: &[C64],
) -> Result<RealBlockSystem> {
    assemble_system(mesh, space, blocks, problem, gamma, u_prev, rhs_b, Scheme::Newton)
}

/// Frozen-nonlinearity or modified-Newton step system at iterate `u_prev`.
pub fn assemble_fixed_point_system(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    gamma: C64,
    u_prev: &[C64],
    rhs_b: &[C64],
    modified: bool,
) -> Result<RealBlockSystem> {
    let scheme = if modified { Scheme::ModifiedNewton } else { Scheme::Frozen };
    assemble_system(mesh, space, blocks, problem, gamma, u_prev, rhs_b, scheme)
}

/// Assemble the system of one `scheme` step at iterate `w` (nodal values).
/// With w = 0 every scheme degenerates to the linear Helmholtz system.
pub fn assemble_system(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    gamma: C64,
    w_nodal: &[C64],
    rhs_b: &[C64],
    scheme: Scheme,
) -> Result<RealBlockSystem> {
    let n = space.n_dofs();
    assert_eq!(blocks.n_dofs, n);
    assert_eq!(rhs_b.len(), n);
    let kerr = kerr_matrices(mesh, space, w_nodal);
    // the Kerr term lives where k = k_in
    let tk = problem.k_sq(true) * problem.eps;

    let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
    // dst: 0 → A11+A22 (diagonal blocks), 1 → A21 (+) with A12 (−),
    // 2 → A11 only, 3 → A22 only, 4 → A12+A21 equally
    let add = |trips: &mut Vec<Triplet<usize, usize, f64>>, coo: &Coo, s: f64, dst: u8| {
        if s == 0.0 {
            return;
        }
        for &(i, j, v) in &coo.trip {
            let (i, j, v) = (i as usize, j as usize, s * v);
            match dst {
                0 => {
                    trips.push(Triplet::new(i, j, v));
                    trips.push(Triplet::new(i + n, j + n, v));
                }
                1 => {
                    trips.push(Triplet::new(i + n, j, v));
                    trips.push(Triplet::new(i, j + n, -v));
                }
                2 => trips.push(Triplet::new(i, j, v)),
                3 => trips.push(Triplet::new(i + n, j + n, v)),
                _ => {
                    trips.push(Triplet::new(i, j + n, v));
                    trips.push(Triplet::new(i + n, j, v));
                }
            }
        }
    };

    // A_lin = S − M_k + i k_out B + γ J
    add(&mut trips, &blocks.stiffness, 1.0, 0);
    add(&mut trips, &blocks.mass_k, -1.0, 0);
    add(&mut trips, &blocks.bnd_mass, problem.k_out, 1);
    add(&mut trips, &blocks.cip, gamma.re, 0);
    add(&mut trips, &blocks.cip, gamma.im, 1);

    match scheme {
        Scheme::Newton => {
            add(&mut trips, &kerr.w2, -tk, 0);
            // conjugate-linear part −tk (Pr + iPi) u̅ → [[−Pr, −Pi], [−Pi, Pr]]·tk
            add(&mut trips, &kerr.p_re, -tk, 2);
            add(&mut trips, &kerr.p_re, tk, 3);
            add(&mut trips, &kerr.p_im, -tk, 4);
        }
        Scheme::Frozen => add(&mut trips, &kerr.w1, -tk, 0),
        Scheme::ModifiedNewton => add(&mut trips, &kerr.w2, -tk, 0),
    }

    let mat = SparseColMat::try_new_from_triplets(2 * n, 2 * n, &trips)
        .map_err(|e| Error::LinearSolve(format!("sparse assembly: {e:?}")))?;

    // rhs: b − c · tk (|w|²w, φ) with c = 2 (Newton), 1 (modified), 0 (frozen)
    let c = match scheme {
        Scheme::Newton => 2.0,
        Scheme::ModifiedNewton => 1.0,
        Scheme::Frozen => 0.0,
    };
    let mut b = rhs_b.to_vec();
    if c != 0.0 {
        let cubic = kerr_cubic_vector(mesh, space, w_nodal);
        for (bi, ci) in b.iter_mut().zip(&cubic) {
            *bi -= c * tk * ci;
        }
    }
    let rhs = Mat::from_fn(2 * n, 1, |i, _| if i < n { b[i].re } else { b[i - n].im });
    Ok(RealBlockSystem { n_complex: n, mat, rhs })
}

/// Residual of the nonlinear problem at u (dof vector):
/// r_i = b_i − a_u(u, φi), exact up to quadrature of the data in b.
pub fn residual_vector(
    mesh: &Mesh,
    space: &FeSpace,
    blocks: &FormBlocks,
    problem: &ProblemSpec,
    gamma: C64,
    rhs_b: &[C64],
    u: &[C64],
) -> Vec<C64> {
    let n = space.n_dofs();
    let one = C64::new(1.0, 0.0);
    let mut au = vec![C64::new(0.0, 0.0); n];
    blocks.stiffness.acc_mul(one, u, &mut au);
    blocks.mass_k.acc_mul(-one, u, &mut au);
    blocks.bnd_mass.acc_mul(C64::new(0.0, problem.k_out), u, &mut au);
    blocks.cip.acc_mul(gamma, u, &mut au);
    let tk = problem.k_sq(true) * problem.eps;
    let cubic = kerr_cubic_vector(mesh, space, &space.expand(u));
    let mut r = rhs_b.to_vec();
    for i in 0..n {
        r[i] -= au[i] - tk * cubic[i];
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::unit_square_mesh;
    use crate::problem::Field;
    use faer::prelude::*;
    use std::sync::Arc;

    fn const_problem(f: C64, g: C64, k: f64, eps: f64) -> ProblemSpec {
        ProblemSpec {
            name: "test".into(),
            k_out: k,
            k_in: k,
            eps,
            f: Arc::new(move |_| f),
            g: Arc::new(move |_, _| g),
        }
    }

    #[test]
    fn block_identities_on_unit_square() {
        let mesh = unit_square_mesh();
        let space = FeSpace::new(&mesh);
        assert_eq!(space.n_dofs(), 4);
        let problem = const_problem(C64::new(1.0, 0.0), C64::new(0.0, 0.0), 2.0, 0.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);

        // stiffness annihilates constants
        let ones = vec![C64::new(1.0, 0.0); 4];
        let mut y = vec![C64::new(0.0, 0.0); 4];
        blocks.stiffness.acc_mul(C64::new(1.0, 0.0), &ones, &mut y);
        assert!(y.iter().all(|v| v.norm() < 1e-14));

        // mass sums to the area, k²-mass to k²·area, boundary mass to the perimeter
        let sum = |coo: &Coo| coo.trip.iter().map(|t| t.2).sum::<f64>();
        assert!((sum(&blocks.mass) - 1.0).abs() < 1e-14);
        assert!((sum(&blocks.mass_k) - 4.0).abs() < 1e-13);
        assert!((sum(&blocks.bnd_mass) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn jump_penalty_vanishes_on_linears() {
        let mesh = unit_square_mesh();
        let space = FeSpace::new(&mesh);
        let problem = const_problem(C64::new(0.0, 0.0), C64::new(0.0, 0.0), 1.0, 0.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let lin: Vec<C64> = mesh
            .points
            .iter()
            .map(|p| C64::new(0.7 * p.x - 1.3 * p.y + 0.4, 0.0))
            .collect();
        let mut y = vec![C64::new(0.0, 0.0); 4];
        blocks.cip.acc_mul(C64::new(1.0, 0.0), &space.restrict(&lin), &mut y);
        assert!(y.iter().all(|v| v.norm() < 1e-14), "{y:?}");
        // but it does not vanish on a kink across the diagonal
        let kink: Vec<C64> = mesh
            .points
            .iter()
            .map(|p| C64::new((p.x - p.y).abs(), 0.0))
            .collect();
        let mut z = vec![C64::new(0.0, 0.0); 4];
        blocks.cip.acc_mul(C64::new(1.0, 0.0), &space.restrict(&kink), &mut z);
        assert!(z.iter().any(|v| v.norm() > 1e-6));
    }

    #[test]
    fn kerr_cubic_vector_of_constant_iterate() {
        let mesh = crate::mesh::hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let w = C64::new(2.0, 1.0);
        let nodal = vec![w; mesh.n_vertices()];
        let cubic = kerr_cubic_vector(&mesh, &space, &nodal);
        let total: C64 = cubic.iter().sum();
        let want = w.norm_sqr() * w * mesh.kerr_area();
        assert!((total - want).norm() < 1e-13 * want.norm());
    }

    #[test]
    fn kerr_matrices_of_constant_iterate() {
        let mesh = crate::mesh::hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let w = C64::new(1.0, -2.0);
        let nodal = vec![w; mesh.n_vertices()];
        let kerr = kerr_matrices(&mesh, &space, &nodal);
        let sum = |coo: &Coo| coo.trip.iter().map(|t| t.2).sum::<f64>();
        let a0 = mesh.kerr_area();
        assert!((sum(&kerr.w1) - w.norm_sqr() * a0).abs() < 1e-12 * a0 * w.norm_sqr());
        assert!((sum(&kerr.w2) - 2.0 * w.norm_sqr() * a0).abs() < 1e-12 * a0 * w.norm_sqr());
        assert!((sum(&kerr.p_re) - (w * w).re * a0).abs() < 1e-12 * a0 * w.norm_sqr());
        assert!((sum(&kerr.p_im) - (w * w).im * a0).abs() < 1e-12 * a0 * w.norm_sqr());
    }

    #[test]
    fn rhs_of_constant_data() {
        let mesh = unit_square_mesh();
        let space = FeSpace::new(&mesh);
        // f ≡ 3: Σᵢ (f, φi) = 3·area; g ≡ 2i: Σᵢ ⟨g, φi⟩ = 2i·perimeter
        let problem = const_problem(C64::new(3.0, 0.0), C64::new(0.0, 2.0), 1.0, 0.0);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let total: C64 = rhs.iter().sum();
        assert!((total - C64::new(3.0, 8.0)).norm() < 1e-13);
    }

    #[test]
    fn schemes_coincide_at_zero_iterate() {
        let mesh = crate::mesh::hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let problem = const_problem(C64::new(1.0, 0.5), C64::new(0.0, 0.0), 3.0, 0.1);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let w0 = vec![C64::new(0.0, 0.0); mesh.n_vertices()];
        let gamma = C64::new(-0.05, 0.005);
        let sys: Vec<_> = [Scheme::Newton, Scheme::Frozen, Scheme::ModifiedNewton]
            .iter()
            .map(|&s| {
                assemble_system(&mesh, &space, &blocks, &problem, gamma, &w0, &rhs, s).unwrap()
            })
            .collect();
        let d0 = sys[0].mat.to_dense();
        for s in &sys[1..] {
            let d = s.mat.to_dense();
            let mut diff: f64 = 0.0;
            for i in 0..2 * space.n_dofs() {
                for j in 0..2 * space.n_dofs() {
                    diff = diff.max((d0[(i, j)] - d[(i, j)]).abs());
                }
            }
            assert!(diff < 1e-14);
        }
        // rhs is [Re b; Im b]
        let n = space.n_dofs();
        for i in 0..n {
            assert!((sys[0].rhs[(i, 0)] - rhs[i].re).abs() < 1e-14);
            assert!((sys[0].rhs[(i + n, 0)] - rhs[i].im).abs() < 1e-14);
        }
    }

    #[test]
    fn real_system_matches_complex_action() {
        // for every scheme, the 2N system applied to [Re w; Im w] must equal
        // the complex form evaluated via the blocks and Kerr matrices
        let mesh = crate::mesh::hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let n = space.n_dofs();
        let problem = const_problem(C64::new(0.3, -0.1), C64::new(0.2, 0.0), 2.5, 0.05);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let gamma = C64::new(-0.07, 0.004);
        // some nontrivial iterate and test vector
        let w: Vec<C64> = (0..mesh.n_vertices())
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.81).cos() * 0.5))
            .collect();
        let x: Vec<C64> = (0..n)
            .map(|i| C64::new(0.1 + (i as f64 * 0.11).cos(), (i as f64 * 0.23).sin()))
            .collect();
        let tk = problem.k_sq(true) * problem.eps;
        let kerr = kerr_matrices(&mesh, &space, &w);
        let one = C64::new(1.0, 0.0);

        for scheme in [Scheme::Newton, Scheme::Frozen, Scheme::ModifiedNewton] {
            let sys =
                assemble_system(&mesh, &space, &blocks, &problem, gamma, &w, &rhs, scheme).unwrap();
            let xr = Mat::from_fn(2 * n, 1, |i, _| if i < n { x[i].re } else { x[i - n].im });
            let yr = &sys.mat * &xr;
            // complex reference action
            let mut y = vec![C64::new(0.0, 0.0); n];
            blocks.stiffness.acc_mul(one, &x, &mut y);
            blocks.mass_k.acc_mul(-one, &x, &mut y);
            blocks.bnd_mass.acc_mul(C64::new(0.0, problem.k_out), &x, &mut y);
            blocks.cip.acc_mul(gamma, &x, &mut y);
            match scheme {
                Scheme::Newton => {
                    kerr.w2.acc_mul(-tk * one, &x, &mut y);
                    let xc: Vec<C64> = x.iter().map(|v| v.conj()).collect();
                    kerr.p_re.acc_mul(-tk * one, &xc, &mut y);
                    kerr.p_im.acc_mul(C64::new(0.0, -tk), &xc, &mut y);
                }
                Scheme::Frozen => kerr.w1.acc_mul(-tk * one, &x, &mut y),
                Scheme::ModifiedNewton => kerr.w2.acc_mul(-tk * one, &x, &mut y),
            }
            for i in 0..n {
                let got = C64::new(yr[(i, 0)], yr[(i + n, 0)]);
                assert!(
                    (got - y[i]).norm() < 1e-12 * (1.0 + y[i].norm()),
                    "{scheme:?} row {i}: {got} vs {}",
                    y[i]
                );
            }
        }
    }

    #[test]
    fn dirichlet_dofs_are_eliminated() {
        let mesh = crate::mesh::corner_polygon_mesh(0.25, 0.5).unwrap();
        let space = FeSpace::new(&mesh);
        let n_dir = mesh.dirichlet_vertices().iter().filter(|&&d| d).count();
        assert!(n_dir >= 3);
        assert_eq!(space.n_dofs(), mesh.n_vertices() - n_dir);
        // expand/restrict round-trip
        let dofs: Vec<C64> = (0..space.n_dofs()).map(|i| C64::new(i as f64, -1.0)).collect();
        let nodal = space.expand(&dofs);
        assert_eq!(space.restrict(&nodal), dofs);
        for (v, d) in mesh.dirichlet_vertices().iter().enumerate() {
            if *d {
                assert_eq!(nodal[v], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn residual_vanishes_at_discrete_solution_of_linear_problem() {
        // ε = 0: the residual at the exact discrete solution is zero;
        // here solved densely through faer on the real system
        let mesh = crate::mesh::hexagon_mesh(2).unwrap();
        let space = FeSpace::new(&mesh);
        let n = space.n_dofs();
        let problem = const_problem(C64::new(1.0, 0.0), C64::new(0.5, -0.2), 4.0, 0.0);
        let blocks = assemble_blocks(&mesh, &space, &problem);
        let rhs = assemble_rhs(&mesh, &space, &problem);
        let w0 = vec![C64::new(0.0, 0.0); mesh.n_vertices()];
        let sys = assemble_system(
            &mesh, &space, &blocks, &problem, C64::new(0.0, 0.0), &w0, &rhs, Scheme::Frozen,
        )
        .unwrap();
        let dense = sys.mat.to_dense();
        let sol = dense.partial_piv_lu().solve(&sys.rhs);
        let u: Vec<C64> = (0..n).map(|i| C64::new(sol[(i, 0)], sol[(i + n, 0)])).collect();
        let r = residual_vector(
            &mesh,
            &space,
            &blocks,
            &problem,
            C64::new(0.0, 0.0),
            &rhs,
            &u,
        );
        let rnorm = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let bnorm = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(rnorm < 1e-11 * bnorm, "residual {rnorm:e} vs rhs {bnorm:e}");
        let _ = Field::zero();
    }
}
