//! Problem data for the nonlinear Helmholtz equation and the two built-in
//! experiment setups.
//!
//! A [`ProblemSpec`] carries the wave-number field (piecewise constant:
//! `k_in` on the Kerr subdomain Ω₀, `k_out` elsewhere), the Kerr constant ε,
//! the volume load f, and the impedance trace g. The impedance parameter is
//! `k_out`, since in both setups the boundary lies outside Ω₀.

use crate::geom::Point;
use crate::mesh::Mesh;
use crate::quadrature::tri_rule;
use crate::special::bessel_j_and_prime;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;

pub type C64 = Complex64;

/// Complex scalar field with gradient, used for exact solutions and
/// incident waves.
pub struct Field {
    pub value: Arc<dyn Fn(Point) -> C64 + Send + Sync>,
    pub grad: Arc<dyn Fn(Point) -> (C64, C64) + Send + Sync>,
}

impl Field {
    pub fn zero() -> Self {
        Field {
            value: Arc::new(|_| C64::new(0.0, 0.0)),
            grad: Arc::new(|_| (C64::new(0.0, 0.0), C64::new(0.0, 0.0))),
        }
    }
}

/// Data of one nonlinear Helmholtz problem.
pub struct ProblemSpec {
    pub name: String,
    /// Wave number outside Ω₀ (also the impedance parameter).
    pub k_out: f64,
    /// Wave number inside Ω₀.
    pub k_in: f64,
    /// Kerr constant ε multiplying 1_{Ω₀}|u|²  .
    pub eps: f64,
    /// Volume load.
    pub f: Arc<dyn Fn(Point) -> C64 + Send + Sync>,
    /// Impedance trace g(x, n) = ∂u/∂n + ik u for the data, given the point
    /// and outward unit normal.
    pub g: Arc<dyn Fn(Point, Point) -> C64 + Send + Sync>,
}

impl ProblemSpec {
    /// k² on an element, by its Ω₀ flag.
    pub fn k_sq(&self, in_kerr: bool) -> f64 {
        let k = if in_kerr { self.k_in } else { self.k_out };
        k * k
    }
}

/// Parameters of the corner + soliton manufactured solution.
#[derive(Clone, Copy, Debug)]
struct CornerParams {
    k: f64,
    q: f64,
    r: f64,
    alpha: f64,
    eps: f64,
    beta: f64,
    /// soliton amplitude q√2/(√ε k)
    amp: f64,
}

impl CornerParams {
    fn new(k: f64, q: f64, r: f64) -> Self {
        let eps = k.powi(-2);
        CornerParams {
            k,
            q,
            r,
            alpha: 20.0 / 39.0,
            eps,
            beta: (k * k + q * q).sqrt(),
            amp: q * 2.0f64.sqrt() / (eps.sqrt() * k),
        }
    }

    /// Corner part u₁ = χ₁(ρ) J_α(kρ) sin(α(φ − π/40)) in polar coordinates
    /// at the reentrant corner (2r, 0); the notch flanks lie at φ = ±π/40.
    /// Returns (value, gradient, laplacian); u₁ is real-valued.
    fn u1(&self, p: Point) -> (f64, Point, f64) {
        let d = p - Point::new(2.0 * self.r, 0.0);
        let rho = d.norm();
        if rho >= self.r || rho < 1e-300 {
            return (0.0, Point::new(0.0, 0.0), 0.0);
        }
        // wrap the atan2 cut into the notch wedge (|φ| < π/40, outside Ω) so
        // both flanks evaluate stably: upper edge → φ = π/40, lower → 2π − π/40
        let mut phi = d.y.atan2(d.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let a = self.alpha;
        let ang = a * (phi - PI / 40.0);
        let (sin_a, cos_a) = ang.sin_cos();
        let (j, jp) = bessel_j_and_prime(a, self.k * rho);
        let chi = (1.0 - rho / self.r).powi(2);
        let chi_p = -2.0 * (1.0 - rho / self.r) / self.r;
        let chi_pp = 2.0 / (self.r * self.r);

        let val = chi * j * sin_a;
        // polar gradient: e_ρ ∂_ρ + e_φ (1/ρ)∂_φ
        let du_drho = (chi_p * j + chi * self.k * jp) * sin_a;
        let du_dphi_over_rho = chi * j * a * cos_a / rho;
        let (e_rho, e_phi) = (d * (1.0 / rho), d.perp() * (1.0 / rho));
        let grad = e_rho * du_drho + e_phi * du_dphi_over_rho;
        // Δ(χw) = χΔw + 2χ'∂_ρw + w(χ'' + χ'/ρ) with Δw = -k²w
        let w = j * sin_a;
        let dw_drho = self.k * jp * sin_a;
        let lap = -self.k * self.k * chi * w + 2.0 * chi_p * dw_drho + w * (chi_pp + chi_p / rho);
        (val, grad, lap)
    }

    /// Soliton part u₂ = χ₂(x) · amp · sech(qx) e^{iβy} with
    /// χ₂ = (x² − r²)² on |x| ≤ r. Returns (value, gradient, laplacian).
    fn u2(&self, p: Point) -> (C64, (C64, C64), C64) {
        let zero = C64::new(0.0, 0.0);
        if p.x.abs() >= self.r {
            return (zero, (zero, zero), zero);
        }
        let chi = (p.x * p.x - self.r * self.r).powi(2);
        let chi_p = 4.0 * p.x * (p.x * p.x - self.r * self.r);
        let chi_pp = 12.0 * p.x * p.x - 4.0 * self.r * self.r;
        let s = 1.0 / (self.q * p.x).cosh();
        let tanh = (self.q * p.x).tanh();
        let s_p = -self.q * tanh * s;
        let s_pp = self.q * self.q * s * (1.0 - 2.0 * s * s);
        let phase = C64::new(0.0, self.beta * p.y).exp() * self.amp;

        let prof = chi * s;
        let prof_p = chi_p * s + chi * s_p;
        let prof_pp = chi_pp * s + 2.0 * chi_p * s_p + chi * s_pp;
        let val = phase * prof;
        let grad = (phase * prof_p, C64::new(0.0, self.beta) * phase * prof);
        let lap = phase * prof_pp - self.beta * self.beta * val;
        (val, grad, lap)
    }

    fn value(&self, p: Point) -> C64 {
        let (v1, _, _) = self.u1(p);
        let (v2, _, _) = self.u2(p);
        C64::new(v1, 0.0) + v2
    }

    fn grad(&self, p: Point) -> (C64, C64) {
        let (_, g1, _) = self.u1(p);
        let (_, g2, _) = self.u2(p);
        (g2.0 + g1.x, g2.1 + g1.y)
    }

    fn in_kerr(&self, p: Point) -> bool {
        p.x.abs() <= self.r && p.y.abs() <= self.r
    }

    /// Manufactured load f = −Δu − k²(1 + ε·1_{Ω₀}|u|²)u.
    fn load(&self, p: Point) -> C64 {
        let (v1, _, l1) = self.u1(p);
        let (v2, _, l2) = self.u2(p);
        let u = C64::new(v1, 0.0) + v2;
        let lap = C64::new(l1, 0.0) + l2;
        let mut coeff = 1.0;
        if self.in_kerr(p) {
            coeff += self.eps * u.norm_sqr();
        }
        -lap - self.k * self.k * coeff * u
    }

    fn trace(&self, p: Point, n: Point) -> C64 {
        let (gx, gy) = self.grad(p);
        let u = self.value(p);
        gx * n.x + gy * n.y + C64::new(0.0, self.k) * u
    }
}

/// The accuracy experiment on the notched polygon (see
/// [`crate::mesh::corner_polygon_mesh`]): exact solution u = u₁ + u₂ with a
/// corner singularity of strength α = 20/39 at (2r, 0) and a Kerr soliton
/// along x = 0, ε = k⁻², load and impedance trace derived analytically.
/// u vanishes on the four Dirichlet edges by construction.
pub fn corner_soliton_problem(k: f64, q: f64, r: f64) -> (ProblemSpec, Field) {
    let pr = CornerParams::new(k, q, r);
    let spec = ProblemSpec {
        name: format!("corner-soliton k={k} q={q} r={r}"),
        k_out: k,
        k_in: k,
        eps: pr.eps,
        f: Arc::new(move |p| pr.load(p)),
        g: Arc::new(move |p, n| pr.trace(p, n)),
    };
    let exact = Field {
        value: Arc::new(move |p| pr.value(p)),
        grad: Arc::new(move |p| pr.grad(p)),
    };
    (spec, exact)
}

/// The optical-bistability experiment on the hexagonal cavity (see
/// [`crate::mesh::hexagon_mesh`]): wave number k₀ outside and
/// `contrast`·k₀ inside the inner hexagon, f = 0, and the trace of the
/// collimated Gaussian beam u_inc = I·exp(−k₀²x²/2) as impedance data on
/// the whole boundary.
pub fn bistability_problem(intensity: f64, k0: f64, contrast: f64, eps: f64) -> ProblemSpec {
    ProblemSpec {
        name: format!("bistability k0={k0} contrast={contrast} eps={eps} I={intensity}"),
        k_out: k0,
        k_in: contrast * k0,
        eps,
        f: Arc::new(|_| C64::new(0.0, 0.0)),
        g: Arc::new(move |p, n| {
            let u = intensity * (-0.5 * k0 * k0 * p.x * p.x).exp();
            let dudx = -k0 * k0 * p.x * u;
            C64::new(n.x * dudx, k0 * u)
        }),
    }
}

/// The incident beam of the bistability experiment as a [`Field`], for
/// energy normalization.
pub fn bistability_incident(k0: f64, intensity: f64) -> Field {
    Field {
        value: Arc::new(move |p| C64::new(intensity * (-0.5 * k0 * k0 * p.x * p.x).exp(), 0.0)),
        grad: Arc::new(move |p| {
            let u = intensity * (-0.5 * k0 * k0 * p.x * p.x).exp();
            (C64::new(-k0 * k0 * p.x * u, 0.0), C64::new(0.0, 0.0))
        }),
    }
}

/// Error and reference norms of a P1 function against an exact field.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct Norms {
    /// Full H¹ errors/norms: (|v|₁² + ‖v‖₀²)^{1/2}.
    pub h1_err: f64,
    pub h1_exact: f64,
    pub h1_rel: f64,
    pub l2_err: f64,
    pub l2_exact: f64,
    pub l2_rel: f64,
    /// Energy norm (|v|₁² + ∫k²|v|²)^{1/2} with the piecewise wave number.
    pub energy_err: f64,
    pub energy_exact: f64,
}

/// Compare nodal values of a P1 function against `exact` with an
/// element-wise quadrature of the given degree (≥ 4 so the P1 part is
/// integrated exactly and the exact field is resolved).
pub fn norms_against_exact(
    mesh: &Mesh,
    values: &[C64],
    exact: &Field,
    problem: &ProblemSpec,
    quad_degree: usize,
) -> Norms {
    assert_eq!(values.len(), mesh.n_vertices());
    let rule = tri_rule(quad_degree.max(4));
    let mut h1_err_sq = 0.0;
    let mut h1_ex_sq = 0.0;
    let mut l2_err_sq = 0.0;
    let mut l2_ex_sq = 0.0;
    let mut en_err_sq = 0.0;
    let mut en_ex_sq = 0.0;
    for t in 0..mesh.n_tris() {
        let [a, b, c] = mesh.tri_points(t);
        let [va, vb, vc] = mesh.tris[t].map(|v| values[v as usize]);
        // P1 gradient: constant per element
        let inv2a = 1.0 / crate::geom::signed_area2(a, b, c);
        let gxh = (va * (b.y - c.y) + vb * (c.y - a.y) + vc * (a.y - b.y)) * inv2a;
        let gyh = (va * (c.x - b.x) + vb * (a.x - c.x) + vc * (b.x - a.x)) * inv2a;
        let ksq = problem.k_sq(mesh.in_kerr[t]);

        let mut terms = [0.0; 6]; // grad_err², grad_ex², val_err², val_ex²  (+2 spare)
        let area = mesh.area(t);
        for &(l1, l2, l3, w) in rule.nodes {
            let p = a * l1 + b * l2 + c * l3;
            let ue = (exact.value)(p);
            let (gex, gey) = (exact.grad)(p);
            let uh = va * l1 + vb * l2 + vc * l3;
            let de = ue - uh;
            let (dgx, dgy) = (gex - gxh, gey - gyh);
            terms[0] += w * (dgx.norm_sqr() + dgy.norm_sqr());
            terms[1] += w * (gex.norm_sqr() + gey.norm_sqr());
            terms[2] += w * de.norm_sqr();
            terms[3] += w * (ue.norm_sqr());
        }
        h1_err_sq += area * (terms[0] + terms[2]);
        h1_ex_sq += area * (terms[1] + terms[3]);
        l2_err_sq += area * terms[2];
        l2_ex_sq += area * terms[3];
        en_err_sq += area * (terms[0] + ksq * terms[2]);
        en_ex_sq += area * (terms[1] + ksq * terms[3]);
    }
    Norms {
        h1_err: h1_err_sq.sqrt(),
        h1_exact: h1_ex_sq.sqrt(),
        h1_rel: (h1_err_sq / h1_ex_sq).sqrt(),
        l2_err: l2_err_sq.sqrt(),
        l2_exact: l2_ex_sq.sqrt(),
        l2_rel: (l2_err_sq / l2_ex_sq).sqrt(),
        energy_err: en_err_sq.sqrt(),
        energy_exact: en_ex_sq.sqrt(),
    }
}
