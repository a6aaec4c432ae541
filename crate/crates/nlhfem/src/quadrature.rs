//! Fixed symmetric quadrature rules on triangles and Gauss-Legendre rules on
//! edges.
//!
//! Triangle rules are stored in barycentric coordinates with weights summing
//! to one, so `∫_T f ≈ |T| · Σ w_i f(x_i)`. Edge rules live on [0, 1] with
//! weights summing to one, so `∫_e f ≈ |e| · Σ w_i f(x(t_i))`.

use crate::geom::Point;

/// One triangle quadrature node: barycentric coordinates and weight.
pub type TriNode = (f64, f64, f64, f64);

/// Quadrature rule on the triangle, exact up to `degree`.
#[derive(Clone, Copy, Debug)]
pub struct TriRule {
    pub degree: usize,
    pub nodes: &'static [TriNode],
}

const D1: [TriNode; 1] = [(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0)];

const D2: [TriNode; 3] = [
    (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0),
    (1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0),
];

const D4_A: f64 = 0.445948490915965;
const D4_B: f64 = 0.091576213509771;
const D4_WA: f64 = 0.223381589678011;
const D4_WB: f64 = 0.109951743655322;
const D4: [TriNode; 6] = [
    (1.0 - 2.0 * D4_A, D4_A, D4_A, D4_WA),
    (D4_A, 1.0 - 2.0 * D4_A, D4_A, D4_WA),
    (D4_A, D4_A, 1.0 - 2.0 * D4_A, D4_WA),
    (1.0 - 2.0 * D4_B, D4_B, D4_B, D4_WB),
    (D4_B, 1.0 - 2.0 * D4_B, D4_B, D4_WB),
    (D4_B, D4_B, 1.0 - 2.0 * D4_B, D4_WB),
];

const D5_A: f64 = 0.470142064105115;
const D5_B: f64 = 0.101286507323456;
const D5_WA: f64 = 0.132394152788506;
const D5_WB: f64 = 0.125939180544827;
const D5: [TriNode; 7] = [
    (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225),
    (1.0 - 2.0 * D5_A, D5_A, D5_A, D5_WA),
    (D5_A, 1.0 - 2.0 * D5_A, D5_A, D5_WA),
    (D5_A, D5_A, 1.0 - 2.0 * D5_A, D5_WA),
    (1.0 - 2.0 * D5_B, D5_B, D5_B, D5_WB),
    (D5_B, 1.0 - 2.0 * D5_B, D5_B, D5_WB),
    (D5_B, D5_B, 1.0 - 2.0 * D5_B, D5_WB),
];

const D6_A: f64 = 0.249286745170910;
const D6_B: f64 = 0.063089014491502;
const D6_C1: f64 = 0.310352451033785;
const D6_C2: f64 = 0.053145049844816;
const D6_C3: f64 = 1.0 - D6_C1 - D6_C2;
const D6_WA: f64 = 0.116786275726379;
const D6_WB: f64 = 0.050844906370207;
const D6_WC: f64 = 0.082851075618374;
const D6: [TriNode; 12] = [
    (1.0 - 2.0 * D6_A, D6_A, D6_A, D6_WA),
    (D6_A, 1.0 - 2.0 * D6_A, D6_A, D6_WA),
    (D6_A, D6_A, 1.0 - 2.0 * D6_A, D6_WA),
    (1.0 - 2.0 * D6_B, D6_B, D6_B, D6_WB),
    (D6_B, 1.0 - 2.0 * D6_B, D6_B, D6_WB),
    (D6_B, D6_B, 1.0 - 2.0 * D6_B, D6_WB),
    (D6_C1, D6_C2, D6_C3, D6_WC),
    (D6_C1, D6_C3, D6_C2, D6_WC),
    (D6_C2, D6_C1, D6_C3, D6_WC),
    (D6_C2, D6_C3, D6_C1, D6_WC),
    (D6_C3, D6_C1, D6_C2, D6_WC),
    (D6_C3, D6_C2, D6_C1, D6_WC),
];

/// Smallest stored rule exact for polynomials of degree `min_degree`.
///
/// # Panics
///
/// Panics for `min_degree > 6`; use [`composite_tri_quad`] when more
/// resolution is needed.
pub fn tri_rule(min_degree: usize) -> TriRule {
    match min_degree {
        0 | 1 => TriRule { degree: 1, nodes: &D1 },
        2 => TriRule { degree: 2, nodes: &D2 },
        3 | 4 => TriRule { degree: 4, nodes: &D4 },
        5 => TriRule { degree: 5, nodes: &D5 },
        6 => TriRule { degree: 6, nodes: &D6 },
        d => panic!("no stored triangle rule of degree {d}"),
    }
}

/// Integrate `f` over the triangle (a, b, c) with the given rule.
pub fn tri_quad<F: FnMut(Point) -> f64>(rule: TriRule, a: Point, b: Point, c: Point, mut f: F) -> f64 {
    let area = crate::geom::tri_area(a, b, c);
    let mut acc = 0.0;
    for &(l1, l2, l3, w) in rule.nodes {
        let p = a * l1 + b * l2 + c * l3;
        acc += w * f(p);
    }
    area * acc
}

/// Integrate `f` over (a, b, c) by uniform 4^levels subdivision, applying the
/// degree-6 rule on each child. Used as a dense reference in oracle checks.
pub fn composite_tri_quad<F: FnMut(Point) -> f64>(
    levels: usize,
    a: Point,
    b: Point,
    c: Point,
    f: &mut F,
) -> f64 {
    if levels == 0 {
        return tri_quad(tri_rule(6), a, b, c, f);
    }
    let ab = a.midpoint(b);
    let bc = b.midpoint(c);
    let ca = c.midpoint(a);
    composite_tri_quad(levels - 1, a, ab, ca, f)
        + composite_tri_quad(levels - 1, ab, b, bc, f)
        + composite_tri_quad(levels - 1, ca, bc, c, f)
        + composite_tri_quad(levels - 1, ab, bc, ca, f)
}

/// One edge quadrature node: position in [0, 1] and weight.
pub type EdgeNode = (f64, f64);

const GL2: [EdgeNode; 2] = [
    (0.211324865405187118, 0.5),
    (0.788675134594812882, 0.5),
];

const GL3: [EdgeNode; 3] = [
    (0.112701665379258311, 0.277777777777777778),
    (0.5, 0.444444444444444444),
    (0.887298334620741689, 0.277777777777777778),
];

const GL4: [EdgeNode; 4] = [
    (0.0694318442029737124, 0.173927422568726929),
    (0.330009478207571868, 0.326072577431273071),
    (0.669990521792428132, 0.326072577431273071),
    (0.930568155797026288, 0.173927422568726929),
];

const GL6: [EdgeNode; 6] = [
    (0.0337652428984239861, 0.0856622461895851725),
    (0.169395306766867743, 0.180380786524069304),
    (0.380690406958401546, 0.233956967286345524),
    (0.619309593041598454, 0.233956967286345524),
    (0.830604693233132257, 0.180380786524069304),
    (0.966234757101576014, 0.0856622461895851725),
];

const GL8: [EdgeNode; 8] = [
    (0.0198550717512318842, 0.0506142681451881296),
    (0.10166676129318663, 0.111190517226687235),
    (0.237233795041835507, 0.156853322938943644),
    (0.408282678752175098, 0.181341891689180991),
    (0.591717321247824902, 0.181341891689180991),
    (0.762766204958164493, 0.156853322938943644),
    (0.89833323870681337, 0.111190517226687235),
    (0.980144928248768116, 0.0506142681451881296),
];

/// Gauss-Legendre rule on [0, 1] with `n` points (exact degree 2n-1).
///
/// # Panics
///
/// Panics unless `n` is one of 2, 3, 4, 6, 8.
pub fn edge_rule(n: usize) -> &'static [EdgeNode] {
    match n {
        2 => &GL2,
        3 => &GL3,
        4 => &GL4,
        6 => &GL6,
        8 => &GL8,
        _ => panic!("no stored edge rule with {n} points"),
    }
}

/// Integrate `f` along the segment a→b with an `n`-point Gauss rule.
pub fn edge_quad<F: FnMut(Point) -> f64>(n: usize, a: Point, b: Point, mut f: F) -> f64 {
    let len = a.dist(b);
    let mut acc = 0.0;
    for &(t, w) in edge_rule(n) {
        let p = a + (b - a) * t;
        acc += w * f(p);
    }
    len * acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// ∫ x^p y^q over the unit right triangle = p! q! / (p+q+2)!.
    #[test]
    fn tri_rules_are_exact_to_stated_degree() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        let c = Point::new(0.0, 1.0);
        for deg in [1usize, 2, 4, 5, 6] {
            let rule = tri_rule(deg);
            for p in 0..=deg {
                for q in 0..=(deg - p) {
                    let exact = factorial(p) * factorial(q) / factorial(p + q + 2);
                    let got = tri_quad(rule, a, b, c, |pt| pt.x.powi(p as i32) * pt.y.powi(q as i32));
                    assert!(
                        (got - exact).abs() <= 1e-14 * exact.max(1.0),
                        "rule deg {deg} fails on x^{p} y^{q}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn tri_rules_invariant_under_vertex_permutation() {
        let a = Point::new(0.3, -0.2);
        let b = Point::new(1.7, 0.4);
        let c = Point::new(0.5, 2.1);
        let f = |p: Point| (3.1 * p.x - 1.2 * p.y).sin() + p.x * p.y;
        for deg in [2usize, 4, 5, 6] {
            let r = tri_rule(deg);
            let v1 = tri_quad(r, a, b, c, f);
            let v2 = tri_quad(r, b, c, a, f);
            let v3 = tri_quad(r, c, a, b, f);
            assert!((v1 - v2).abs() < 1e-14 && (v1 - v3).abs() < 1e-14);
        }
    }

    #[test]
    fn edge_rules_integrate_polynomials() {
        let a = Point::new(1.0, 2.0);
        let b = Point::new(4.0, 6.0); // length 5
        for n in [2usize, 3, 4, 6, 8] {
            let deg = 2 * n - 1;
            // parameterize by arc length fraction t; integrate t^d exactly
            for d in 0..=deg {
                let got = edge_quad(n, a, b, |p| ((p.x - 1.0) / 3.0).powi(d as i32));
                let exact = 5.0 / (d as f64 + 1.0);
                assert!(
                    (got - exact).abs() < 1e-13 * exact,
                    "GL{n} fails on t^{d}"
                );
            }
        }
    }

    #[test]
    fn composite_rule_converges_on_oscillatory_integrand() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        let c = Point::new(0.0, 1.0);
        let mut f = |p: Point| (20.0 * p.x).cos() * (13.0 * p.y).sin();
        let coarse = composite_tri_quad(4, a, b, c, &mut f);
        let fine = composite_tri_quad(6, a, b, c, &mut f);
        assert!((coarse - fine).abs() < 1e-9, "{coarse} vs {fine}");
    }
}
