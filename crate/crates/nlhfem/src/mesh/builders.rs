//! Built-in meshes for the two experiment domains: the hexagonal cavity and
//! the notched polygon with a reentrant corner.

use super::{build_labeled_mesh, refine, BoundaryKind, Mesh};
use crate::geom::Point;
use crate::{Error, Result};
use std::collections::HashMap;

/// Equilateral triangulation 𝒢_m of a regular hexagon with circumradius 1
/// centered at the origin: 6m² triangles of side 1/m. The Kerr subdomain Ω₀
/// is the concentric hexagon with circumradius 1/2, which is resolved
/// exactly by the lattice; this requires even `m`. The whole boundary is
/// impedance.
pub fn hexagon_mesh(m: usize) -> Result<Mesh> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "hexagon mesh needs even m >= 2 to resolve the inner hexagon, got {m}"
        )));
    }
    let n = m as i64;
    let in_hex = |i: i64, j: i64, radius: i64| i.abs() <= radius && j.abs() <= radius && (i + j).abs() <= radius;

    // lattice basis e1 = (1, 0)/m, e2 = (1/2, √3/2)/m
    let mut ids: HashMap<(i64, i64), u32> = HashMap::new();
    let mut points = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            if in_hex(i, j, n) {
                ids.insert((i, j), points.len() as u32);
                points.push(Point::new(
                    (i as f64 + 0.5 * j as f64) / m as f64,
                    j as f64 * (3.0f64.sqrt() / 2.0) / m as f64,
                ));
            }
        }
    }

    let mut tris = Vec::with_capacity(6 * m * m);
    let mut kerr = Vec::with_capacity(6 * m * m);
    // Ω₀ membership via the integer centroid test: 3·centroid of an up
    // triangle at (i, j) is (3i+1, 3j+1), of a down triangle (3i+2, 3j+2);
    // comparing against radius 3m/2 is exact and never ties (mod 3).
    //
    // Refinement edges are the horizontal lattice edges: the bottom of each
    // up triangle, the top of each down triangle. Every interior horizontal
    // edge is then designated by both of its triangles, the slanted edges by
    // neither — a strongly compatible labeling.
    let inner = 3 * n / 2;
    for j in -n..n {
        for i in -n..n {
            if in_hex(i, j, n) && in_hex(i + 1, j, n) && in_hex(i, j + 1, n) {
                tris.push([ids[&(i, j)], ids[&(i + 1, j)], ids[&(i, j + 1)]]);
                kerr.push(in_hex(3 * i + 1, 3 * j + 1, inner));
            }
            if in_hex(i + 1, j, n) && in_hex(i + 1, j + 1, n) && in_hex(i, j + 1, n) {
                tris.push([ids[&(i + 1, j + 1)], ids[&(i, j + 1)], ids[&(i + 1, j)]]);
                kerr.push(in_hex(3 * i + 2, 3 * j + 2, inner));
            }
        }
    }
    debug_assert_eq!(tris.len(), 6 * m * m);

    let mut mesh = build_labeled_mesh(points, tris, |_, _| BoundaryKind::Impedance, |_| false)?;
    mesh.in_kerr = kerr;
    Ok(mesh)
}

/// The accuracy-experiment domain: a 7R×8R rectangle-like polygon with a
/// thin notch cut toward (2R, 0), leaving a reentrant corner of interior
/// angle 2π − π/20. Vertices (scaled by R):
///
/// (4,4), (−3,4), (−3,−4), (4,−4), (3.5, −1.5·tan(π/40)), (2,0),
/// (3.5, 1.5·tan(π/40)).
///
/// The four right-hand edges (the notch and its flanks) are Dirichlet, the
/// remaining three are impedance. Ω₀ = [−R, R]² is resolved by the coarse
/// mesh and stays fitted under refinement. The base triangulation is
/// bisected uniformly until max h_T ≤ h0.
pub fn corner_polygon_mesh(r: f64, h0: f64) -> Result<Mesh> {
    if !(r > 0.0) || !(h0 > 0.0) {
        return Err(Error::InvalidParam(format!("corner polygon needs r, h0 > 0, got r={r}, h0={h0}")));
    }
    let t = (std::f64::consts::PI / 40.0).tan();
    let xs = [-3.0, -1.0, 1.0, 2.0];
    let ys = [-4.0, -1.0, 0.0, 1.0, 4.0];
    let mut points = Vec::with_capacity(24);
    for j in 0..5 {
        for i in 0..4 {
            points.push(Point::new(xs[i] * r, ys[j] * r));
        }
    }
    let vid = |i: usize, j: usize| (j * 4 + i) as u32;
    // notch flank vertices
    let b_up = points.len() as u32;
    points.push(Point::new(3.5 * r, 1.5 * t * r));
    let c_up = points.len() as u32;
    points.push(Point::new(4.0 * r, 4.0 * r));
    let b_dn = points.len() as u32;
    points.push(Point::new(3.5 * r, -1.5 * t * r));
    let c_dn = points.len() as u32;
    points.push(Point::new(4.0 * r, -4.0 * r));

    // Refinement edges (vertex slots 0-1) form a strongly compatible
    // labeling: each cell pair designates its shared diagonal, the wedge fan
    // pairs across interior spokes or points at the boundary.
    let mut tris = Vec::with_capacity(30);
    for i in 0..3 {
        for j in 0..4 {
            let (p00, p10, p11, p01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            tris.push([p11, p00, p10]);
            tris.push([p00, p11, p01]);
        }
    }
    tris.push([vid(3, 4), b_up, c_up]);
    tris.push([b_up, vid(3, 4), vid(3, 3)]);
    tris.push([vid(3, 2), b_up, vid(3, 3)]);
    tris.push([b_dn, vid(3, 2), vid(3, 1)]);
    tris.push([vid(3, 0), b_dn, vid(3, 1)]);
    tris.push([b_dn, vid(3, 0), c_dn]);

    let tol = 1e-9 * r;
    let boundary = move |a: Point, b: Point| {
        // impedance edges are all axis-aligned; the Dirichlet notch and its
        // flanks are slanted
        if (a.x - b.x).abs() < tol || (a.y - b.y).abs() < tol {
            BoundaryKind::Impedance
        } else {
            BoundaryKind::Dirichlet
        }
    };
    let kerr = move |c: Point| c.x.abs() < r && c.y.abs() < r;
    let mut mesh = build_labeled_mesh(points, tris, boundary, kerr)?;

    let mut rounds = 0;
    while mesh.max_h() > h0 {
        let all: Vec<usize> = (0..mesh.n_tris()).collect();
        mesh = refine(&mesh, &all, 1)?;
        rounds += 1;
        if rounds > 60 || mesh.n_tris() > 20_000_000 {
            return Err(Error::DofCap(format!(
                "corner polygon mesh at h0 = {h0} needs more than {} elements",
                mesh.n_tris()
            )));
        }
    }
    Ok(mesh)
}
