//! Conforming triangulations with newest-vertex bisection (NVB).
//!
//! Storage conventions, relied on throughout the crate:
//!
//! * triangles are positively oriented (CCW);
//! * the refinement edge of triangle `[a, b, c]` is `(a, b)` and `c` is its
//!   newest vertex; bisection at the midpoint `m` of `(a, b)` produces the
//!   children `[c, a, m]` and `[b, c, m]`, which again satisfy the
//!   convention;
//! * the element size is `h_T = |T|^{1/2}` (square root of area), so one
//!   bisection shrinks h by √2;
//! * membership in the Kerr subdomain Ω₀ is decided once on the initial
//!   mesh (by a centroid test) and inherited verbatim by descendants;
//! * meshes are immutable; [`refine`] returns a new mesh whose vertex list
//!   starts with the parent's vertices, followed by edge midpoints in
//!   creation order.

mod builders;
mod refine;

pub use builders::{corner_polygon_mesh, hexagon_mesh};
pub use refine::refine;

use crate::geom::{self, Point};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

/// Sentinel for "no adjacent triangle" in edge records.
pub const NO_TRI: u32 = u32::MAX;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_mesh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Classification of a mesh edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    Interior,
    /// Robin/impedance boundary: ∂u/∂n + iku = g.
    Impedance,
    /// Homogeneous Dirichlet boundary: u = 0.
    Dirichlet,
}

/// A unique mesh edge with its adjacency.
#[derive(Clone, Copy, Debug)]
pub struct Edge {
    /// Endpoint vertices, `v[0] < v[1]`.
    pub v: [u32; 2],
    /// Adjacent triangles; `tris[1] == NO_TRI` on the boundary.
    pub tris: [u32; 2],
    pub kind: BoundaryKind,
}

/// The element patch used by the error estimator: a triangle and its
/// edge-neighbors (the center is not contained in `edge_neighbors`).
#[derive(Clone, Debug)]
pub struct ElementPatch {
    pub center: usize,
    pub edge_neighbors: Vec<usize>,
}

/// An immutable conforming triangulation.
#[derive(Clone, Debug)]
pub struct Mesh {
    id: u64,
    parent_id: Option<u64>,
    /// Vertex coordinates. After refinement the parent's vertices form a
    /// prefix of this list.
    pub points: Vec<Point>,
    /// Vertex triples per triangle, CCW, refinement edge `(v[0], v[1])`.
    pub tris: Vec<[u32; 3]>,
    /// Bisection generation per triangle (0 on initial meshes).
    pub gen: Vec<u32>,
    /// Kerr-subdomain (Ω₀) flag per triangle.
    pub in_kerr: Vec<bool>,
    /// Unique edges, in first-visit order over `tris`.
    pub edges: Vec<Edge>,
    /// `tri_edges[t][j]` is the edge id of `(tris[t][j], tris[t][(j+1)%3])`.
    pub tri_edges: Vec<[u32; 3]>,
    /// For vertices created by the refinement step that produced this mesh:
    /// endpoints of the parent edge they bisect. `None` for inherited ones.
    pub vertex_parents: Vec<Option<(u32, u32)>>,
}

impl Mesh {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn parent_id(&self) -> Option<u64> {
        self.parent_id
    }

    pub fn n_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn n_tris(&self) -> usize {
        self.tris.len()
    }

    pub fn tri_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.tris[t];
        [self.points[a as usize], self.points[b as usize], self.points[c as usize]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_points(t);
        geom::tri_area(a, b, c)
    }

    /// Element size h_T = |T|^{1/2}.
    pub fn h_of(&self, t: usize) -> f64 {
        self.area(t).sqrt()
    }

    pub fn max_h(&self) -> f64 {
        (0..self.n_tris()).map(|t| self.h_of(t)).fold(0.0, f64::max)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.tri_points(t);
        (a + b + c) * (1.0 / 3.0)
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        (0..self.n_tris())
            .map(|t| {
                let [a, b, c] = self.tri_points(t);
                geom::min_angle(a, b, c).to_degrees()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Total area of the Kerr subdomain Ω₀.
    pub fn kerr_area(&self) -> f64 {
        (0..self.n_tris()).filter(|&t| self.in_kerr[t]).map(|t| self.area(t)).sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_tris()).map(|t| self.area(t)).sum()
    }

    /// Triangle on the other side of edge `e` as seen from `t`.
    pub fn neighbor_across(&self, t: usize, e: u32) -> Option<usize> {
        let edge = &self.edges[e as usize];
        if edge.tris[0] == t as u32 {
            (edge.tris[1] != NO_TRI).then_some(edge.tris[1] as usize)
        } else {
            Some(edge.tris[0] as usize)
        }
    }

    /// The estimator patch of `t`: its 1–3 edge-neighbors, center excluded.
    pub fn patch_of(&self, t: usize) -> ElementPatch {
        let mut edge_neighbors = Vec::with_capacity(3);
        for &e in &self.tri_edges[t] {
            if let Some(n) = self.neighbor_across(t, e) {
                edge_neighbors.push(n);
            }
        }
        debug_assert!(!edge_neighbors.is_empty() || self.n_tris() == 1);
        ElementPatch { center: t, edge_neighbors }
    }

    /// Outward unit normal of edge slot `j` of triangle `t`.
    pub fn outward_normal(&self, t: usize, j: usize) -> Point {
        let p = self.tri_points(t);
        let a = p[j];
        let b = p[(j + 1) % 3];
        // CCW traversal: boundary on the left, so the right-hand normal points out
        let tangent = b - a;
        let n = Point::new(tangent.y, -tangent.x);
        n * (1.0 / n.norm())
    }

    /// Length of edge `e`.
    pub fn edge_len(&self, e: u32) -> f64 {
        let edge = &self.edges[e as usize];
        self.points[edge.v[0] as usize].dist(self.points[edge.v[1] as usize])
    }

    /// True if vertex `v` lies on a Dirichlet edge.
    pub fn dirichlet_vertices(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_vertices()];
        for e in &self.edges {
            if e.kind == BoundaryKind::Dirichlet {
                flags[e.v[0] as usize] = true;
                flags[e.v[1] as usize] = true;
            }
        }
        flags
    }

    /// Structural and geometric mesh invariants:
    /// every edge has 1–2 adjacent triangles with opposite traversal
    /// directions, boundary edges carry a boundary condition, all triangles
    /// are positively oriented, and no vertex sits at the midpoint of
    /// another triangle's edge (hanging node).
    pub fn check_conformity(&self) -> Result<()> {
        let mut seen: HashMap<(u32, u32), (u32, bool)> = HashMap::new();
        for (t, tri) in self.tris.iter().enumerate() {
            let [a, b, c] = self.tri_points(t);
            let scale = (a.dist(b)).max(b.dist(c)).max(c.dist(a));
            if geom::signed_area2(a, b, c) <= 1e-14 * scale * scale {
                return Err(Error::Mesh(format!("triangle {t} is degenerate or negatively oriented")));
            }
            for j in 0..3 {
                let (p, q) = (tri[j], tri[(j + 1) % 3]);
                let key = (p.min(q), p.max(q));
                let fwd = p < q;
                match seen.get(&key) {
                    None => {
                        seen.insert(key, (1, fwd));
                    }
                    Some(&(1, first_fwd)) => {
                        if first_fwd == fwd {
                            return Err(Error::Mesh(format!(
                                "edge ({p}, {q}) traversed twice in the same direction"
                            )));
                        }
                        seen.insert(key, (2, fwd));
                    }
                    Some(_) => {
                        return Err(Error::Mesh(format!("edge ({p}, {q}) shared by more than 2 triangles")));
                    }
                }
            }
        }
        // boundary edges must be tagged with a boundary condition
        for e in &self.edges {
            let is_boundary = e.tris[1] == NO_TRI;
            if is_boundary && e.kind == BoundaryKind::Interior {
                return Err(Error::Mesh(format!("boundary edge {:?} tagged Interior", e.v)));
            }
            if !is_boundary && e.kind != BoundaryKind::Interior {
                return Err(Error::Mesh(format!("interior edge {:?} tagged as boundary", e.v)));
            }
        }
        // hanging nodes: a vertex coinciding with an edge midpoint
        let quant = vertex_quantizer(&self.points);
        let vhash: HashMap<(i64, i64), u32> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (quant(*p), i as u32))
            .collect();
        for (key, _) in seen.iter() {
            let (p, q) = *key;
            let mid = self.points[p as usize].midpoint(self.points[q as usize]);
            if let Some(&v) = vhash.get(&quant(mid)) {
                if v != p && v != q && self.points[v as usize].dist(mid) < 1e-12 * self.points[p as usize].dist(self.points[q as usize]) {
                    return Err(Error::Mesh(format!(
                        "vertex {v} hangs at the midpoint of edge ({p}, {q})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Quantizer mapping points to integer grid keys for duplicate detection.
fn vertex_quantizer(points: &[Point]) -> impl Fn(Point) -> (i64, i64) {
    let diam = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
            (acc.0.min(p.x), acc.1.max(p.x), acc.2.min(p.y), acc.3.max(p.y))
        });
    let scale = ((diam.1 - diam.0).max(diam.3 - diam.2)).max(1e-300);
    let q = 1e-10 * scale;
    move |p: Point| ((p.x / q).round() as i64, (p.y / q).round() as i64)
}

/// Build an initial mesh from raw vertex and triangle lists.
///
/// Orientation is normalized to CCW; each triangle is rotated so that its
/// longest edge (ties broken by the smallest opposite-vertex index) becomes
/// the refinement edge. `boundary_tagger` is called once per boundary edge
/// with its endpoint coordinates and must return `Impedance` or `Dirichlet`;
/// `subdomain_tagger` receives each centroid and decides Ω₀ membership.
///
/// # Errors
///
/// Rejects empty meshes, out-of-range indices, duplicate points, degenerate
/// (zero-area) triangles, and non-conforming inputs.
pub fn build_mesh(
    points: Vec<Point>,
    tri_list: Vec<[u32; 3]>,
    boundary_tagger: impl Fn(Point, Point) -> BoundaryKind,
    subdomain_tagger: impl Fn(Point) -> bool,
) -> Result<Mesh> {
    build_mesh_impl(points, tri_list, boundary_tagger, subdomain_tagger, true)
}

/// Like [`build_mesh`], but keeps the caller's vertex rotations: slot pair
/// (0, 1) of every triangle is taken as its refinement edge. Triangles must
/// already be CCW. Use this to hand the bisection a strongly compatible
/// labeling (each interior edge designated by both neighbors or by neither),
/// under which uniform refinement needs no conforming closure and exactly
/// doubles the element count.
pub fn build_labeled_mesh(
    points: Vec<Point>,
    tri_list: Vec<[u32; 3]>,
    boundary_tagger: impl Fn(Point, Point) -> BoundaryKind,
    subdomain_tagger: impl Fn(Point) -> bool,
) -> Result<Mesh> {
    build_mesh_impl(points, tri_list, boundary_tagger, subdomain_tagger, false)
}

fn build_mesh_impl(
    points: Vec<Point>,
    tri_list: Vec<[u32; 3]>,
    boundary_tagger: impl Fn(Point, Point) -> BoundaryKind,
    subdomain_tagger: impl Fn(Point) -> bool,
    relabel: bool,
) -> Result<Mesh> {
    if points.is_empty() || tri_list.is_empty() {
        return Err(Error::Mesh("empty vertex or triangle list".into()));
    }
    let n = points.len() as u32;
    // duplicate points
    let quant = vertex_quantizer(&points);
    let mut vhash: HashMap<(i64, i64), u32> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::Mesh(format!("vertex {i} is not finite")));
        }
        if let Some(&j) = vhash.get(&quant(*p)) {
            return Err(Error::Mesh(format!("vertices {j} and {i} coincide")));
        }
        vhash.insert(quant(*p), i as u32);
    }

    let mut tris = Vec::with_capacity(tri_list.len());
    for (t, tri) in tri_list.iter().enumerate() {
        let mut v = *tri;
        if v.iter().any(|&i| i >= n) {
            return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
        }
        if v[0] == v[1] || v[1] == v[2] || v[0] == v[2] {
            return Err(Error::Mesh(format!("triangle {t} repeats a vertex")));
        }
        let pt = |i: u32| points[i as usize];
        let scale2 = pt(v[0]).dist(pt(v[1])).max(pt(v[1]).dist(pt(v[2]))).max(pt(v[2]).dist(pt(v[0]))).powi(2);
        let area2 = geom::signed_area2(pt(v[0]), pt(v[1]), pt(v[2]));
        if area2.abs() <= 1e-14 * scale2 {
            return Err(Error::Mesh(format!("triangle {t} is degenerate (zero area)")));
        }
        if area2 < 0.0 {
            if !relabel {
                return Err(Error::Mesh(format!(
                    "triangle {t} of a pre-labeled mesh is not CCW"
                )));
            }
            v.swap(1, 2);
        }
        if !relabel {
            tris.push(v);
            continue;
        }
        // refinement edge := longest edge, ties by smallest opposite vertex
        let len2 = |i: usize| {
            let (p, q) = (pt(v[(i + 1) % 3]), pt(v[(i + 2) % 3]));
            (p.x - q.x).powi(2) + (p.y - q.y).powi(2)
        };
        let mut opp = 0usize; // vertex opposite the refinement edge
        for cand in 1..3 {
            let (lc, lo) = (len2(cand), len2(opp));
            let rel = (lc - lo) / lo.max(lc);
            if rel > 1e-12 || (rel.abs() <= 1e-12 && v[cand] < v[opp]) {
                opp = cand;
            }
        }
        // rotate so that the edge opposite `opp` occupies slots (0, 1)
        let rotated = [v[(opp + 1) % 3], v[(opp + 2) % 3], v[opp]];
        tris.push(rotated);
    }

    let in_kerr = tris
        .iter()
        .map(|&[a, b, c]| {
            let centroid = (points[a as usize] + points[b as usize] + points[c as usize]) * (1.0 / 3.0);
            subdomain_tagger(centroid)
        })
        .collect();

    let pts = points.clone();
    let mesh = assemble_mesh(
        fresh_mesh_id(),
        None,
        points,
        tris,
        vec![0; tri_list.len()],
        in_kerr,
        |a, b| Some(boundary_tagger(pts[a as usize], pts[b as usize])),
        Vec::new(),
    )?;
    mesh.check_conformity()?;
    Ok(mesh)
}

/// Internal constructor shared by `build_mesh` and `refine`: derives the
/// edge tables without touching vertex order or triangle rotation.
///
/// `boundary_kind` is consulted for each boundary edge with its sorted
/// vertex-id pair; `None` means the caller failed to track the edge and is
/// an internal error.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_mesh(
    id: u64,
    parent_id: Option<u64>,
    points: Vec<Point>,
    tris: Vec<[u32; 3]>,
    gen: Vec<u32>,
    in_kerr: Vec<bool>,
    boundary_kind: impl Fn(u32, u32) -> Option<BoundaryKind>,
    vertex_parents_suffix: Vec<Option<(u32, u32)>>,
) -> Result<Mesh> {
    let mut edges: Vec<Edge> = Vec::with_capacity(tris.len() * 3 / 2);
    let mut edge_ids: HashMap<(u32, u32), u32> = HashMap::with_capacity(tris.len() * 2);
    let mut tri_edges = Vec::with_capacity(tris.len());
    for (t, tri) in tris.iter().enumerate() {
        let mut ids = [0u32; 3];
        for j in 0..3 {
            let (p, q) = (tri[j], tri[(j + 1) % 3]);
            let key = (p.min(q), p.max(q));
            let eid = match edge_ids.get(&key) {
                Some(&eid) => {
                    let e = &mut edges[eid as usize];
                    if e.tris[1] != NO_TRI {
                        return Err(Error::Mesh(format!("edge {key:?} shared by >2 triangles")));
                    }
                    e.tris[1] = t as u32;
                    eid
                }
                None => {
                    let eid = edges.len() as u32;
                    edges.push(Edge { v: [key.0, key.1], tris: [t as u32, NO_TRI], kind: BoundaryKind::Interior });
                    edge_ids.insert(key, eid);
                    eid
                }
            };
            ids[j] = eid;
        }
        tri_edges.push(ids);
    }
    for e in edges.iter_mut() {
        if e.tris[1] == NO_TRI {
            match boundary_kind(e.v[0], e.v[1]) {
                Some(kind) if kind != BoundaryKind::Interior => e.kind = kind,
                _ => {
                    return Err(Error::Mesh(format!(
                        "boundary edge {:?} has no boundary condition",
                        e.v
                    )))
                }
            }
        }
    }
    let mut vertex_parents = vec![None; points.len() - vertex_parents_suffix.len()];
    vertex_parents.extend(vertex_parents_suffix);
    Ok(Mesh {
        id,
        parent_id,
        points,
        tris,
        gen,
        in_kerr,
        edges,
        tri_edges,
        vertex_parents,
    })
}
