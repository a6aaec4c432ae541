//! Newest-vertex bisection with conforming closure.
//!
//! Bisection of `[a, b, c]` inserts the midpoint `m` of the refinement edge
//! `(a, b)` and produces `[c, a, m]` and `[b, c, m]`; the children's
//! refinement edges are the parent's other two edges, so a triangle whose
//! edge was split by a neighbor becomes conforming after at most two
//! bisections. Closure is queue-driven: splitting an edge enqueues the
//! triangle on the other side, and children born next to an already-split
//! edge enqueue themselves.

use super::{assemble_mesh, fresh_mesh_id, BoundaryKind, Mesh, NO_TRI};
use crate::geom::Point;
use crate::{Error, Result};
use std::collections::{HashMap, VecDeque};

#[derive(Clone, Copy)]
struct WorkTri {
    v: [u32; 3],
    gen: u32,
    in_kerr: bool,
    alive: bool,
    /// Bisections still owed because of marking (closure splits owe 0).
    owes: u32,
}

struct Work {
    points: Vec<Point>,
    new_parents: Vec<Option<(u32, u32)>>,
    tris: Vec<WorkTri>,
    /// Alive triangles adjacent to each edge (sorted vertex pair).
    adj: HashMap<(u32, u32), [u32; 2]>,
    /// Midpoint vertex of every edge that has been split.
    split_mid: HashMap<(u32, u32), u32>,
    /// Boundary condition per boundary edge, maintained under splits.
    btags: HashMap<(u32, u32), BoundaryKind>,
    queue: VecDeque<u32>,
    n_bisections: usize,
}

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl Work {
    fn from_mesh(mesh: &Mesh) -> Self {
        let tris = mesh
            .tris
            .iter()
            .zip(&mesh.gen)
            .zip(&mesh.in_kerr)
            .map(|((&v, &gen), &in_kerr)| WorkTri { v, gen, in_kerr, alive: true, owes: 0 })
            .collect::<Vec<_>>();
        let mut adj = HashMap::with_capacity(mesh.edges.len() * 2);
        let mut btags = HashMap::new();
        for e in &mesh.edges {
            adj.insert((e.v[0], e.v[1]), e.tris);
            if e.kind != BoundaryKind::Interior {
                btags.insert((e.v[0], e.v[1]), e.kind);
            }
        }
        Work {
            points: mesh.points.clone(),
            new_parents: Vec::new(),
            tris,
            adj,
            split_mid: HashMap::new(),
            btags,
            queue: VecDeque::new(),
            n_bisections: 0,
        }
    }

    fn adj_insert(&mut self, k: (u32, u32), t: u32) {
        let slots = self.adj.entry(k).or_insert([NO_TRI, NO_TRI]);
        let slot = slots.iter_mut().find(|s| **s == NO_TRI).expect("edge with >2 live triangles");
        *slot = t;
    }

    fn adj_remove(&mut self, k: (u32, u32), t: u32) {
        if let Some(slots) = self.adj.get_mut(&k) {
            for s in slots.iter_mut() {
                if *s == t {
                    *s = NO_TRI;
                }
            }
        }
    }

    fn other_neighbor(&self, k: (u32, u32), t: u32) -> Option<u32> {
        self.adj.get(&k).and_then(|slots| slots.iter().copied().find(|&s| s != NO_TRI && s != t))
    }

    fn has_hanging_node(&self, t: u32) -> bool {
        let [a, b, c] = self.tris[t as usize].v;
        self.split_mid.contains_key(&key(a, b))
            || self.split_mid.contains_key(&key(b, c))
            || self.split_mid.contains_key(&key(c, a))
    }

    fn push_child(&mut self, v: [u32; 3], gen: u32, in_kerr: bool, owes: u32) {
        let id = self.tris.len() as u32;
        self.tris.push(WorkTri { v, gen, in_kerr, alive: true, owes });
        self.adj_insert(key(v[0], v[1]), id);
        self.adj_insert(key(v[1], v[2]), id);
        self.adj_insert(key(v[2], v[0]), id);
        if owes > 0 || self.has_hanging_node(id) {
            self.queue.push_back(id);
        }
    }

    /// Bisect triangle `t` at its refinement edge.
    fn bisect(&mut self, t: u32) {
        let WorkTri { v: [a, b, c], gen, in_kerr, owes, .. } = self.tris[t as usize];
        let kab = key(a, b);
        let m = match self.split_mid.get(&kab) {
            Some(&m) => m,
            None => {
                let m = self.points.len() as u32;
                self.points.push(self.points[a as usize].midpoint(self.points[b as usize]));
                self.new_parents.push(Some(kab));
                self.split_mid.insert(kab, m);
                if let Some(kind) = self.btags.remove(&kab) {
                    self.btags.insert(key(a, m), kind);
                    self.btags.insert(key(m, b), kind);
                }
                // the neighbor across (a, b) now hangs
                if let Some(nb) = self.other_neighbor(kab, t) {
                    self.queue.push_back(nb);
                }
                m
            }
        };
        self.tris[t as usize].alive = false;
        self.adj_remove(kab, t);
        self.adj_remove(key(b, c), t);
        self.adj_remove(key(c, a), t);
        let child_owes = owes.saturating_sub(1);
        self.push_child([c, a, m], gen + 1, in_kerr, child_owes);
        self.push_child([b, c, m], gen + 1, in_kerr, child_owes);
        self.n_bisections += 1;
    }
}

/// Bisect every triangle in `marked` at least `b` times and restore
/// conformity, returning a new mesh. Unmarked triangles are bisected only as
/// closure demands. Marking no triangles returns an unchanged copy (with a
/// fresh id and a parent link).
///
/// # Errors
///
/// Rejects `b == 0`, `b > 16`, and out-of-range element ids.
pub fn refine(mesh: &Mesh, marked: &[usize], b: u32) -> Result<Mesh> {
    if b == 0 || b > 16 {
        return Err(Error::InvalidParam(format!("bisection count b = {b} out of range 1..=16")));
    }
    for &t in marked {
        if t >= mesh.n_tris() {
            return Err(Error::InvalidParam(format!("marked element {t} out of range")));
        }
    }
    let mut work = Work::from_mesh(mesh);
    for &t in marked {
        work.tris[t].owes = b;
    }
    work.queue.extend(marked.iter().map(|&t| t as u32));

    let cap = 1024 + 64 * (mesh.n_tris() + marked.len() * (1usize << b));
    while let Some(t) = work.queue.pop_front() {
        let tri = work.tris[t as usize];
        if !tri.alive || (tri.owes == 0 && !work.has_hanging_node(t)) {
            continue;
        }
        work.bisect(t);
        if work.n_bisections > cap {
            return Err(Error::Mesh("refinement closure did not terminate".into()));
        }
    }

    // freeze: alive triangles in creation order
    let mut tris = Vec::new();
    let mut gen = Vec::new();
    let mut in_kerr = Vec::new();
    for wt in &work.tris {
        if wt.alive {
            debug_assert_eq!(wt.owes, 0);
            tris.push(wt.v);
            gen.push(wt.gen);
            in_kerr.push(wt.in_kerr);
        }
    }
    let btags = std::mem::take(&mut work.btags);
    assemble_mesh(
        fresh_mesh_id(),
        Some(mesh.id()),
        work.points,
        tris,
        gen,
        in_kerr,
        |a, b| btags.get(&(a, b)).copied(),
        work.new_parents,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn square() -> Mesh {
        let points = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        build_mesh(points, vec![[0, 1, 2], [0, 2, 3]], |_, _| BoundaryKind::Impedance, |p| {
            p.x < 0.5
        })
        .unwrap()
    }

    #[test]
    fn single_bisection_of_compatible_pair() {
        let m = square();
        let fine = refine(&m, &[0], 1).unwrap();
        // both triangles share the diagonal as refinement edge: marking one
        // splits the pair, no further closure
        assert_eq!(fine.n_tris(), 4);
        assert_eq!(fine.n_vertices(), 5);
        fine.check_conformity().unwrap();
        assert!((fine.total_area() - 1.0).abs() < 1e-14);
        assert_eq!(fine.vertex_parents[4], Some((0, 2)));
        assert_eq!(fine.parent_id(), Some(m.id()));
    }

    #[test]
    fn double_bisection_replaces_by_four() {
        let m = square();
        let fine = refine(&m, &[0], 2).unwrap();
        fine.check_conformity().unwrap();
        // marked triangle -> 4 descendants; neighbor is split as closure
        assert!(fine.n_tris() >= 6, "got {}", fine.n_tris());
        assert!((fine.total_area() - 1.0).abs() < 1e-14);
        for t in 0..fine.n_tris() {
            assert!(fine.gen[t] >= 1);
        }
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = square();
        let same = refine(&m, &[], 1).unwrap();
        assert_eq!(same.n_tris(), m.n_tris());
        assert_eq!(same.n_vertices(), m.n_vertices());
        assert_eq!(same.tris, m.tris);
    }

    #[test]
    fn kerr_area_preserved_under_refinement() {
        let m = square();
        let before = m.kerr_area();
        let mut cur = m;
        for round in 0..4 {
            let marked: Vec<usize> = (0..cur.n_tris()).step_by(2 + round % 2).collect();
            cur = refine(&cur, &marked, 1).unwrap();
            cur.check_conformity().unwrap();
            assert!(
                (cur.kerr_area() - before).abs() <= 1e-14 * before.max(1.0),
                "Ω₀ area drifted at round {round}"
            );
        }
    }

    #[test]
    fn uniform_refinement_area_and_boundary() {
        let mut m = square();
        for _ in 0..3 {
            let all: Vec<usize> = (0..m.n_tris()).collect();
            let next = refine(&m, &all, 1).unwrap();
            next.check_conformity().unwrap();
            let ratio = next.n_tris() as f64 / m.n_tris() as f64;
            assert!((2.0..=4.0).contains(&ratio), "growth ratio {ratio}");
            assert!((next.total_area() - 1.0).abs() < 1e-13);
            m = next;
        }
        // boundary edges remain tagged
        let n_bnd = m.edges.iter().filter(|e| e.kind == BoundaryKind::Impedance).count();
        let total_bnd_len: f64 = m
            .edges
            .iter()
            .filter(|e| e.kind != BoundaryKind::Interior)
            .map(|e| m.points[e.v[0] as usize].dist(m.points[e.v[1] as usize]))
            .sum();
        assert!(n_bnd >= 8);
        assert!((total_bnd_len - 4.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = square();
        assert!(refine(&m, &[0], 0).is_err());
        assert!(refine(&m, &[7], 1).is_err());
    }

    #[test]
    fn min_angle_bounded_over_deep_refinement() {
        let mut m = square();
        let floor = m.min_angle_deg() / 2.0;
        for i in 0..10 {
            let marked = vec![i % m.n_tris()];
            m = refine(&m, &marked, 1).unwrap();
            assert!(m.min_angle_deg() >= floor - 1e-9, "angle degraded: {}", m.min_angle_deg());
        }
    }
}
