//! Plot-ready output: CSV with self-documenting header comments, JSON
//! summaries, legacy-VTK ASCII field dumps, and a coordinate-format matrix
//! dump. All writers are pure string builders so tests can compare bytes;
//! [`write_atomic`] puts them on disk.
//!
//! Floats are formatted with the shortest round-trip exponent form (`{:e}`),
//! which both gnuplot and pandas parse, and which is reproducible across
//! runs by construction.

use crate::adaptive::AdaptTrace;
use crate::assembly::{p1_grads, Coo};
use crate::estimator::EstimateReport;
use crate::mesh::{BoundaryKind, Mesh};
use crate::problem::C64;
use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

fn fnum(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:e}")
    }
}

/// One adaptive trace as CSV, one row per loop iteration.
pub fn trace_to_csv(trace: &AdaptTrace) -> String {
    let mut s = String::new();
    s.push_str("# adaptive loop trace, one row per iteration\n");
    s.push_str("# iteration: 0-based loop counter\n");
    s.push_str("# n_elements: triangles in the mesh of this solve\n");
    s.push_str("# n_dofs: complex unknowns (vertices minus Dirichlet)\n");
    s.push_str("# eta: neighbor-augmented residual estimator total\n");
    s.push_str("# eta_std: standard residual estimator total\n");
    s.push_str("# osc: data oscillation total\n");
    s.push_str("# n_marked: elements marked for refinement (0 on the final row)\n");
    s.push_str("# newton_iterations: nonlinear steps of this solve\n");
    s.push_str("# newton_converged: 1 when the increment tolerance was met\n");
    s.push_str("# final_residual: relative algebraic residual of the last iterate\n");
    s.push_str("# h1_rel: relative H1 error vs the exact field (empty if unknown)\n");
    s.push_str("# energy_err: energy-norm error vs the exact field (empty if unknown)\n");
    s.push_str("# proj_h1_err: H1 error of the elliptic projection (empty unless requested)\n");
    s.push_str("# wall_seconds: wall-clock time of the iteration\n");
    s.push_str(
        "iteration,n_elements,n_dofs,eta,eta_std,osc,n_marked,newton_iterations,\
         newton_converged,final_residual,h1_rel,energy_err,proj_h1_err,wall_seconds\n",
    );
    for r in &trace.rows {
        let (h1_rel, energy_err) = match &r.norms {
            Some(n) => (fnum(n.h1_rel), fnum(n.energy_err)),
            None => (String::new(), String::new()),
        };
        let proj = r.proj_h1_err.map(fnum).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.n_elements,
            r.n_dofs,
            fnum(r.eta),
            fnum(r.eta_std),
            fnum(r.osc),
            r.n_marked,
            r.newton.iterations,
            r.newton.converged as u8,
            fnum(r.newton.final_residual_norm),
            h1_rel,
            energy_err,
            proj,
            fnum(r.wall_seconds),
        );
    }
    s
}

/// Trace rows and stop reason as JSON.
pub fn trace_to_json(trace: &AdaptTrace) -> String {
    let rows: Vec<serde_json::Value> =
        trace.rows.iter().map(|r| serde_json::to_value(r).expect("trace row")).collect();
    let doc = serde_json::json!({
        "stop": trace.stop,
        "n_iterations": trace.rows.len(),
        "rows": rows,
    });
    serde_json::to_string_pretty(&doc).expect("trace json") + "\n"
}

/// Per-element estimator data as CSV.
pub fn estimate_to_csv(report: &EstimateReport) -> String {
    let mut s = String::new();
    s.push_str("# per-element error indicators of one mesh\n");
    s.push_str("# triangle: element id\n");
    s.push_str("# eta_sq: squared neighbor-augmented indicator eta_T^2\n");
    s.push_str("# eta_std_sq: squared standard indicator\n");
    s.push_str("# osc_sq: squared data oscillation osc_T^2\n");
    s.push_str("triangle,eta_sq,eta_std_sq,osc_sq\n");
    for t in 0..report.eta_sq.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            t,
            fnum(report.eta_sq[t]),
            fnum(report.eta_std_sq[t]),
            fnum(report.osc_sq[t])
        );
    }
    s
}

/// Estimator totals as a small JSON document.
pub fn estimate_summary_json(report: &EstimateReport) -> String {
    let doc = serde_json::json!({
        "mesh_id": report.mesh_id,
        "n_elements": report.eta_sq.len(),
        "eta_total": report.eta_total,
        "eta_std_total": report.eta_std_total,
        "osc_total": report.osc_total,
    });
    serde_json::to_string_pretty(&doc).expect("estimate json") + "\n"
}

/// Legacy-VTK ASCII dump of a mesh with optional nodal field. Cell data
/// always carries the subdomain flag and generation; with a field it adds
/// the elementwise H1 seminorm, and point data Re u and |u|.
pub fn field_to_vtk(mesh: &Mesh, values: Option<&[C64]>, title: &str) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{}", title.replace('\n', " "));
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in &mesh.points {
        let _ = writeln!(s, "{} {} 0", fnum(p.x), fnum(p.y));
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.n_tris(), 4 * mesh.n_tris());
    for tri in &mesh.tris {
        let _ = writeln!(s, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.n_tris());
    for _ in 0..mesh.n_tris() {
        s.push_str("5\n");
    }

    let _ = writeln!(s, "CELL_DATA {}", mesh.n_tris());
    s.push_str("SCALARS subdomain int 1\nLOOKUP_TABLE default\n");
    for &k in &mesh.in_kerr {
        let _ = writeln!(s, "{}", k as u8);
    }
    s.push_str("SCALARS generation int 1\nLOOKUP_TABLE default\n");
    for &g in &mesh.gen {
        let _ = writeln!(s, "{g}");
    }
    if let Some(u) = values {
        assert_eq!(u.len(), mesh.n_vertices());
        s.push_str("SCALARS h1_seminorm double 1\nLOOKUP_TABLE default\n");
        for t in 0..mesh.n_tris() {
            let [a, b, c] = mesh.tri_points(t);
            let (g, area) = p1_grads(a, b, c);
            let mut gx = C64::new(0.0, 0.0);
            let mut gy = C64::new(0.0, 0.0);
            for (j, &v) in mesh.tris[t].iter().enumerate() {
                gx += u[v as usize] * g[j].x;
                gy += u[v as usize] * g[j].y;
            }
            let semi = ((gx.norm_sqr() + gy.norm_sqr()) * area).sqrt();
            let _ = writeln!(s, "{}", fnum(semi));
        }
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        s.push_str("SCALARS re_u double 1\nLOOKUP_TABLE default\n");
        for v in u {
            let _ = writeln!(s, "{}", fnum(v.re));
        }
        s.push_str("SCALARS abs_u double 1\nLOOKUP_TABLE default\n");
        for v in u {
            let _ = writeln!(s, "{}", fnum(v.norm()));
        }
    }
    s
}

/// Compact JSON mesh fixture: vertices, triangles, boundary tags, flags.
pub fn mesh_to_json(mesh: &Mesh) -> String {
    let boundary: Vec<serde_json::Value> = mesh
        .edges
        .iter()
        .filter(|e| e.kind != BoundaryKind::Interior)
        .map(|e| {
            let tag = match e.kind {
                BoundaryKind::Impedance => "impedance",
                BoundaryKind::Dirichlet => "dirichlet",
                BoundaryKind::Interior => unreachable!(),
            };
            serde_json::json!([e.v[0], e.v[1], tag])
        })
        .collect();
    let doc = serde_json::json!({
        "points": mesh.points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
        "triangles": &mesh.tris,
        "boundary": boundary,
        "in_kerr": &mesh.in_kerr,
        "generation": &mesh.gen,
    });
    serde_json::to_string(&doc).expect("mesh json") + "\n"
}

/// Sparse block in coordinate text form: `row col value` per line, suitable
/// for offline inspection. Duplicate entries are kept as assembled.
pub fn coo_to_text(coo: &Coo) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "% coordinate format: rows {0} cols {0} entries {1}", coo.n, coo.trip.len());
    for &(r, c, v) in &coo.trip {
        let _ = writeln!(s, "{r} {c} {}", fnum(v));
    }
    s
}

/// Write a file via a temporary sibling and rename, so readers never observe
/// a half-written file.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::{adapt_loop, AdaptConfig, StopRule};
    use crate::estimator::estimate;
    use crate::mesh::hexagon_mesh;
    use crate::problem::bistability_problem;

    fn small_trace() -> (AdaptTrace, EstimateReport, Mesh) {
        let problem = bistability_problem(10.0, 3.0, 2.0, 1e-4);
        let mesh0 = hexagon_mesh(2).unwrap();
        let config = AdaptConfig { stop_rule: StopRule::Iterations(2), ..Default::default() };
        let trace = adapt_loop(&problem, &mesh0, &config, None).unwrap();
        let last = trace.last.clone().unwrap();
        let report = estimate(&last.mesh, &problem, &last.solution.values);
        (trace, report, last.mesh)
    }

    #[test]
    fn trace_csv_documents_every_column() {
        let (trace, _, _) = small_trace();
        let csv = trace_to_csv(&trace);
        let comments: Vec<&str> = csv.lines().take_while(|l| l.starts_with('#')).collect();
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        let columns: Vec<&str> = header.split(',').collect();
        assert_eq!(columns.len(), 14);
        for col in &columns {
            assert!(
                comments.iter().any(|c| c.contains(&format!("{col}:"))),
                "column {col} undocumented"
            );
        }
        let data_rows: Vec<&str> =
            csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(data_rows.len(), trace.rows.len());
        for row in data_rows {
            assert_eq!(row.split(',').count(), columns.len());
        }
    }

    #[test]
    fn trace_json_round_trips() {
        let (trace, _, _) = small_trace();
        let doc: serde_json::Value = serde_json::from_str(&trace_to_json(&trace)).unwrap();
        assert_eq!(doc["n_iterations"].as_u64().unwrap() as usize, trace.rows.len());
        assert_eq!(doc["stop"], "iterations");
        let eta0 = doc["rows"][0]["eta"].as_f64().unwrap();
        assert!((eta0 - trace.rows[0].eta).abs() < 1e-12 * eta0.abs());
    }

    #[test]
    fn estimate_csv_lists_every_element() {
        let (_, report, _) = small_trace();
        let csv = estimate_to_csv(&report);
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(data.len(), report.eta_sq.len());
        // values parse back and match
        let first: Vec<&str> = data[0].split(',').collect();
        assert_eq!(first[0], "0");
        let eta_sq: f64 = first[1].parse().unwrap();
        assert_eq!(eta_sq, report.eta_sq[0]);
        let summary: serde_json::Value =
            serde_json::from_str(&estimate_summary_json(&report)).unwrap();
        assert_eq!(summary["n_elements"].as_u64().unwrap() as usize, report.eta_sq.len());
    }

    #[test]
    fn vtk_dump_is_well_formed() {
        let (trace, _, mesh) = small_trace();
        let u = &trace.last.as_ref().unwrap().solution.values;
        let vtk = field_to_vtk(&mesh, Some(u), "field dump");
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        let lines: Vec<&str> = vtk.lines().collect();
        let points_at = lines.iter().position(|l| l.starts_with("POINTS")).unwrap();
        assert_eq!(
            lines[points_at],
            format!("POINTS {} double", mesh.n_vertices())
        );
        let cells_at = lines.iter().position(|l| l.starts_with("CELLS ")).unwrap();
        assert_eq!(cells_at, points_at + 1 + mesh.n_vertices());
        assert_eq!(lines.iter().filter(|l| **l == "5").count(), mesh.n_tris());
        for name in ["subdomain", "generation", "h1_seminorm", "re_u", "abs_u"] {
            assert!(lines.iter().any(|l| l.starts_with(&format!("SCALARS {name}"))), "{name}");
        }
        // identical input gives identical bytes
        assert_eq!(vtk, field_to_vtk(&mesh, Some(u), "field dump"));
    }

    #[test]
    fn mesh_json_is_consistent() {
        let mesh = hexagon_mesh(2).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&mesh_to_json(&mesh)).unwrap();
        assert_eq!(doc["points"].as_array().unwrap().len(), mesh.n_vertices());
        assert_eq!(doc["triangles"].as_array().unwrap().len(), mesh.n_tris());
        // hexagon boundary: all impedance
        for b in doc["boundary"].as_array().unwrap() {
            assert_eq!(b[2], "impedance");
        }
    }

    #[test]
    fn coo_text_and_atomic_write() {
        let mut coo = Coo::new(3);
        coo.push(0, 1, 2.5);
        coo.push(2, 2, -1.0);
        let text = coo_to_text(&coo);
        assert!(text.contains("0 1 2.5e0"));
        assert!(text.contains("2 2 -1e0"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.txt");
        write_atomic(&path, &text).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
        assert!(!dir.path().join("dump.tmp~").exists());
    }
}
