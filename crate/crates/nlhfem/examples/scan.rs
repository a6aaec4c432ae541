// scratch probe: map solution-branch tongues of the hexagon cavity
// usage: scan <m> <contrast> <I_step> <I_max>
use nlhfem::assembly::{assemble_blocks, assemble_rhs, FeSpace, Scheme};
use nlhfem::config::default_gamma;
use nlhfem::problem::bistability_problem;
use nlhfem::solver::{
    continuation_step, energy_norm_nodal, newton_solve, NonlinearOptions, Solution,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let m: usize = args[1].parse().unwrap();
    let contrast: f64 = args[2].parse().unwrap();
    let step: f64 = args[3].parse().unwrap();
    let imax: f64 = args[4].parse().unwrap();

    let mesh = nlhfem::mesh::hexagon_mesh(m).unwrap();
    let space = FeSpace::new(&mesh);
    let opts = NonlinearOptions {
        scheme: Scheme::Newton,
        gamma: default_gamma(),
        tol: 1e-9,
        max_iter: 50,
    };
    let pb = |i: f64| bistability_problem(i, 9.6, contrast, 1e-12);
    let blocks = assemble_blocks(&mesh, &space, &pb(0.0));

    let solve = |i: f64, warm: Option<&Solution>| -> Option<(Solution, f64, f64)> {
        let p = pb(i);
        let rhs = assemble_rhs(&mesh, &space, &p);
        let out = match warm {
            Some(w) => continuation_step(&mesh, &space, &blocks, &p, &rhs, w, &opts),
            None => newton_solve(&mesh, &space, &blocks, &p, &rhs, None, &opts),
        };
        match out {
            Ok((sol, rep)) if rep.converged => {
                let e = energy_norm_nodal(&space, &blocks, &sol.values);
                let maxu = sol.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
                Some((sol, e, 1e-12 * maxu * maxu))
            }
            _ => None,
        }
    };
    // 1. ascend branch A
    let mut state: Option<(Solution, f64, f64)> = None;
    let mut i = step;
    let mut f1 = None;
    let mut a_curve: Vec<(f64, f64)> = Vec::new();
    while i <= imax + 0.5 * step {
        match solve(i, state.as_ref().map(|s| &s.0)) {
            Some(s) => {
                a_curve.push((i, s.1));
                println!("A I={i:.3e} energy={:.4e} eps|u|^2={:.3}", s.1, s.2);
                state = Some(s);
            }
            None => {
                f1 = Some(i);
                break;
            }
        }
        i += step;
    }
    let Some(f1) = f1 else {
        println!("contrast {contrast}: branch A smooth to I_max, no fold");
        return;
    };
    let last_a = state.expect("first step must converge");
    println!("contrast {contrast}: branch A ends in ({:.4e}, {f1:.4e})", f1 - step);

    // 2. hop forward onto the next branch
    let mut entry = None;
    for j in 1..=12 {
        let t = f1 + j as f64 * step;
        if let Some(s) = solve(t, Some(&last_a.0)) {
            println!("B entry at I={t:.3e} energy={:.4e} eps|u|^2={:.3}", s.1, s.2);
            entry = Some((t, s));
            break;
        }
    }
    let Some((t0, mut b)) = entry else {
        println!("contrast {contrast}: no second branch within 12 steps past the fold");
        return;
    };

    // 3. descend branch B to its lower fold
    let down = 0.25 * step;
    let mut i = t0 - down;
    let mut f0 = t0;
    while i > 0.0 {
        match solve(i, Some(&b.0)) {
            Some(s) => {
                let gap = a_curve
                    .iter()
                    .rev()
                    .find(|(ia, _)| (ia - i).abs() < 1e-6)
                    .map(|(_, ea)| (s.1 - ea) / ea);
                match gap {
                    Some(g) => println!(
                        "B I={i:.3e} energy={:.4e} eps|u|^2={:.3} vs A: {:+.1}%",
                        s.1,
                        s.2,
                        100.0 * g
                    ),
                    None => println!("B I={i:.3e} energy={:.4e} eps|u|^2={:.3}", s.1, s.2),
                }
                f0 = i;
                b = s;
            }
            None => break,
        }
        i -= down;
    }
    println!(
        "contrast {contrast}: branch B reaches down to {f0:.4e}; branch A dies at {:.4e} => {}",
        f1 - step,
        if f0 < f1 - step { "OVERLAP" } else { "no overlap" }
    );
}
