use birkhoff::problems::{self};
use birkhoff::solver::solve_ladder;
use nalgebra::DVector;

#[test]
#[ignore]
fn residual_breakdown() {
    let presets = problems::presets();
    let p = presets.iter().find(|p| p.name == "orbit_transfer").unwrap();
    let mut opts = p.options.clone();
    opts.max_outer = 5;
    opts.max_inner = 25000;
    opts.rho_growth = 1.0;
    opts.verbose = true;
    let (nlp, rep) = solve_ladder(p.make, p.grid.clone(), &[], &opts).unwrap();
    let l = &nlp.layout;
    let mut c = DVector::zeros(l.n_eq);
    nlp.eq_constraints(&rep.z, &mut c);
    let num = l.num_nodes;
    let names = ["r", "theta", "vr", "vt"];
    for i in 0..l.nx {
        let lin: f64 = (0..num)
            .map(|k| c[l.lin_row(i, k)].abs())
            .fold(0.0, f64::max);
        let quad = c[l.lin_row(i, num)].abs();
        let coll: f64 = (0..num)
            .map(|k| c[l.collocation_row(i, k)].abs())
            .fold(0.0, f64::max);
        let lam_lin: f64 = (0..=num)
            .map(|k| rep.lambda_eq[l.lin_row(i, k)].abs())
            .fold(0.0, f64::max);
        let lam_coll: f64 = (0..num)
            .map(|k| rep.lambda_eq[l.collocation_row(i, k)].abs())
            .fold(0.0, f64::max);
        println!(
            "state {:6}  lin {:.2e}  quad {:.2e}  coll {:.2e}   |lam_lin| {:.2e}  |lam_coll| {:.2e}",
            names[i], lin, quad, coll, lam_lin, lam_coll
        );
    }
    let ev_start = l.n_eq_linear + l.n_eq_collocation;
    for r in ev_start..l.n_eq {
        println!(
            "event row {}  c {:.2e}  lam {:.2e}",
            r - ev_start,
            c[r],
            rep.lambda_eq[r]
        );
    }
    // Where along tau does the collocation residual concentrate?
    for i in 0..l.nx {
        let mut worst = (0usize, 0.0f64);
        for k in 0..num {
            let v = c[l.collocation_row(i, k)].abs();
            if v > worst.1 {
                worst = (k, v);
            }
        }
        println!("state {:6} worst collocation node {} of {}", names[i], worst.0, num);
    }
}
