use orhc::fem::{assemble_static, BoundaryCondition, Mesh, OscillatingCoefficients, RcAssembler};
use orhc::layout::build_layout;
use orhc::linalg::{dot, SplitMix64};
use orhc::ocp::{evaluate_cost, gradient, ControlTrajectory, WindowSolver};
use orhc::spectral::{compute_neumann_eigenbasis, PenaltyOperator};
use orhc::timestep::{SolverStrategy, TimeGrid};

fn main() {
    let mesh = Mesh::build(16, 0).unwrap();
    let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
    let layout = build_layout(2, 0.5, &mesh, &ops).unwrap();
    let basis = compute_neumann_eigenbasis(&ops, 10).unwrap();
    let q = PenaltyOperator::eig_projection(800f64.sqrt(), basis, &ops);
    let rc = RcAssembler::new(&mesh, &ops, &OscillatingCoefficients);
    let y_in = ops.interpolate(&mesh, |x| 1.0 - 2.0 * (std::f64::consts::PI * x[0]).cos());
    let dt = 4e-4;
    let grid = TimeGrid::span(0.0, 0.25, dt).unwrap();
    let n_nodes = grid.n_nodes();
    let mut rng = SplitMix64::new(64);
    let mut u = ControlTrajectory::zeros(grid, 8);
    for uk in u.values.iter_mut() { rng.fill_symmetric(uk); }
    let (g, _y, p) = gradient(&ops, &rc, &layout, &q, grid, &y_in, &u, SolverStrategy::default()).unwrap();
    // smoothed gradient: G_j = u_j - B^T w_j with trapezoid-consistent weights
    let mut g_smooth = ControlTrajectory::zeros(grid, 8);
    let n = grid.n_steps;
    let nd = ops.n_dofs();
    let mut w = vec![0.0; nd];
    for j in 0..=n {
        if j == 0 {
            let p0 = p.state(0).unwrap(); let p1 = p.state(1).unwrap();
            for i in 0..nd { w[i] = 0.5 * (p0[i] + p1[i]); }
        } else if j == n {
            let pn1 = p.state(n - 1).unwrap(); let pn = p.state(n).unwrap();
            for i in 0..nd { w[i] = 0.5 * (pn1[i] + pn[i]); }
        } else {
            let pm = p.state(j - 1).unwrap(); let pj = p.state(j).unwrap(); let pp = p.state(j + 1).unwrap();
            for i in 0..nd { w[i] = 0.25 * (pm[i] + 2.0 * pj[i] + pp[i]); }
        }
        for (jj, col) in layout.actuator_loads.cols.iter().enumerate() {
            g_smooth.values[j][jj] = u.values[j][jj] - dot(col, &w);
        }
    }
    let mut solver = WindowSolver::new(&ops, &rc, &layout, &q, grid, SolverStrategy::default()).unwrap();
    let h = 1e-5;
    let mid_cost = |y: &orhc::timestep::StateTrajectory, uu: &ControlTrajectory| -> f64 {
        // state term by midpoint rule, control term trapezoid
        let mut acc = 0.0;
        let mut ybar = vec![0.0; nd];
        for k in 0..n {
            let yk = y.state(k).unwrap(); let yk1 = y.state(k + 1).unwrap();
            for i in 0..nd { ybar[i] = 0.5 * (yk[i] + yk1[i]); }
            acc += q.hq_norm_sq(&ops, &ybar);
        }
        let mut uacc = 0.0;
        for k in 0..=n {
            let wgt = if k == 0 || k == n { 0.5 } else { 1.0 };
            uacc += wgt * dot(&uu.values[k], &uu.values[k]);
        }
        0.5 * dt * (acc + uacc)
    };
    println!("{} nodes", n_nodes);
    for trial in 0..6 {
        let mut delta = ControlTrajectory::zeros(grid, 8);
        for dk in delta.values.iter_mut() { rng.fill_symmetric(dk); }
        let mut up = u.clone(); up.axpy(h, &delta);
        let mut um = u.clone(); um.axpy(-h, &delta);
        let yp = solver.forward(&y_in, &up).unwrap();
        let ym = solver.forward(&y_in, &um).unwrap();
        let jp = evaluate_cost(&ops, &q, &yp, &up).unwrap();
        let jm = evaluate_cost(&ops, &q, &ym, &um).unwrap();
        let fd_trap = (jp - jm) / (2.0 * h);
        let fd_mid = (mid_cost(&yp, &up) - mid_cost(&ym, &um)) / (2.0 * h);
        let gd = g.l2_inner(&delta);
        let gsd = g_smooth.l2_inner(&delta);
        println!("trial {trial}: node-G vs trapJ rel {:.2e} | smooth-G vs trapJ rel {:.2e} | smooth-G vs midJ rel {:.2e}",
            (fd_trap - gd).abs() / gd.abs(),
            (fd_trap - gsd).abs() / gsd.abs(),
            (fd_mid - gsd).abs() / gsd.abs());
    }
}
