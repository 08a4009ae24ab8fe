use orhc::fem::RcAssembler;
use orhc::linalg::{dot, SplitMix64};
use orhc::ocp::{evaluate_cost, ControlTrajectory, WindowSolver};
use orhc::scenario::ScenarioConfig;
use orhc::timestep::TimeGrid;

fn main() {
    let cfg = ScenarioConfig::default();
    let inst = cfg.build().unwrap();
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let grid = TimeGrid::span(0.0, 0.25, inst.dt()).unwrap();
    let n = grid.n_steps;
    let nd = inst.ops.n_dofs();
    let dt = inst.dt();
    for (label, y_in) in [("rough yhat0", inst.yhat0.clone()), ("smooth y0", inst.y0.clone())] {
        let mut rng = SplitMix64::new(0x00c0_ffee ^ 0 + 2); // match check seed
        let mut u = ControlTrajectory::zeros(grid, 8);
        for uk in u.values.iter_mut() { rng.fill_symmetric(uk); }
        let mut solver = WindowSolver::new(&inst.ops, &rc, &inst.layout, &inst.q, grid, inst.strategy()).unwrap();
        let y = solver.forward(&y_in, &u).unwrap();
        let (g, _p) = solver.gradient_from_forward(&y, &u).unwrap();
        // midpoint-state cost
        let mid_cost = |y: &orhc::timestep::StateTrajectory, uu: &ControlTrajectory| -> f64 {
            let mut acc = 0.0;
            let mut ybar = vec![0.0; nd];
            for k in 0..n {
                let yk = y.state(k).unwrap(); let yk1 = y.state(k + 1).unwrap();
                for i in 0..nd { ybar[i] = 0.5 * (yk[i] + yk1[i]); }
                acc += inst.q.hq_norm_sq(&inst.ops, &ybar);
            }
            let mut uacc = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                uacc += w * dot(&uu.values[k], &uu.values[k]);
            }
            0.5 * dt * (acc + uacc)
        };
        let h = 1e-5;
        let (mut worst_trap, mut worst_mid) = (0.0f64, 0.0f64);
        for _ in 0..10 {
            let mut delta = ControlTrajectory::zeros(grid, 8);
            for dk in delta.values.iter_mut() { rng.fill_symmetric(dk); }
            let mut up = u.clone(); up.axpy(h, &delta);
            let mut um = u.clone(); um.axpy(-h, &delta);
            let yp = solver.forward(&y_in, &up).unwrap();
            let ym = solver.forward(&y_in, &um).unwrap();
            let fd_trap = (evaluate_cost(&inst.ops, &inst.q, &yp, &up).unwrap()
                - evaluate_cost(&inst.ops, &inst.q, &ym, &um).unwrap()) / (2.0 * h);
            let fd_mid = (mid_cost(&yp, &up) - mid_cost(&ym, &um)) / (2.0 * h);
            let gd = g.l2_inner(&delta);
            worst_trap = worst_trap.max((fd_trap - gd).abs() / gd.abs().max(1e-30));
            worst_mid = worst_mid.max((fd_mid - gd).abs() / gd.abs().max(1e-30));
        }
        println!("{label:12}: worst trapJ rel {worst_trap:.3e} | worst midJ rel {worst_mid:.3e}");
    }
}
