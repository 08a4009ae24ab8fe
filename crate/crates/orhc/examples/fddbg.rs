use orhc::fem::{assemble_static, BoundaryCondition, Mesh, OscillatingCoefficients, RcAssembler};
use orhc::layout::build_layout;
use orhc::linalg::SplitMix64;
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
    for (t_end, dt) in [(0.05, 2e-3), (0.05, 1e-3), (0.05, 5e-4), (0.05, 2.5e-4), (0.05, 1.25e-4)] {
        let grid = TimeGrid::span(0.0, t_end, dt).unwrap();
        let mut rng = SplitMix64::new(64);
        let mut u = ControlTrajectory::zeros(grid, 8);
        for uk in u.values.iter_mut() { rng.fill_symmetric(uk); }
        let (g, _, _) = gradient(&ops, &rc, &layout, &q, grid, &y_in, &u, SolverStrategy::default()).unwrap();
        let mut solver = WindowSolver::new(&ops, &rc, &layout, &q, grid, SolverStrategy::default()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for d in 0..4 {
            let mut delta = ControlTrajectory::zeros(grid, 8);
            for dk in delta.values.iter_mut() { rng.fill_symmetric(dk); }
            let mut up = u.clone(); up.axpy(h, &delta);
            let mut um = u.clone(); um.axpy(-h, &delta);
            let yp = solver.forward(&y_in, &up).unwrap();
            let ym = solver.forward(&y_in, &um).unwrap();
            let jp = evaluate_cost(&ops, &q, &yp, &up).unwrap();
            let jm = evaluate_cost(&ops, &q, &ym, &um).unwrap();
            let fd = (jp - jm) / (2.0 * h);
            let gd = g.l2_inner(&delta);
            let rel = (fd - gd).abs() / gd.abs().max(1e-30);
            if d == 0 { println!("  dt={dt:8.1e}  J+ = {jp:.6e}  fd={fd:+.6e} gd={gd:+.6e} absdiff={:.2e} rel={rel:.2e}", (fd-gd).abs()); }
            worst = worst.max(rel);
        }
        println!("dt = {dt:8.1e}  worst rel = {worst:.3e}");
    }
}
