use orhc::fem::{assemble_static, BoundaryCondition, Mesh, OscillatingCoefficients, RcAssembler};
use orhc::timestep::{cn_forward, CnIntegrator, SolverStrategy, StorePolicy, TimeGrid};
use std::time::Instant;

fn main() {
    for n_div in [32usize, 48] {
        let mesh = Mesh::build(n_div, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 1.0, 4e-4).unwrap(); // 2500 steps
        let y0 = ops.interpolate(&mesh, |x| 1.0 - 2.0 * (std::f64::consts::PI * x[0]).cos());
        for (name, strat) in [
            ("anchored-0.05", SolverStrategy::Anchored { interval: 0.05 }),
            ("direct", SolverStrategy::Direct),
        ] {
            let mut integ = CnIntegrator::new(&ops, &rc, grid, strat).unwrap();
            let t0 = Instant::now();
            let traj = cn_forward(
                &mut integ,
                &y0,
                None::<fn(usize, f64, &mut [f64])>,
                StorePolicy::NormsOnly,
            )
            .unwrap();
            let el = t0.elapsed().as_secs_f64();
            println!(
                "n_div={n_div:2} {name:14} {:7.1} ms total, {:6.1} us/step, fallbacks {}, |y(1)| = {:.6}",
                el * 1e3,
                el * 1e6 / grid.n_steps as f64,
                integ.fallback_count,
                traj.norms[grid.n_steps]
            );
        }
    }
}
