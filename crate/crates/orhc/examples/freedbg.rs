use orhc::fem::{assemble_static, BoundaryCondition, Mesh, OscillatingCoefficients, RcAssembler};
use orhc::timestep::{cn_forward, CnIntegrator, SolverStrategy, StorePolicy, TimeGrid};

fn main() {
    let mesh = Mesh::build(32, 0).unwrap();
    let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
    let coeffs = OscillatingCoefficients;
    let rc = RcAssembler::new(&mesh, &ops, &coeffs);
    let grid = TimeGrid::span(0.0, 4.0, 4e-4).unwrap();
    let y0 = ops.interpolate(&mesh, |x| 1.0 - 2.0 * (std::f64::consts::PI * x[0]).cos());
    let mut integ = CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
    let traj = cn_forward(&mut integ, &y0, None::<fn(usize, f64, &mut [f64])>, StorePolicy::NormsOnly).unwrap();
    for k in (0..=grid.n_steps).step_by(1250) {
        println!("t = {:4.1}  |y| = {:12.6e}  ln|y| = {:7.3}", grid.node(k), traj.norms[k], traj.norms[k].ln());
    }
}
