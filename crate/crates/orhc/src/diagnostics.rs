//! Self-check oracles: finite-difference gradient verification,
//! projection idempotence, discrete adjoint duality and the
//! Crank-Nicolson convergence order. The CLI `check` subcommand and the
//! verification tests share these routines.

use crate::fem::RcAssembler;
use crate::linalg::SplitMix64;
use crate::ocp::{evaluate_cost, ControlTrajectory, WindowSolver};
use crate::rhc::run_free;
use crate::scenario::Instance;
use crate::timestep::{cn_backward_adjoint, cn_forward, CnIntegrator, StorePolicy, TimeGrid};
use crate::Result;

/// One diagnostic outcome.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Measured figure of merit (whatever the check maximizes over its
    /// samples).
    pub measured: f64,
    /// Pass threshold (measured must stay at or below it, except for
    /// the order check which must land inside a window).
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

/// Central-difference directional-derivative test of the window cost:
/// worst relative error over `n_directions` pseudo-random directions at
/// `h = 1e-5`.
pub fn gradient_fd_check(
    inst: &Instance,
    t_rh: f64,
    n_directions: usize,
    seed: u64,
) -> Result<CheckResult> {
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let grid = TimeGrid::span(0.0, t_rh, inst.dt())?;
    let m = inst.layout.n_actuators();
    let mut rng = SplitMix64::new(seed);
    let mut u = ControlTrajectory::zeros(grid, m);
    for uk in u.values.iter_mut() {
        rng.fill_symmetric(uk);
    }
    let mut solver = WindowSolver::new(
        &inst.ops,
        &rc,
        &inst.layout,
        &inst.q,
        grid,
        inst.strategy(),
    )?;
    let y = solver.forward(&inst.yhat0, &u)?;
    let (g, _p) = solver.gradient_from_forward(&y, &u)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_directions {
        let mut delta = ControlTrajectory::zeros(grid, m);
        for dk in delta.values.iter_mut() {
            rng.fill_symmetric(dk);
        }
        let mut up = u.clone();
        up.axpy(h, &delta);
        let mut um = u.clone();
        um.axpy(-h, &delta);
        let yp = solver.forward(&inst.yhat0, &up)?;
        let ym = solver.forward(&inst.yhat0, &um)?;
        let jp = evaluate_cost(&inst.ops, &inst.q, &yp, &up)?;
        let jm = evaluate_cost(&inst.ops, &inst.q, &ym, &um)?;
        let fd = (jp - jm) / (2.0 * h);
        let gd = g.l2_inner(&delta);
        worst = worst.max((fd - gd).abs() / gd.abs().max(1e-30));
    }
    let threshold = 1e-4;
    Ok(CheckResult {
        name: "gradient_fd",
        measured: worst,
        threshold,
        passed: worst <= threshold,
        detail: format!("worst relative FD error over {n_directions} directions (h = {h:e})"),
    })
}

/// Idempotence of the sensor-span projection over pseudo-random states.
pub fn projection_idempotence_check(inst: &Instance, samples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let n = inst.ops.n_dofs();
    let mut worst = 0.0f64;
    let mut diff = vec![0.0; n];
    for _ in 0..samples {
        let mut y = vec![0.0; n];
        rng.fill_symmetric(&mut y);
        let py = inst.layout.project_onto_sensors(&y)?;
        let ppy = inst.layout.project_onto_sensors(&py)?;
        for i in 0..n {
            diff[i] = ppy[i] - py[i];
        }
        let rel = inst.ops.mass_norm(&diff) / inst.ops.mass_norm(&y).max(1e-300);
        worst = worst.max(rel);
    }
    let threshold = 1e-10;
    Ok(CheckResult {
        name: "projection_idempotence",
        measured: worst,
        threshold,
        passed: worst <= threshold,
        detail: format!("worst |P^2 y - P y|_M / |y|_M over {samples} states"),
    })
}

/// Discrete duality of the forward/adjoint pair: with `S` the
/// forcing-to-final-state map and the homogeneous adjoint march from a
/// terminal state, the trapezoid-in-p pairing reproduces the terminal
/// inner product exactly up to roundoff.
pub fn adjoint_duality_check(inst: &Instance, t_span: f64, seed: u64) -> Result<CheckResult> {
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let grid = TimeGrid::span(0.0, t_span, inst.dt())?;
    let n = inst.ops.n_dofs();
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        // per-step forcing loads, frozen up front
        let mut loads: Vec<Vec<f64>> = Vec::with_capacity(grid.n_steps);
        for _ in 0..grid.n_steps {
            let mut f = vec![0.0; n];
            rng.fill_symmetric(&mut f);
            loads.push(f);
        }
        let mut q_vec = vec![0.0; n];
        rng.fill_symmetric(&mut q_vec);

        let mut integ = CnIntegrator::new(&inst.ops, &rc, grid, inst.strategy())?;
        let zero = vec![0.0; n];
        let forcing = |k: usize, _t: f64, out: &mut [f64]| out.copy_from_slice(&loads[k]);
        let y = cn_forward(&mut integ, &zero, Some(forcing), StorePolicy::NormsOnly)?;
        let p = cn_backward_adjoint(
            &mut integ,
            &q_vec,
            None::<fn(usize, f64, &mut [f64])>,
            StorePolicy::Full,
        )?;
        // <S f, q>_M
        let mut mq = vec![0.0; n];
        inst.ops.mass.matvec(&q_vec, &mut mq);
        let lhs = crate::linalg::dot(y.final_state(), &mq);
        // sum_k dt f_k . (p_k + p_{k+1})/2
        let mut rhs = 0.0;
        for (k, f) in loads.iter().enumerate() {
            let pk = p.state(k).expect("full adjoint");
            let pk1 = p.state(k + 1).expect("full adjoint");
            let mut acc = 0.0;
            for i in 0..n {
                acc += f[i] * 0.5 * (pk[i] + pk1[i]);
            }
            rhs += grid.dt * acc;
        }
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-30);
        worst = worst.max(rel);
    }
    let threshold = 1e-8;
    Ok(CheckResult {
        name: "adjoint_duality",
        measured: worst,
        threshold,
        passed: worst <= threshold,
        detail: "relative defect of the discrete forward/adjoint pairing".into(),
    })
}

/// Richardson order estimate of the free dynamics over `[0, t_span]`:
/// `|y_dt - y_{dt/2}| / |y_{dt/2} - y_{dt/4}|` at the final time in the
/// mass norm, which sits near 4 for a second-order scheme.
pub fn cn_order_check(inst: &Instance, t_span: f64) -> Result<CheckResult> {
    let coeffs = inst.coefficients();
    let rc = RcAssembler::new(&inst.mesh, &inst.ops, coeffs.as_ref());
    let dt = inst.dt();
    let mut finals: Vec<Vec<f64>> = Vec::new();
    for div in [1.0, 2.0, 4.0] {
        let grid = TimeGrid::span(0.0, t_span, dt / div)?;
        let traj = run_free(
            &inst.ops,
            &rc,
            grid,
            &inst.y0,
            inst.strategy(),
            StorePolicy::NormsOnly,
        )?;
        finals.push(traj.final_state().to_vec());
    }
    let n = inst.ops.n_dofs();
    let mut d01 = vec![0.0; n];
    let mut d12 = vec![0.0; n];
    for i in 0..n {
        d01[i] = finals[0][i] - finals[1][i];
        d12[i] = finals[1][i] - finals[2][i];
    }
    let ratio = inst.ops.mass_norm(&d01) / inst.ops.mass_norm(&d12).max(1e-300);
    let passed = (3.5..=4.5).contains(&ratio);
    Ok(CheckResult {
        name: "cn_order",
        measured: ratio,
        threshold: 4.0,
        passed,
        detail: "Richardson ratio across dt, dt/2, dt/4 (must lie in [3.5, 4.5])".into(),
    })
}

/// The full oracle suite on a scenario instance.
pub fn run_all_checks(inst: &Instance) -> Result<Vec<CheckResult>> {
    let seed = inst.config.seed ^ 0x00c0_ffee;
    Ok(vec![
        projection_idempotence_check(inst, 25, seed)?,
        adjoint_duality_check(inst, 0.1, seed.wrapping_add(1))?,
        cn_order_check(inst, 0.2)?,
        gradient_fd_check(inst, 0.25, 10, seed.wrapping_add(2))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn small_instance() -> Instance {
        let mut cfg = ScenarioConfig::default();
        cfg.mesh.n_div = 16;
        cfg.penalty.n_q = 10;
        cfg.time.dt0 = 2e-3;
        cfg.build().unwrap()
    }

    #[test]
    fn projection_and_duality_checks_pass_small() {
        let inst = small_instance();
        let p = projection_idempotence_check(&inst, 10, 3).unwrap();
        assert!(p.passed, "{p:?}");
        let d = adjoint_duality_check(&inst, 0.05, 4).unwrap();
        assert!(d.passed, "{d:?}");
    }

    #[test]
    fn order_check_passes_small() {
        let inst = small_instance();
        let c = cn_order_check(&inst, 0.2).unwrap();
        assert!(c.passed, "{c:?}");
    }
}
