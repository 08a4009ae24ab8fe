//! Finite-time-horizon open-loop optimal control: adjoint-based
//! gradients, alternating Barzilai-Borwein stepsizes and the
//! bi-tolerance stopping rule.
//!
//! The cost over a window `(t_in, t_in + T)` is
//! `J = 1/2 int ||Q y||^2 + |u|^2 dt` subject to the Crank-Nicolson
//! dynamics; its gradient is `G(u, p) = u - B^T p` with the adjoint `p`
//! integrated backward with transposed matrices and source `-Q* Q y`.

use crate::error::OrhcError;
use crate::fem::{OperatorSet, RcAssembler};
use crate::layout::ActuatorSensorLayout;
use crate::linalg::dot;
use crate::spectral::PenaltyOperator;
use crate::timestep::{
    cn_backward_adjoint, cn_forward, CnIntegrator, SolverStrategy, StateTrajectory, StorePolicy,
    TimeGrid,
};
use crate::Result;

/// Stepsize clipping window of the aBB rule.
const STEP_CLIP: (f64, f64) = (1e-8, 1e8);

/// Control input sampled at grid nodes, `values[k]` in `R^M`.
#[derive(Debug, Clone)]
pub struct ControlTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
}

impl ControlTrajectory {
    pub fn zeros(grid: TimeGrid, m: usize) -> Self {
        Self {
            grid,
            values: vec![vec![0.0; m]; grid.n_nodes()],
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Midpoint average of step `k`.
    pub fn midpoint_value(&self, k: usize) -> Vec<f64> {
        self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Trapezoidal `L^2(t)` inner product with another trajectory on
    /// the same grid.
    pub fn l2_inner(&self, other: &ControlTrajectory) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let n = self.grid.n_steps;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * dot(&self.values[k], &other.values[k]);
        }
        acc * self.grid.dt
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_inner(self)
    }

    /// self += alpha * other (same grid).
    pub fn axpy(&mut self, alpha: f64, other: &ControlTrajectory) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }
}

/// The reference minimal/maximal tolerance pairs of the dynamic rule.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TolerancePolicy {
    pub tol_low: (f64, f64),
    pub tol_up: (f64, f64),
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            tol_low: (1e-28, 1e-14),
            tol_up: (1e-4, 1e-2),
        }
    }
}

impl TolerancePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.tol_low.0 > self.tol_up.0 || self.tol_low.1 > self.tol_up.1 {
            return Err(OrhcError::Config(
                "tolerance policy requires tol_low <= tol_up componentwise".into(),
            ));
        }
        if self.tol_low.0 <= 0.0 || self.tol_low.1 <= 0.0 {
            return Err(OrhcError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Loosened floor used in the accuracy-degradation study.
    pub fn degraded() -> Self {
        Self {
            tol_low: (1e-8, 1e-4),
            ..Self::default()
        }
    }
}

/// Window tolerance pair from the estimate norm:
/// `Tol_hat = 1e-2 ||yhat||^2 / (T_rh + 1)`, clamped to the policy
/// bounds componentwise.
pub fn dynamic_tolerance(policy: &TolerancePolicy, yhat_norm: f64, t_rh: f64) -> (f64, f64) {
    assert!(yhat_norm >= 0.0);
    let tol_hat = 1e-2 * yhat_norm * yhat_norm / (t_rh + 1.0);
    (
        tol_hat.clamp(policy.tol_low.0, policy.tol_up.0),
        tol_hat.clamp(policy.tol_low.1, policy.tol_up.1),
    )
}

/// Alternating Barzilai-Borwein stepsize. `k` is the 1-based index of
/// the BB-eligible update (odd uses the `s.s/s.r` quotient, even uses
/// `s.r/r.r`); non-finite or non-positive curvature falls back to the
/// previous accepted stepsize. The result is clipped to `[1e-8, 1e8]`.
pub fn abb_step(k: usize, s_dot_s: f64, s_dot_r: f64, r_dot_r: f64, prev_step: f64) -> f64 {
    let raw = if s_dot_r.is_finite() && s_dot_r > 0.0 {
        if k % 2 == 1 {
            s_dot_s / s_dot_r
        } else {
            s_dot_r / r_dot_r
        }
    } else {
        prev_step
    };
    if raw.is_finite() && raw > 0.0 {
        raw.clamp(STEP_CLIP.0, STEP_CLIP.1)
    } else {
        prev_step.clamp(STEP_CLIP.0, STEP_CLIP.1)
    }
}

/// Trapezoidal evaluation of the window cost
/// `1/2 int ||Q y||^2 + |u|^2 dt` from a fully stored state trajectory.
pub fn evaluate_cost(
    ops: &OperatorSet,
    q: &PenaltyOperator,
    y: &StateTrajectory,
    u: &ControlTrajectory,
) -> Result<f64> {
    if y.grid != u.grid {
        return Err(OrhcError::Config(
            "evaluate_cost requires matching state/control grids".into(),
        ));
    }
    let n = y.grid.n_steps;
    let mut acc = 0.0;
    for k in 0..=n {
        let state = y.state(k).ok_or_else(|| {
            OrhcError::Config("evaluate_cost needs a fully stored trajectory".into())
        })?;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        acc += w * (q.hq_norm_sq(ops, state) + dot(&u.values[k], &u.values[k]));
    }
    Ok(0.5 * acc * y.grid.dt)
}

/// One optimal-control window solver; owns the integrator so anchor
/// factorizations are shared across gradient iterations and across the
/// forward/backward sweeps.
pub struct WindowSolver<'a> {
    pub integ: CnIntegrator<'a>,
    ops: &'a OperatorSet,
    rc: &'a RcAssembler<'a>,
    layout: &'a ActuatorSensorLayout,
    q: &'a PenaltyOperator,
    /// Step-time reaction-convection values for the adjoint source.
    c_step: crate::linalg::CsrMatrix,
    /// Mass factorization for penalty kinds whose `M^{-1} Q* Q` does not
    /// cancel algebraically.
    mass_lu: Option<crate::linalg::BandLu>,
}

impl<'a> WindowSolver<'a> {
    pub fn new(
        ops: &'a OperatorSet,
        rc: &'a RcAssembler<'a>,
        layout: &'a ActuatorSensorLayout,
        q: &'a PenaltyOperator,
        grid: TimeGrid,
        strategy: SolverStrategy,
    ) -> Result<Self> {
        let c_step = crate::linalg::CsrMatrix::zeros(rc.pattern().clone());
        let mass_lu = match q.kind {
            crate::spectral::PenaltyKind::Sensors | crate::spectral::PenaltyKind::SqrtA => {
                let bw = ops.mass.pattern().bandwidth();
                Some(ops.mass.to_band(bw, bw)?.factor()?)
            }
            _ => None,
        };
        Ok(Self {
            integ: CnIntegrator::new(ops, rc, grid, strategy)?,
            ops,
            rc,
            layout,
            q,
            c_step,
            mass_lu,
        })
    }

    /// Forward sweep with actuation `u`.
    pub fn forward(&mut self, y_in: &[f64], u: &ControlTrajectory) -> Result<StateTrajectory> {
        let layout = self.layout;
        let forcing = |k: usize, _t: f64, out: &mut [f64]| {
            let um = u.midpoint_value(k);
            out.fill(0.0);
            for (col, &uj) in layout.actuator_loads.cols.iter().zip(&um) {
                crate::linalg::axpy(uj, col, out);
            }
        };
        cn_forward(&mut self.integ, y_in, Some(forcing), StorePolicy::Full)
    }

    /// Adjoint sweep for a stored forward trajectory, followed by the
    /// exact discrete gradient of the trapezoidal cost.
    ///
    /// The trapezoid state term splits exactly into a midpoint term plus
    /// `dt/8 sum |Q(y_{k+1} - y_k)|^2`; eliminating the linearized state
    /// differences through the scheme itself turns the gradient into a
    /// single backward sweep with source
    /// `-Q*Q ybar_k + dt/4 A_k^T d_k`, `d_k = M^{-1} Q*Q (y_{k+1}-y_k)`,
    /// plus a direct control term through `B^T d_k`. The resulting G
    /// reproduces directional derivatives of the evaluated cost to
    /// roundoff, which the finite-difference oracle relies on.
    pub fn gradient_from_forward(
        &mut self,
        y: &StateTrajectory,
        u: &ControlTrajectory,
    ) -> Result<(ControlTrajectory, StateTrajectory)> {
        let ops = self.ops;
        let q = self.q;
        let rc = self.rc;
        let n_dofs = self.ops.n_dofs();
        let n = u.grid.n_steps;
        let m = self.layout.n_actuators();
        let dt = u.grid.dt;
        let mass_lu = self.mass_lu.as_ref();
        let c_step = &mut self.c_step;
        let layout = self.layout;
        // beta_k = B^T M^{-1} Q*Q (y_{k+1} - y_k), collected during the
        // backward sweep for the direct control term.
        let mut beta: Vec<Vec<f64>> = vec![vec![0.0; m]; n];
        let mut ybar = vec![0.0; n_dofs];
        let mut dy = vec![0.0; n_dofs];
        let mut d = vec![0.0; n_dofs];
        let mut err: Option<crate::error::OrhcError> = None;
        {
            let err = &mut err;
            let beta = &mut beta;
            let source = |k: usize, t_mid: f64, out: &mut [f64]| {
                let yk = y.state(k).expect("forward stored fully");
                let yk1 = y.state(k + 1).expect("forward stored fully");
                for i in 0..n_dofs {
                    ybar[i] = 0.5 * (yk[i] + yk1[i]);
                    dy[i] = yk1[i] - yk[i];
                }
                out.fill(0.0);
                q.add_qstar_q(ops, &ybar, -1.0, out);
                // difference correction: + dt/4 A_k^T d_k
                d.fill(0.0);
                if let Err(e) = q.add_minv_qstar_q(ops, mass_lu, &dy, 1.0, &mut d) {
                    *err = Some(e);
                    return;
                }
                ops.stiffness_a.matvec_add(0.25 * dt, &d, out);
                rc.assemble_into(t_mid, c_step.values_mut());
                // transposed convection application, accumulated by hand
                // to keep a single pass
                let mut ctd = vec![0.0; n_dofs];
                c_step.matvec_transpose(&d, &mut ctd);
                crate::linalg::axpy(0.25 * dt, &ctd, out);
                for (j, col) in layout.actuator_loads.cols.iter().enumerate() {
                    beta[k][j] = dot(col, &d);
                }
            };
            let zero = vec![0.0; n_dofs];
            let p = cn_backward_adjoint(&mut self.integ, &zero, Some(source), StorePolicy::Full)?;
            if let Some(e) = err.take() {
                return Err(e);
            }
            let mut g = ControlTrajectory::zeros(u.grid, m);
            // Node values of the adjoint in the trapezoid-consistent
            // (dual) representation: step vectors
            // c_k = (p_k + p_{k+1})/2 - dt/4 d_k distributed onto nodes
            // with trapezoid weights.
            let mut w = vec![0.0; n_dofs];
            for k in 0..=n {
                if k == 0 {
                    let p0 = p.state(0).expect("adjoint stored fully");
                    let p1 = p.state(1.min(n)).expect("adjoint stored fully");
                    for i in 0..n_dofs {
                        w[i] = 0.5 * (p0[i] + p1[i]);
                    }
                } else if k == n {
                    let pm = p.state(n - 1).expect("adjoint stored fully");
                    let pn = p.state(n).expect("adjoint stored fully");
                    for i in 0..n_dofs {
                        w[i] = 0.5 * (pm[i] + pn[i]);
                    }
                } else {
                    let pm = p.state(k - 1).expect("adjoint stored fully");
                    let pk = p.state(k).expect("adjoint stored fully");
                    let pp = p.state(k + 1).expect("adjoint stored fully");
                    for i in 0..n_dofs {
                        w[i] = 0.25 * (pm[i] + 2.0 * pk[i] + pp[i]);
                    }
                }
                let gk = &mut g.values[k];
                for (j, col) in layout.actuator_loads.cols.iter().enumerate() {
                    gk[j] = u.values[k][j] - dot(col, &w);
                }
                // beta distribution: node 0 takes beta_0, node n takes
                // beta_{n-1}, interior nodes the average of their two
                // neighbours (trapezoid weights fold in exactly).
                let quarter_dt = 0.25 * dt;
                if k == 0 {
                    for j in 0..m {
                        gk[j] += quarter_dt * beta[0][j];
                    }
                } else if k == n {
                    for j in 0..m {
                        gk[j] += quarter_dt * beta[n - 1][j];
                    }
                } else {
                    for j in 0..m {
                        gk[j] += quarter_dt * 0.5 * (beta[k - 1][j] + beta[k][j]);
                    }
                }
            }
            Ok((g, p))
        }
    }
}

/// `G(u, p)` together with the trajectories that produced it (one-shot
/// form of the window gradient).
pub fn gradient<'a>(
    ops: &'a OperatorSet,
    rc: &'a RcAssembler<'a>,
    layout: &'a ActuatorSensorLayout,
    q: &'a PenaltyOperator,
    grid: TimeGrid,
    y_in: &[f64],
    u: &ControlTrajectory,
    strategy: SolverStrategy,
) -> Result<(ControlTrajectory, StateTrajectory, StateTrajectory)> {
    let mut solver = WindowSolver::new(ops, rc, layout, q, grid, strategy)?;
    let y = solver.forward(y_in, u)?;
    let (g, p) = solver.gradient_from_forward(&y, u)?;
    Ok((g, y, p))
}

/// Result of one finite-horizon solve.
#[derive(Debug)]
pub struct OcpResult {
    pub u_star: ControlTrajectory,
    pub y_star: StateTrajectory,
    pub cost: f64,
    pub iterations: usize,
    pub tol_used: (f64, f64),
    pub residual_g_norm_sq: f64,
    pub converged: bool,
}

/// Per-iteration trace row for the verbose convergence log.
#[derive(Debug, Clone, Copy)]
pub struct IterTrace {
    pub iteration: usize,
    pub g_norm_sq: f64,
    pub du_norm_sq: f64,
    pub stepsize: f64,
    pub cost: f64,
}

/// Gradient iteration with alternating Barzilai-Borwein stepsizes, run
/// until both bi-tolerance conditions hold:
/// `max(||du||^2, ||dG||^2) <= Tol1` and `||G||^2 <= Tol2` (squared
/// `L^2` norms over the window). On iteration exhaustion the latest
/// iterate is returned with `converged = false`.
#[allow(clippy::too_many_arguments)]
pub fn solve_ocp(
    ops: &OperatorSet,
    rc: &RcAssembler,
    layout: &ActuatorSensorLayout,
    q: &PenaltyOperator,
    t_in: f64,
    t_rh: f64,
    dt: f64,
    y_in: &[f64],
    tol: (f64, f64),
    u_init: Option<ControlTrajectory>,
    max_iter: usize,
    strategy: SolverStrategy,
    mut trace: Option<&mut Vec<IterTrace>>,
) -> Result<OcpResult> {
    if !(t_rh > 0.0) {
        return Err(OrhcError::Config("prediction horizon must be positive".into()));
    }
    if !(tol.0 > 0.0 && tol.1 > 0.0) {
        return Err(OrhcError::Config("tolerances must be positive".into()));
    }
    let grid = TimeGrid::span(t_in, t_in + t_rh, dt)?;
    let m = layout.n_actuators();
    let mut solver = WindowSolver::new(ops, rc, layout, q, grid, strategy)?;

    let mut u = match u_init {
        Some(u0) => {
            if u0.grid != grid || u0.n_inputs() != m {
                return Err(OrhcError::Config(
                    "u_init grid/dimension does not match the window".into(),
                ));
            }
            u0
        }
        None => ControlTrajectory::zeros(grid, m),
    };

    let mut y = solver.forward(y_in, &u)?;
    let (mut g, _p) = solver.gradient_from_forward(&y, &u)?;
    let mut g_norm_sq = g.l2_norm_sq();
    let mut iterations = 1usize;

    // Already at a stationary point within both tolerances (e.g. zero
    // initial state): no update needed.
    if g_norm_sq <= tol.1 && g_norm_sq <= tol.0 {
        let cost = evaluate_cost(ops, q, &y, &u)?;
        return Ok(OcpResult {
            u_star: u,
            y_star: y,
            cost,
            iterations,
            tol_used: tol,
            residual_g_norm_sq: g_norm_sq,
            converged: true,
        });
    }

    let mut step = 1.0 / g_norm_sq.sqrt().max(1.0);
    let mut converged = false;
    let mut bb_index = 0usize;
    while iterations < max_iter {
        // u_next = u - step * G
        let mut u_next = u.clone();
        u_next.axpy(-step, &g);
        let y_next = solver.forward(y_in, &u_next)?;
        let (g_next, _p) = solver.gradient_from_forward(&y_next, &u_next)?;
        iterations += 1;
        let g_next_norm_sq = g_next.l2_norm_sq();

        // differences of consecutive iterates
        let mut du = u_next.clone();
        du.axpy(-1.0, &u);
        let mut dg = g_next.clone();
        dg.axpy(-1.0, &g);
        let du_norm_sq = du.l2_norm_sq();
        let dg_norm_sq = dg.l2_norm_sq();

        if let Some(t) = trace.as_deref_mut() {
            let cost = evaluate_cost(ops, q, &y_next, &u_next)?;
            t.push(IterTrace {
                iteration: iterations,
                g_norm_sq: g_next_norm_sq,
                du_norm_sq,
                stepsize: step,
                cost,
            });
        }

        let stop = du_norm_sq.max(dg_norm_sq) <= tol.0 && g_norm_sq <= tol.1;

        // aBB stepsize from the accepted pair (s, r)
        bb_index += 1;
        let s_dot_r = du.l2_inner(&dg);
        step = abb_step(bb_index, du_norm_sq, s_dot_r, dg_norm_sq, step);

        u = u_next;
        y = y_next;
        g = g_next;
        g_norm_sq = g_next_norm_sq;

        if stop {
            converged = true;
            break;
        }
    }

    let cost = evaluate_cost(ops, q, &y, &u)?;
    Ok(OcpResult {
        u_star: u,
        y_star: y,
        cost,
        iterations,
        tol_used: tol,
        residual_g_norm_sq: g_norm_sq,
        converged,
    })
}
