//! The output-based receding-horizon closed loop: per-window optimal
//! control solves from the observer estimate, online concatenation-time
//! selection, coupled plant/observer evolution and squeezing
//! diagnostics with the consecutive/total violation stops.

use crate::error::OrhcError;
use crate::fem::{OperatorSet, RcAssembler};
use crate::layout::{ActuatorSensorLayout, ObserverConfig};
use crate::ocp::{dynamic_tolerance, solve_ocp, ControlTrajectory, TolerancePolicy};
use crate::spectral::PenaltyOperator;
use crate::timestep::{
    cn_coupled_plant_observer, cn_forward, CnIntegrator, SolverStrategy, StateTrajectory,
    StorePolicy, TimeGrid,
};
use crate::Result;

/// Concatenation-time selection rule. The max-argmin rule applies each
/// computed input for a maximal time span; min-argmin trades input reuse
/// for decay rate; the fixed rule always advances by the minimal
/// sampling time (experimental, no stability claim).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TnRule {
    MaxArgmin,
    MinArgmin,
    FixedTau,
}

/// Receding-horizon loop parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OrhcConfig {
    /// Prediction horizon.
    pub t_rh: f64,
    /// Minimal sampling time.
    pub tau: f64,
    /// Total computational time.
    pub t_infty: f64,
    pub tn_rule: TnRule,
    /// Stop after this many consecutive squeezing violations.
    pub consecutive_limit: usize,
    /// Stop after this many total squeezing violations.
    pub total_limit: usize,
}

impl OrhcConfig {
    /// Snap the time parameters to grid multiples and validate the
    /// ordering `0 < tau <= t_rh`, `t_infty > 0`.
    pub fn snapped(&self, dt: f64) -> Result<OrhcConfig> {
        let snap = |v: f64| (v / dt).round() * dt;
        let mut out = *self;
        out.t_rh = snap(self.t_rh);
        out.tau = snap(self.tau);
        out.t_infty = snap(self.t_infty);
        if out.tau <= 0.0 || out.t_rh <= 0.0 || out.t_infty <= 0.0 {
            return Err(OrhcError::Config(format!(
                "receding-horizon times must stay positive after grid snapping: tau = {}, t_rh = {}, t_infty = {}",
                out.tau, out.t_rh, out.t_infty
            )));
        }
        if out.tau > out.t_rh {
            return Err(OrhcError::Config(format!(
                "minimal sampling time {} exceeds the prediction horizon {}",
                out.tau, out.t_rh
            )));
        }
        Ok(out)
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedTInfty,
    SqueezeStop,
    OcpFailure,
}

/// Per-window diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WindowRecord {
    /// Window start (previous concatenation time).
    pub t_start: f64,
    /// Chosen concatenation time.
    pub t_end: f64,
    /// Squeezing factor of the predicted optimal trajectory.
    pub theta: f64,
    pub squeeze_ok: bool,
    pub ocp_iterations: usize,
    pub ocp_converged: bool,
    pub tol: (f64, f64),
    pub cost: f64,
}

/// One row of the nodal norm history. Concatenation nodes appear twice
/// (left and right one-sided control values) because the input may jump
/// there.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NormSample {
    pub t: f64,
    pub norm_y: f64,
    pub norm_err: f64,
    pub norm_u: f64,
    pub is_concat: bool,
    pub squeeze_ok: bool,
}

/// Full outcome of a receding-horizon run.
#[derive(Debug, serde::Serialize)]
pub struct OrhcRunRecord {
    pub config: OrhcConfig,
    /// `t_0 = 0 < t_1 < ...` including the final reached time.
    pub concat_times: Vec<f64>,
    /// Squeezing factor per window.
    pub theta: Vec<f64>,
    pub sqz_violations_total: usize,
    pub max_consecutive_violations: usize,
    pub windows: Vec<WindowRecord>,
    pub norm_history: Vec<NormSample>,
    /// Plant norms at concatenation times.
    pub state_norms_at_tn: Vec<f64>,
    /// Estimation-error norms at concatenation times.
    pub error_norms_at_tn: Vec<f64>,
    /// Squared L^2 norm of the applied input over the whole run.
    pub control_energy: f64,
    pub stopped_reason: StopReason,
    /// Total gradient iterations spent in the window solves.
    pub total_ocp_iterations: usize,
}

impl OrhcRunRecord {
    /// Least-squares slope of `ln(values)` against the concatenation
    /// times, restricted to entries above `floor` (values at or below
    /// the floor carry no decay information).
    pub fn fitted_log_slope(times: &[f64], values: &[f64], floor: f64) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&t, &v) in times.iter().zip(values) {
            if v > floor {
                xs.push(t);
                ys.push(v.ln());
            }
        }
        crate::linalg::linear_fit(&xs, &ys).0
    }

    pub fn state_decay_slope(&self) -> f64 {
        Self::fitted_log_slope(&self.concat_times, &self.state_norms_at_tn, 0.0)
    }

    pub fn error_decay_slope(&self, floor: f64) -> f64 {
        Self::fitted_log_slope(&self.concat_times, &self.error_norms_at_tn, floor)
    }

    /// Combined norm sqrt(|y|^2 + |z|^2) at concatenation times.
    pub fn combined_norms_at_tn(&self) -> Vec<f64> {
        self.state_norms_at_tn
            .iter()
            .zip(&self.error_norms_at_tn)
            .map(|(y, z)| (y * y + z * z).sqrt())
            .collect()
    }
}

/// Pick the concatenation node among the window grid nodes in
/// `[t_in + tau, t_in + t_rh]` by the configured rule; ties are broken
/// toward the latest node (max-argmin) or the earliest (min-argmin)
/// under exact floating comparison. Returns the node index within the
/// window grid.
pub fn select_concatenation_index(
    norms: &[f64],
    grid: &TimeGrid,
    tau: f64,
    rule: TnRule,
) -> Result<usize> {
    let k_tau = grid.steps_in(tau)?;
    let n = grid.n_steps;
    if k_tau == 0 || k_tau > n {
        return Err(OrhcError::Config(format!(
            "empty concatenation search window (tau = {tau} on a {n}-step grid)"
        )));
    }
    if rule == TnRule::FixedTau {
        return Ok(k_tau);
    }
    let mut best = k_tau;
    for k in (k_tau + 1)..=n {
        match rule {
            TnRule::MaxArgmin => {
                if norms[k] <= norms[best] {
                    best = k;
                }
            }
            TnRule::MinArgmin => {
                if norms[k] < norms[best] {
                    best = k;
                }
            }
            TnRule::FixedTau => unreachable!(),
        }
    }
    Ok(best)
}

/// Time-valued variant of the selection (the spec-level operation).
pub fn select_concatenation_time(
    y_star: &StateTrajectory,
    tau: f64,
    rule: TnRule,
) -> Result<f64> {
    let idx = select_concatenation_index(&y_star.norms, &y_star.grid, tau, rule)?;
    Ok(y_star.grid.node(idx))
}

/// Initial estimate from the measurable output at time zero: the
/// orthogonal projection of the true initial state onto the sensor
/// span. This is the only controller-side use of the true state, and it
/// only reads it through the sensors.
pub fn information_initial_guess(
    layout: &ActuatorSensorLayout,
    y0_true: &[f64],
) -> Result<Vec<f64>> {
    layout.project_onto_sensors(y0_true)
}

/// Free (uncontrolled) dynamics over a grid; baseline for the
/// instability study.
pub fn run_free(
    ops: &OperatorSet,
    rc: &RcAssembler,
    grid: TimeGrid,
    y0: &[f64],
    strategy: SolverStrategy,
    store: StorePolicy,
) -> Result<StateTrajectory> {
    let mut integ = CnIntegrator::new(ops, rc, grid, strategy)?;
    cn_forward(
        &mut integ,
        y0,
        None::<fn(usize, f64, &mut [f64])>,
        store,
    )
}

/// Solver plumbing shared by every window.
pub struct OcpSettings {
    pub tol_policy: TolerancePolicy,
    pub max_iter: usize,
    pub warm_start: bool,
}

impl Default for OcpSettings {
    fn default() -> Self {
        Self {
            tol_policy: TolerancePolicy::default(),
            max_iter: 2000,
            warm_start: false,
        }
    }
}

/// Run the full output-based receding-horizon loop.
///
/// Per window: solve the finite-horizon problem from the observer
/// estimate, pick the concatenation time from the predicted optimal
/// trajectory, apply the input while integrating the coupled
/// plant/observer pair (the plant is advanced from its hidden true
/// state and is read only through the sensor outputs), update the
/// violation counters and hand over. A non-converged window solve is
/// recorded and its control used anyway.
#[allow(clippy::too_many_arguments)]
pub fn run_orhc(
    config: &OrhcConfig,
    ops: &OperatorSet,
    rc: &RcAssembler,
    layout: &ActuatorSensorLayout,
    obs_cfg: &ObserverConfig,
    q: &PenaltyOperator,
    settings: &OcpSettings,
    dt: f64,
    y0_true: &[f64],
    yhat0: &[f64],
    strategy: SolverStrategy,
) -> Result<OrhcRunRecord> {
    settings.tol_policy.validate()?;
    let config = config.snapped(dt)?;
    let n = ops.n_dofs();
    if y0_true.len() != n || yhat0.len() != n {
        return Err(OrhcError::dim("run_orhc initial states", n, y0_true.len()));
    }

    // Hidden plant state: written only by the coupled integrator below.
    let mut plant_state = y0_true.to_vec();
    let mut estimate = yhat0.to_vec();
    let mut t_in = 0.0f64;

    let mut concat_times = vec![0.0];
    let mut theta = Vec::new();
    let mut windows: Vec<WindowRecord> = Vec::new();
    let mut history: Vec<NormSample> = Vec::new();
    let mut state_norms_at_tn = vec![ops.mass_norm(&plant_state)];
    let mut err0 = vec![0.0; n];
    for i in 0..n {
        err0[i] = estimate[i] - plant_state[i];
    }
    let mut error_norms_at_tn = vec![ops.mass_norm(&err0)];
    let mut control_energy = 0.0f64;
    let mut consecutive = 0usize;
    let mut max_consecutive = 0usize;
    let mut total_violations = 0usize;
    let mut total_ocp_iterations = 0usize;
    let mut stopped_reason = StopReason::ReachedTInfty;
    let mut prev_u: Option<ControlTrajectory> = None;

    while t_in < config.t_infty - 1e-12 {
        let yhat_norm = ops.mass_norm(&estimate);
        let tol = dynamic_tolerance(&settings.tol_policy, yhat_norm, config.t_rh);
        let u_init = if settings.warm_start {
            prev_u
                .as_ref()
                .map(|u| shift_warm_start(u, t_in, config.t_rh, dt))
                .transpose()?
        } else {
            None
        };
        let ocp = solve_ocp(
            ops,
            rc,
            layout,
            q,
            t_in,
            config.t_rh,
            dt,
            &estimate,
            tol,
            u_init,
            settings.max_iter,
            strategy,
            None,
        )?;
        total_ocp_iterations += ocp.iterations;

        let window_grid = ocp.y_star.grid;
        let idx = select_concatenation_index(&ocp.y_star.norms, &window_grid, config.tau, config.tn_rule)?;
        let t_next = window_grid.node(idx);
        let theta_n = squeeze_factor(ocp.y_star.norms[idx], ocp.y_star.norms[0]);
        let squeeze_ok = theta_n < 1.0;
        if !squeeze_ok {
            total_violations += 1;
            consecutive += 1;
            max_consecutive = max_consecutive.max(consecutive);
        } else {
            consecutive = 0;
        }

        // Advance the coupled plant/observer pair over the applied
        // segment with the computed input.
        let applied_grid = TimeGrid {
            t_start: t_in,
            dt,
            n_steps: idx,
        };
        let mut plant_integ = CnIntegrator::new(ops, rc, applied_grid, strategy)?;
        let mut obs_integ = CnIntegrator::new(ops, rc, applied_grid, strategy)?
            .with_observer(layout, obs_cfg);
        let u = &ocp.u_star;
        let control = |k: usize, _t: f64, out: &mut [f64]| {
            let um = u.midpoint_value(k);
            out.fill(0.0);
            for (col, &uj) in layout.actuator_loads.cols.iter().zip(&um) {
                crate::linalg::axpy(uj, col, out);
            }
        };
        let coupled = cn_coupled_plant_observer(
            &mut plant_integ,
            &mut obs_integ,
            layout,
            obs_cfg,
            &plant_state,
            &estimate,
            Some(control),
            StorePolicy::NormsOnly,
        )?;

        // Applied-control energy over [t_in, t_next].
        let mut e = 0.0;
        for k in 0..=idx {
            let w = if k == 0 || k == idx { 0.5 } else { 1.0 };
            e += w * crate::linalg::dot(&u.values[k], &u.values[k]);
        }
        control_energy += e * dt;

        // Nodal history of the applied segment (the first node repeats
        // the previous concatenation time with the new window's input).
        for k in 0..=idx {
            history.push(NormSample {
                t: applied_grid.node(k),
                norm_y: coupled.plant.norms[k],
                norm_err: coupled.error_norms[k],
                norm_u: crate::linalg::norm2(&u.values[k]),
                is_concat: k == 0 || k == idx,
                squeeze_ok,
            });
        }

        windows.push(WindowRecord {
            t_start: t_in,
            t_end: t_next,
            theta: theta_n,
            squeeze_ok,
            ocp_iterations: ocp.iterations,
            ocp_converged: ocp.converged,
            tol,
            cost: ocp.cost,
        });
        theta.push(theta_n);
        concat_times.push(t_next);

        plant_state = coupled.plant.final_state().to_vec();
        estimate = coupled.observer.final_state().to_vec();
        state_norms_at_tn.push(ops.mass_norm(&plant_state));
        error_norms_at_tn.push(*coupled.error_norms.last().expect("nonempty"));
        prev_u = Some(ocp.u_star);
        t_in = t_next;

        if consecutive >= config.consecutive_limit || total_violations >= config.total_limit {
            stopped_reason = StopReason::SqueezeStop;
            break;
        }
    }

    Ok(OrhcRunRecord {
        config,
        concat_times,
        theta,
        sqz_violations_total: total_violations,
        max_consecutive_violations: max_consecutive,
        windows,
        norm_history: history,
        state_norms_at_tn,
        error_norms_at_tn,
        control_energy,
        stopped_reason,
        total_ocp_iterations,
    })
}

/// Squeezing factor with the degenerate zero cases pinned: a window
/// starting from an exactly zero estimate counts as squeezed when it
/// stays zero and as a violation otherwise.
fn squeeze_factor(norm_end: f64, norm_start: f64) -> f64 {
    if norm_start == 0.0 {
        if norm_end == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        norm_end / norm_start
    }
}

/// Previous window's input shifted onto the new window: overlapping
/// grid nodes copy the old values, the uncovered tail stays zero.
fn shift_warm_start(
    prev: &ControlTrajectory,
    t_in: f64,
    t_rh: f64,
    dt: f64,
) -> Result<ControlTrajectory> {
    let grid = TimeGrid::span(t_in, t_in + t_rh, dt)?;
    let m = prev.n_inputs();
    let mut u = ControlTrajectory::zeros(grid, m);
    let offset = ((t_in - prev.grid.t_start) / dt).round() as usize;
    for k in 0..=grid.n_steps {
        if let Some(v) = prev.values.get(offset + k) {
            u.values[k].copy_from_slice(v);
        }
    }
    Ok(u)
}
