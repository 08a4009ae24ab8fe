//! Crank-Nicolson integration of the forward state, the backward
//! adjoint and the coupled plant-observer system.
//!
//! Each step solves
//! `(M/dt + (K_A + C(t_mid))/2) y_next = (M/dt - (K_A + C(t_mid))/2) y + f(t_mid)`
//! with the reaction-convection matrix `C` assembled at the midpoint
//! time. The per-step systems differ only by the slow drift of `C`, so
//! the default solver factorizes an anchor matrix once per short time
//! block and polishes each step with a preconditioned residual
//! iteration driven to near machine precision (1e-13 relative); a
//! direct per-step factorization is available as an alternative
//! strategy and as the safety fallback.

use crate::error::OrhcError;
use crate::fem::{OperatorSet, RcAssembler};
use crate::layout::{ActuatorSensorLayout, ObserverConfig};
use crate::linalg::{BandLu, BandMatrix, ColumnMatrix, CsrMatrix, SmallLu};
use crate::Result;

/// Relative residual target of the per-step linear solves.
const STEP_SOLVE_TOL: f64 = 1e-13;
/// Residual-iteration budget before falling back to a direct solve.
const MAX_REFINE_ITERS: usize = 60;
/// Rough memory budget for cached anchor factorizations.
const ANCHOR_CACHE_BYTES: usize = 256 << 20;

/// Uniform time grid `t_start + k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Grid over `[t_start, t_end]`; the span must be an integer number
    /// of steps within 1e-9 relative.
    pub fn span(t_start: f64, t_end: f64, dt: f64) -> Result<TimeGrid> {
        if !(dt > 0.0) {
            return Err(OrhcError::Config(format!("dt must be positive, got {dt}")));
        }
        let span = t_end - t_start;
        if span <= 0.0 {
            return Err(OrhcError::Config(format!(
                "empty time span [{t_start}, {t_end}]"
            )));
        }
        let steps = (span / dt).round();
        if (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(OrhcError::Config(format!(
                "span {span} is not a multiple of dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            t_start,
            dt,
            n_steps: steps as usize,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.node(self.n_steps)
    }

    /// Midpoint time of step `k` (between nodes `k` and `k+1`).
    pub fn midpoint(&self, k: usize) -> f64 {
        self.t_start + (k as f64 + 0.5) * self.dt
    }

    /// Number of whole steps closest to `span`; errors if `span` is not
    /// grid-aligned.
    pub fn steps_in(&self, span: f64) -> Result<usize> {
        let steps = (span / self.dt).round();
        if (steps * self.dt - span).abs() > 1e-9 * span.abs().max(1.0) {
            return Err(OrhcError::Config(format!(
                "span {span} is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Which per-node data a trajectory keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorePolicy {
    /// Every nodal coefficient vector.
    Full,
    /// Norms only (states dropped except the final one).
    NormsOnly,
}

/// Time-sampled trajectory of FEM coefficient vectors with mass-norm
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    /// Mass norms at every node.
    pub norms: Vec<f64>,
    /// Stored states (policy-dependent); the final node is always kept.
    pub states: Vec<Option<Vec<f64>>>,
}

impl StateTrajectory {
    pub fn state(&self, k: usize) -> Option<&[f64]> {
        self.states.get(k).and_then(|s| s.as_deref())
    }

    pub fn final_state(&self) -> &[f64] {
        self.states[self.grid.n_steps]
            .as_deref()
            .expect("final state is always stored")
    }
}

/// Per-step linear solver strategy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverStrategy {
    /// Factor the exact step matrix every step.
    Direct,
    /// Factor an anchor matrix once per `interval` time units and
    /// iterate each step's residual down to `1e-13` relative.
    Anchored { interval: f64 },
}

impl Default for SolverStrategy {
    fn default() -> Self {
        SolverStrategy::Anchored { interval: 0.05 }
    }
}

/// Shared per-grid machinery: constant matrix parts, scatter maps and
/// anchor factorizations for plant-type and observer-type systems.
pub struct CnIntegrator<'a> {
    ops: &'a OperatorSet,
    rc: &'a RcAssembler<'a>,
    pub grid: TimeGrid,
    strategy: SolverStrategy,
    /// M/dt + K_A/2 values (shared pattern with the rc assembly).
    f_const: CsrMatrix,
    /// M/dt - K_A/2 values.
    d_const: CsrMatrix,
    bw: usize,
    /// csr nnz position -> band data position
    band_scatter: Vec<usize>,
    anchor_steps: usize,
    anchors: Vec<Option<AnchorFactors>>,
    /// lru order of anchor block indices
    anchor_lru: Vec<usize>,
    anchor_cap: usize,
    /// Observer extension: `lambda/2 * G` rank-S term.
    observer: Option<ObserverExtension<'a>>,
    /// Scratch buffers.
    c_vals: Vec<f64>,
    fused_f: CsrMatrix,
    fused_d: CsrMatrix,
    work: Vec<f64>,
    work2: Vec<f64>,
    /// Count of steps where the residual iteration hit its budget and a
    /// direct factorization was used instead.
    pub fallback_count: usize,
}

struct ObserverExtension<'a> {
    layout: &'a ActuatorSensorLayout,
    half_lambda: f64,
}

struct AnchorFactors {
    lu: BandLu,
    /// Woodbury data for the observer system `(F + lam/2 G)`:
    /// `F^{-1} U` columns and the capacitance LU, with
    /// `U = lam/2 B_s [V_S]^{-1}` and `G = B_s [V_S]^{-1} B_s^T`.
    obs: Option<(ColumnMatrix, SmallLu)>,
}

impl<'a> CnIntegrator<'a> {
    pub fn new(
        ops: &'a OperatorSet,
        rc: &'a RcAssembler<'a>,
        grid: TimeGrid,
        strategy: SolverStrategy,
    ) -> Result<Self> {
        let pattern = rc.pattern().clone();
        let inv_dt = 1.0 / grid.dt;
        let mut f_const = ops.mass.scaled(inv_dt);
        f_const.add_scaled(0.5, &ops.stiffness_a);
        let mut d_const = ops.mass.scaled(inv_dt);
        d_const.add_scaled(-0.5, &ops.stiffness_a);
        let bw = pattern.bandwidth();
        let n = ops.n_dofs();
        // csr -> band scatter
        let mut band_scatter = Vec::with_capacity(pattern.nnz());
        {
            let w = 2 * bw + 1;
            for i in 0..n {
                for &j in pattern.row_cols(i) {
                    band_scatter.push(i * w + (j + bw - i));
                }
            }
        }
        let anchor_steps = match strategy {
            SolverStrategy::Direct => 1,
            SolverStrategy::Anchored { interval } => {
                if !(interval > 0.0) {
                    return Err(OrhcError::Config(
                        "anchor interval must be positive".into(),
                    ));
                }
                ((interval / grid.dt).round() as usize).max(1)
            }
        };
        let n_anchors = grid.n_steps.div_ceil(anchor_steps).max(1);
        let lu_bytes = n * (2 * bw + 1) * 8;
        let anchor_cap = (ANCHOR_CACHE_BYTES / lu_bytes.max(1)).clamp(2, n_anchors.max(2));
        let fused_f = CsrMatrix::zeros(pattern.clone());
        let fused_d = CsrMatrix::zeros(pattern.clone());
        let mut anchors = Vec::new();
        anchors.resize_with(n_anchors, || None);
        Ok(Self {
            ops,
            rc,
            grid,
            strategy,
            f_const,
            d_const,
            bw,
            band_scatter,
            anchor_steps,
            anchors,
            anchor_lru: Vec::new(),
            anchor_cap,
            observer: None,
            c_vals: vec![0.0; pattern.nnz()],
            fused_f,
            fused_d,
            work: vec![0.0; n],
            work2: vec![0.0; n],
            fallback_count: 0,
        })
    }

    /// Attach the observer rank-S term `lambda/2 * G`; anchors already
    /// built are invalidated.
    pub fn with_observer(
        mut self,
        layout: &'a ActuatorSensorLayout,
        cfg: &ObserverConfig,
    ) -> Self {
        self.observer = Some(ObserverExtension {
            layout,
            half_lambda: 0.5 * cfg.lambda,
        });
        for a in self.anchors.iter_mut() {
            *a = None;
        }
        self.anchor_lru.clear();
        self
    }

    pub fn n_dofs(&self) -> usize {
        self.work.len()
    }

    fn anchor_time(&self, block: usize) -> f64 {
        // central step midpoint of the block, clamped to the grid
        let first = block * self.anchor_steps;
        let last = ((block + 1) * self.anchor_steps).min(self.grid.n_steps.max(1)) - 1;
        let mid = (first + last) / 2;
        self.grid.midpoint(mid)
    }

    /// Build (or fetch) the anchor factors for a step.
    fn anchor_for_step(&mut self, step: usize) -> Result<usize> {
        let block = step / self.anchor_steps;
        if self.anchors[block].is_none() {
            let t_anchor = self.anchor_time(block);
            let factors = self.build_factors_at(t_anchor)?;
            // evict least-recently-used blocks beyond the budget
            while self.anchor_lru.len() + 1 > self.anchor_cap {
                let evict = self.anchor_lru.remove(0);
                self.anchors[evict] = None;
            }
            self.anchors[block] = Some(factors);
            self.anchor_lru.push(block);
        } else {
            // refresh lru position
            if let Some(pos) = self.anchor_lru.iter().position(|&b| b == block) {
                let b = self.anchor_lru.remove(pos);
                self.anchor_lru.push(b);
            }
        }
        Ok(block)
    }

    /// Factor `F(t) [+ lam/2 G]` at an arbitrary time.
    fn build_factors_at(&mut self, t: f64) -> Result<AnchorFactors> {
        self.rc.assemble_into(t, &mut self.c_vals);
        let n = self.n_dofs();
        let mut band = BandMatrix::zeros(n, self.bw, self.bw);
        {
            let data = band_data_mut(&mut band);
            for (p, &pos) in self.band_scatter.iter().enumerate() {
                data[pos] = self.f_const.values()[p] + 0.5 * self.c_vals[p];
            }
        }
        let lu = band
            .factor()
            .map_err(|e| OrhcError::Numerical(format!("anchor factorization: {e}")))?;
        let obs = if let Some(ext) = &self.observer {
            // Woodbury blocks for F + hl*G, G = L S^T with
            // L = B_s V^{-1}: U = hl * L, V^T = B_s^T.
            let layout = ext.layout;
            let s = layout.n_sensors();
            let mut u = layout.injection_left_factor();
            for col in u.cols.iter_mut() {
                for v in col.iter_mut() {
                    *v *= ext.half_lambda;
                }
                lu.solve(col); // now F^{-1} U
            }
            // capacitance I + B_s^T (F^{-1} U)
            let mut cap = vec![0.0; s * s];
            for (j, col) in u.cols.iter().enumerate() {
                let mut btcol = vec![0.0; s];
                layout.sensor_loads.transpose_apply(col, &mut btcol);
                for i in 0..s {
                    cap[i * s + j] = btcol[i] + if i == j { 1.0 } else { 0.0 };
                }
            }
            let cap_lu = SmallLu::factor(s, &cap)?;
            Some((u, cap_lu))
        } else {
            None
        };
        Ok(AnchorFactors { lu, obs })
    }

    /// Apply `(F + hl G)^{-1}`-preconditioner of the anchor: Woodbury
    /// around the banded LU.
    fn precond_solve(&self, factors: &AnchorFactors, x: &mut [f64]) {
        factors.lu.solve(x);
        if let (Some((u_cols, cap_lu)), Some(ext)) = (&factors.obs, &self.observer) {
            let s = u_cols.n_cols();
            let mut bt = vec![0.0; s];
            ext.layout.sensor_loads.transpose_apply(x, &mut bt);
            let coeffs = cap_lu.solve_vec(&bt);
            for (col, &c) in u_cols.cols.iter().zip(&coeffs) {
                crate::linalg::axpy(-c, col, x);
            }
        }
    }

    fn precond_solve_transpose(&self, factors: &AnchorFactors, x: &mut [f64]) {
        debug_assert!(
            self.observer.is_none(),
            "transpose solves are only used for plant-type systems"
        );
        factors.lu.solve_transpose(x);
    }

    /// Assemble the step matrices at the midpoint of `step` into the
    /// fused buffers.
    fn fuse_step_matrices(&mut self, step: usize) {
        let t_mid = self.grid.midpoint(step);
        self.rc.assemble_into(t_mid, &mut self.c_vals);
        let fv = self.fused_f.values_mut();
        for (p, &c) in self.c_vals.iter().enumerate() {
            fv[p] = self.f_const.values()[p] + 0.5 * c;
        }
        let dv = self.fused_d.values_mut();
        for (p, &c) in self.c_vals.iter().enumerate() {
            dv[p] = self.d_const.values()[p] - 0.5 * c;
        }
    }

    /// y = fused_F x (+ hl G x when the observer term is attached and
    /// `with_g` is set).
    fn apply_f(&self, x: &[f64], y: &mut [f64], transpose: bool, with_g: bool) {
        if transpose {
            self.fused_f.matvec_transpose(x, y);
        } else {
            self.fused_f.matvec(x, y);
        }
        if with_g {
            if let Some(ext) = &self.observer {
                ext.layout.injection_matvec_add(ext.half_lambda, x, y);
            }
        }
    }

    /// Solve the current fused system `F x = rhs` (plant: `with_g =
    /// false`; observer row: `with_g = true`). A predictor `guess`
    /// shortens the residual iteration when the solution varies slowly.
    #[allow(clippy::too_many_arguments)]
    fn solve_step(
        &mut self,
        step: usize,
        rhs: &[f64],
        x: &mut [f64],
        transpose: bool,
        with_g: bool,
        guess: Option<&[f64]>,
    ) -> Result<()> {
        match self.strategy {
            SolverStrategy::Direct => self.solve_direct(rhs, x, transpose, with_g, step),
            SolverStrategy::Anchored { .. } => {
                let block = self.anchor_for_step(step)?;
                let rhs_norm = crate::linalg::norm2(rhs).max(f64::MIN_POSITIVE);
                // take the anchor out to appease the borrow checker
                let factors = self.anchors[block].take().expect("anchor built above");
                if let Some(g) = guess {
                    x.copy_from_slice(g);
                } else {
                    x.copy_from_slice(rhs);
                    if transpose {
                        self.precond_solve_transpose(&factors, x);
                    } else {
                        self.precond_solve(&factors, x);
                    }
                }
                // Residual polish without per-iteration allocation.
                let mut ok = false;
                let mut r = std::mem::take(&mut self.work);
                let mut dx = std::mem::take(&mut self.work2);
                for _ in 0..MAX_REFINE_ITERS {
                    self.apply_f(x, &mut r, transpose, with_g);
                    for (ri, &bi) in r.iter_mut().zip(rhs) {
                        *ri = bi - *ri;
                    }
                    let rn = crate::linalg::norm2(&r);
                    if rn <= STEP_SOLVE_TOL * rhs_norm {
                        ok = true;
                        break;
                    }
                    dx.copy_from_slice(&r);
                    if transpose {
                        self.precond_solve_transpose(&factors, &mut dx);
                    } else {
                        self.precond_solve(&factors, &mut dx);
                    }
                    crate::linalg::axpy(1.0, &dx, x);
                }
                self.work = r;
                self.work2 = dx;
                self.anchors[block] = Some(factors);
                if !ok {
                    self.fallback_count += 1;
                    return self.solve_direct(rhs, x, transpose, with_g, step);
                }
                Ok(())
            }
        }
    }

    /// Direct factorization of the exact step matrix (the fused buffers
    /// must already hold the step values).
    fn solve_direct(
        &mut self,
        rhs: &[f64],
        x: &mut [f64],
        transpose: bool,
        with_g: bool,
        step: usize,
    ) -> Result<()> {
        let n = self.n_dofs();
        let mut band = BandMatrix::zeros(n, self.bw, self.bw);
        {
            let data = band_data_mut(&mut band);
            for (p, &pos) in self.band_scatter.iter().enumerate() {
                data[pos] = self.fused_f.values()[p];
            }
        }
        let lu = band.factor().map_err(|e| OrhcError::StepSolve {
            step,
            time: self.grid.midpoint(step),
            reason: e.to_string(),
        })?;
        if !with_g {
            x.copy_from_slice(rhs);
            if transpose {
                lu.solve_transpose(x);
            } else {
                lu.solve(x);
            }
            return Ok(());
        }
        // Observer row: Woodbury around the exact step factorization.
        let ext = self.observer.as_ref().expect("with_g requires observer");
        let layout = ext.layout;
        let s = layout.n_sensors();
        let mut u = layout.injection_left_factor();
        for col in u.cols.iter_mut() {
            for v in col.iter_mut() {
                *v *= ext.half_lambda;
            }
            lu.solve(col);
        }
        let mut cap = vec![0.0; s * s];
        for (j, col) in u.cols.iter().enumerate() {
            let mut btcol = vec![0.0; s];
            layout.sensor_loads.transpose_apply(col, &mut btcol);
            for i in 0..s {
                cap[i * s + j] = btcol[i] + if i == j { 1.0 } else { 0.0 };
            }
        }
        let cap_lu = SmallLu::factor(s, &cap)?;
        x.copy_from_slice(rhs);
        lu.solve(x);
        let mut bt = vec![0.0; s];
        layout.sensor_loads.transpose_apply(x, &mut bt);
        let coeffs = cap_lu.solve_vec(&bt);
        for (col, &c) in u.cols.iter().zip(&coeffs) {
            crate::linalg::axpy(-c, col, x);
        }
        Ok(())
    }
}

fn band_data_mut(band: &mut BandMatrix) -> &mut [f64] {
    // BandMatrix keeps its storage private; expose through zero/set by
    // rebuilding would be wasteful, so provide a crate-level accessor.
    band.data_mut()
}

// --- public integration drivers -------------------------------------------

/// Crank-Nicolson forward integration. `forcing(step, t_mid, out)` must
/// write the midpoint load of the step into `out` (overwriting it).
pub fn cn_forward<F>(
    integ: &mut CnIntegrator,
    y0: &[f64],
    mut forcing: Option<F>,
    store: StorePolicy,
) -> Result<StateTrajectory>
where
    F: FnMut(usize, f64, &mut [f64]),
{
    let n = integ.n_dofs();
    if y0.len() != n {
        return Err(OrhcError::dim("cn_forward initial state", n, y0.len()));
    }
    let grid = integ.grid;
    let mut norms = Vec::with_capacity(grid.n_nodes());
    let mut states: Vec<Option<Vec<f64>>> = Vec::with_capacity(grid.n_nodes());
    let mut y = y0.to_vec();
    let mut y_prev = vec![0.0; n];
    let mut guess = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut y_next = vec![0.0; n];
    norms.push(integ.ops.mass_norm(&y));
    states.push(match store {
        StorePolicy::Full => Some(y.clone()),
        StorePolicy::NormsOnly => None,
    });
    for k in 0..grid.n_steps {
        integ.fuse_step_matrices(k);
        integ.fused_d.matvec(&y, &mut rhs);
        if let Some(f) = forcing.as_mut() {
            f(k, grid.midpoint(k), &mut load);
            crate::linalg::axpy(1.0, &load, &mut rhs);
        }
        let predictor = if k > 0 {
            for i in 0..n {
                guess[i] = 2.0 * y[i] - y_prev[i];
            }
            Some(guess.as_slice())
        } else {
            None
        };
        integ.solve_step(k, &rhs, &mut y_next, false, false, predictor)?;
        y_prev.copy_from_slice(&y);
        std::mem::swap(&mut y, &mut y_next);
        norms.push(integ.ops.mass_norm(&y));
        let keep_state = matches!(store, StorePolicy::Full) || k + 1 == grid.n_steps;
        states.push(if keep_state { Some(y.clone()) } else { None });
    }
    Ok(StateTrajectory {
        grid,
        norms,
        states,
    })
}

/// Crank-Nicolson integration of the adjoint system backward in time
/// with the transposed reaction-convection matrix:
/// `(M/dt + A(t_mid)^T/2) p_k = (M/dt - A(t_mid)^T/2) p_{k+1} + source`.
/// `source(step, t_mid, out)` writes the step's midpoint load.
pub fn cn_backward_adjoint<F>(
    integ: &mut CnIntegrator,
    terminal: &[f64],
    mut source: Option<F>,
    store: StorePolicy,
) -> Result<StateTrajectory>
where
    F: FnMut(usize, f64, &mut [f64]),
{
    let n = integ.n_dofs();
    if terminal.len() != n {
        return Err(OrhcError::dim("cn_backward terminal state", n, terminal.len()));
    }
    let grid = integ.grid;
    let mut norms = vec![0.0; grid.n_nodes()];
    let mut states: Vec<Option<Vec<f64>>> = vec![None; grid.n_nodes()];
    let mut p = terminal.to_vec();
    norms[grid.n_steps] = integ.ops.mass_norm(&p);
    states[grid.n_steps] = Some(p.clone());
    let mut rhs = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut p_prev = vec![0.0; n];
    let mut p_later = vec![0.0; n];
    let mut guess = vec![0.0; n];
    for k in (0..grid.n_steps).rev() {
        integ.fuse_step_matrices(k);
        integ.fused_d.matvec_transpose(&p, &mut rhs);
        if let Some(f) = source.as_mut() {
            f(k, grid.midpoint(k), &mut load);
            crate::linalg::axpy(1.0, &load, &mut rhs);
        }
        let predictor = if k + 1 < grid.n_steps {
            for i in 0..n {
                guess[i] = 2.0 * p[i] - p_later[i];
            }
            Some(guess.as_slice())
        } else {
            None
        };
        integ.solve_step(k, &rhs, &mut p_prev, true, false, predictor)?;
        p_later.copy_from_slice(&p);
        std::mem::swap(&mut p, &mut p_prev);
        norms[k] = integ.ops.mass_norm(&p);
        let keep_state = matches!(store, StorePolicy::Full) || k == 0;
        states[k] = if keep_state { Some(p.clone()) } else { None };
    }
    Ok(StateTrajectory {
        grid,
        norms,
        states,
    })
}

/// Result of a coupled plant-observer integration.
pub struct CoupledTrajectories {
    pub plant: StateTrajectory,
    pub observer: StateTrajectory,
    /// Mass norms of the estimation error at every node.
    pub error_norms: Vec<f64>,
}

/// Advance the block-coupled plant/observer system. The monolithic CN
/// step is lower block-triangular (the plant row does not see the
/// observer), so it is solved exactly by a plant solve followed by an
/// observer solve whose rank-S injection term is handled by a Woodbury
/// correction of the same banded factorization.
///
/// `control(step, t_mid, out)` writes the actuation load at the step
/// midpoint (shared by plant and observer).
pub fn cn_coupled_plant_observer<F>(
    plant_integ: &mut CnIntegrator,
    obs_integ: &mut CnIntegrator,
    layout: &ActuatorSensorLayout,
    cfg: &ObserverConfig,
    y0: &[f64],
    yhat0: &[f64],
    mut control: Option<F>,
    store: StorePolicy,
) -> Result<CoupledTrajectories>
where
    F: FnMut(usize, f64, &mut [f64]),
{
    let n = plant_integ.n_dofs();
    if y0.len() != n || yhat0.len() != n {
        return Err(OrhcError::dim(
            "cn_coupled initial states",
            n,
            y0.len().min(yhat0.len()),
        ));
    }
    let grid = plant_integ.grid;
    debug_assert_eq!(grid, obs_integ.grid);
    let half_lambda = 0.5 * cfg.lambda;
    let mut y = y0.to_vec();
    let mut yhat = yhat0.to_vec();
    let mut plant_norms = Vec::with_capacity(grid.n_nodes());
    let mut obs_norms = Vec::with_capacity(grid.n_nodes());
    let mut err_norms = Vec::with_capacity(grid.n_nodes());
    let mut plant_states: Vec<Option<Vec<f64>>> = Vec::with_capacity(grid.n_nodes());
    let mut obs_states: Vec<Option<Vec<f64>>> = Vec::with_capacity(grid.n_nodes());
    let mut err = vec![0.0; n];
    let record = |y: &Vec<f64>,
                  yhat: &Vec<f64>,
                  err: &mut Vec<f64>,
                  plant_norms: &mut Vec<f64>,
                  obs_norms: &mut Vec<f64>,
                  err_norms: &mut Vec<f64>,
                  ops: &OperatorSet| {
        plant_norms.push(ops.mass_norm(y));
        obs_norms.push(ops.mass_norm(yhat));
        for i in 0..err.len() {
            err[i] = yhat[i] - y[i];
        }
        err_norms.push(ops.mass_norm(err));
    };
    record(
        &y,
        &yhat,
        &mut err,
        &mut plant_norms,
        &mut obs_norms,
        &mut err_norms,
        plant_integ.ops,
    );
    let keep = |k: usize| matches!(store, StorePolicy::Full) || k == grid.n_steps;
    plant_states.push(if keep(0) || grid.n_steps == 0 {
        Some(y.clone())
    } else {
        None
    });
    obs_states.push(if keep(0) || grid.n_steps == 0 {
        Some(yhat.clone())
    } else {
        None
    });

    let mut rhs = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut y_next = vec![0.0; n];
    let mut yhat_next = vec![0.0; n];
    let mut y_prev = vec![0.0; n];
    let mut yhat_prev = vec![0.0; n];
    let mut guess = vec![0.0; n];
    for k in 0..grid.n_steps {
        let t_mid = grid.midpoint(k);
        if let Some(f) = control.as_mut() {
            f(k, t_mid, &mut load);
        } else {
            load.fill(0.0);
        }
        // plant row
        plant_integ.fuse_step_matrices(k);
        plant_integ.fused_d.matvec(&y, &mut rhs);
        crate::linalg::axpy(1.0, &load, &mut rhs);
        let predictor = if k > 0 {
            for i in 0..n {
                guess[i] = 2.0 * y[i] - y_prev[i];
            }
            Some(guess.as_slice())
        } else {
            None
        };
        plant_integ.solve_step(k, &rhs, &mut y_next, false, false, predictor)?;
        // observer row: (F + hl G) yhat+ = (D - hl G) yhat- + B u + hl G (y+ + y-)
        obs_integ.fuse_step_matrices(k);
        obs_integ.fused_d.matvec(&yhat, &mut rhs);
        layout.injection_matvec_add(-half_lambda, &yhat, &mut rhs);
        crate::linalg::axpy(1.0, &load, &mut rhs);
        for i in 0..n {
            // reuse `load` as scratch for y+ + y-
            load[i] = y_next[i] + y[i];
        }
        layout.injection_matvec_add(half_lambda, &load, &mut rhs);
        let predictor = if k > 0 {
            for i in 0..n {
                guess[i] = 2.0 * yhat[i] - yhat_prev[i];
            }
            Some(guess.as_slice())
        } else {
            None
        };
        obs_integ.solve_step(k, &rhs, &mut yhat_next, false, true, predictor)?;

        y_prev.copy_from_slice(&y);
        yhat_prev.copy_from_slice(&yhat);
        std::mem::swap(&mut y, &mut y_next);
        std::mem::swap(&mut yhat, &mut yhat_next);
        record(
            &y,
            &yhat,
            &mut err,
            &mut plant_norms,
            &mut obs_norms,
            &mut err_norms,
            plant_integ.ops,
        );
        plant_states.push(if keep(k + 1) { Some(y.clone()) } else { None });
        obs_states.push(if keep(k + 1) { Some(yhat.clone()) } else { None });
    }
    Ok(CoupledTrajectories {
        plant: StateTrajectory {
            grid,
            norms: plant_norms,
            states: plant_states,
        },
        observer: StateTrajectory {
            grid,
            norms: obs_norms,
            states: obs_states,
        },
        error_norms: err_norms,
    })
}

/// Standalone integration of the estimation-error equation
/// `dz/dt + A z + A_rc z + lambda P z = 0` (the separation-principle
/// oracle and the pure observer study).
pub fn cn_error_equation(
    obs_integ: &mut CnIntegrator,
    layout: &ActuatorSensorLayout,
    cfg: &ObserverConfig,
    z0: &[f64],
    store: StorePolicy,
) -> Result<StateTrajectory> {
    let n = obs_integ.n_dofs();
    if z0.len() != n {
        return Err(OrhcError::dim("cn_error_equation", n, z0.len()));
    }
    let grid = obs_integ.grid;
    let half_lambda = 0.5 * cfg.lambda;
    let mut z = z0.to_vec();
    let mut norms = Vec::with_capacity(grid.n_nodes());
    let mut states: Vec<Option<Vec<f64>>> = Vec::with_capacity(grid.n_nodes());
    norms.push(obs_integ.ops.mass_norm(&z));
    states.push(match store {
        StorePolicy::Full => Some(z.clone()),
        StorePolicy::NormsOnly => None,
    });
    let mut rhs = vec![0.0; n];
    let mut z_next = vec![0.0; n];
    let mut z_prev = vec![0.0; n];
    let mut guess = vec![0.0; n];
    for k in 0..grid.n_steps {
        obs_integ.fuse_step_matrices(k);
        obs_integ.fused_d.matvec(&z, &mut rhs);
        layout.injection_matvec_add(-half_lambda, &z, &mut rhs);
        let predictor = if k > 0 {
            for i in 0..n {
                guess[i] = 2.0 * z[i] - z_prev[i];
            }
            Some(guess.as_slice())
        } else {
            None
        };
        obs_integ.solve_step(k, &rhs, &mut z_next, false, true, predictor)?;
        z_prev.copy_from_slice(&z);
        std::mem::swap(&mut z, &mut z_next);
        norms.push(obs_integ.ops.mass_norm(&z));
        let keep_state = matches!(store, StorePolicy::Full) || k + 1 == grid.n_steps;
        states.push(if keep_state { Some(z.clone()) } else { None });
    }
    Ok(StateTrajectory {
        grid,
        norms,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{
        assemble_static, BoundaryCondition, ConstantCoefficients, Mesh, OscillatingCoefficients,
    };
    use crate::layout::build_layout;
    use crate::linalg::SplitMix64;

    fn heat_setup() -> (Mesh, OperatorSet) {
        let mesh = Mesh::build(16, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        (mesh, ops)
    }

    type NoForcing = fn(usize, f64, &mut [f64]);

    #[test]
    fn zero_state_stays_zero() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 0.1, 2e-3).unwrap();
        let mut integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let y0 = vec![0.0; ops.n_dofs()];
        let traj = cn_forward(&mut integ, &y0, None::<NoForcing>, StorePolicy::Full).unwrap();
        assert!(traj.norms.iter().all(|&n| n == 0.0));
        assert!(traj.final_state().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contractive_dynamics_decay_monotonically() {
        // a = 1, b = 0: the generator is A = -0.1 Lap + 1 >= 1, so the
        // norm decays at least like e^{-t} (with CN slack).
        let (mesh, ops) = heat_setup();
        let coeffs = ConstantCoefficients { a: 1.0, b: [0.0, 0.0] };
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let dt = 1e-3;
        let grid = TimeGrid::span(0.0, 1.0, dt).unwrap();
        let mut integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let mut rng = SplitMix64::new(77);
        let mut y0 = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y0);
        let traj =
            cn_forward(&mut integ, &y0, None::<NoForcing>, StorePolicy::NormsOnly).unwrap();
        for w in traj.norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "norm not monotone");
        }
        let bound = (-1.0f64).exp() * traj.norms[0] * (1.0 + 2.0 * dt);
        assert!(traj.norms[grid.n_steps] <= bound);
    }

    #[test]
    fn forward_integration_is_linear() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 0.05, 1e-3).unwrap();
        let n = ops.n_dofs();
        let mut rng = SplitMix64::new(3);
        let mut y0 = vec![0.0; n];
        let mut z0 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        rng.fill_symmetric(&mut y0);
        rng.fill_symmetric(&mut z0);
        rng.fill_symmetric(&mut f1);
        rng.fill_symmetric(&mut f2);
        let (alpha, beta) = (1.7, -0.6);
        let run = |ic: &[f64], load: &[f64]| {
            let mut integ =
                CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
            let forcing = |_k: usize, _t: f64, out: &mut [f64]| out.copy_from_slice(load);
            cn_forward(&mut integ, ic, Some(forcing), StorePolicy::Full).unwrap()
        };
        let a = run(&y0, &f1);
        let b = run(&z0, &f2);
        let combo_ic: Vec<f64> = y0.iter().zip(&z0).map(|(u, v)| alpha * u + beta * v).collect();
        let combo_load: Vec<f64> = f1.iter().zip(&f2).map(|(u, v)| alpha * u + beta * v).collect();
        let c = run(&combo_ic, &combo_load);
        let af = a.final_state();
        let bf = b.final_state();
        let cf = c.final_state();
        let scale = ops.mass_norm(cf).max(1e-30);
        let mut diff = vec![0.0; n];
        for i in 0..n {
            diff[i] = cf[i] - (alpha * af[i] + beta * bf[i]);
        }
        assert!(ops.mass_norm(&diff) <= 1e-10 * scale);
    }

    #[test]
    fn anchored_and_direct_strategies_agree() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 0.2, 2e-3).unwrap();
        let mut rng = SplitMix64::new(41);
        let mut y0 = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y0);
        let mut run = |strategy: SolverStrategy| {
            let mut integ = CnIntegrator::new(&ops, &rc, grid, strategy).unwrap();
            let traj =
                cn_forward(&mut integ, &y0, None::<NoForcing>, StorePolicy::NormsOnly).unwrap();
            assert_eq!(integ.fallback_count, 0);
            traj
        };
        let a = run(SolverStrategy::Anchored { interval: 0.05 });
        let d = run(SolverStrategy::Direct);
        let af = a.final_state();
        let df = d.final_state();
        let scale = ops.mass_norm(df).max(1e-30);
        let mut diff = vec![0.0; ops.n_dofs()];
        for i in 0..ops.n_dofs() {
            diff[i] = af[i] - df[i];
        }
        assert!(
            ops.mass_norm(&diff) <= 1e-11 * scale,
            "strategies diverged: {}",
            ops.mass_norm(&diff) / scale
        );
    }

    #[test]
    fn backward_mirrors_forward_when_self_adjoint() {
        // a = 1, b = 0 makes the generator symmetric; the homogeneous
        // adjoint march visits the forward trajectory in reverse.
        let (mesh, ops) = heat_setup();
        let coeffs = ConstantCoefficients { a: 1.0, b: [0.0, 0.0] };
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 0.1, 2e-3).unwrap();
        let mut rng = SplitMix64::new(15);
        let mut y0 = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y0);
        let mut integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let fwd = cn_forward(&mut integ, &y0, None::<NoForcing>, StorePolicy::Full).unwrap();
        let bwd =
            cn_backward_adjoint(&mut integ, &y0, None::<NoForcing>, StorePolicy::Full).unwrap();
        for k in 0..=grid.n_steps {
            let yk = fwd.state(k).unwrap();
            let pk = bwd.state(grid.n_steps - k).unwrap();
            let mut diff = vec![0.0; ops.n_dofs()];
            for i in 0..ops.n_dofs() {
                diff[i] = yk[i] - pk[i];
            }
            assert!(ops.mass_norm(&diff) <= 1e-10 * fwd.norms[k].max(1e-30));
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let grid = TimeGrid::span(0.0, 0.05, 1e-3).unwrap();
        let mut integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let zero = vec![0.0; ops.n_dofs()];
        let traj =
            cn_backward_adjoint(&mut integ, &zero, None::<NoForcing>, StorePolicy::Full).unwrap();
        assert!(traj.norms.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn coupled_with_equal_initial_states_tracks_plant() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        let layout = build_layout(1, 0.5, &mesh, &ops).unwrap();
        let cfg = ObserverConfig::new(100.0).unwrap();
        let grid = TimeGrid::span(0.0, 0.2, 2e-3).unwrap();
        let mut rng = SplitMix64::new(62);
        let mut y0 = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y0);
        let mut plant_integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let mut obs_integ = CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default())
            .unwrap()
            .with_observer(&layout, &cfg);
        // some nonzero control load
        let loads = layout.apply_control(&[1.0, -1.0]).unwrap();
        let control =
            |_k: usize, t: f64, out: &mut [f64]| {
                for (o, l) in out.iter_mut().zip(&loads) {
                    *o = (3.0 * t).sin() * l;
                }
            };
        let coupled = cn_coupled_plant_observer(
            &mut plant_integ,
            &mut obs_integ,
            &layout,
            &cfg,
            &y0,
            &y0,
            Some(control),
            StorePolicy::NormsOnly,
        )
        .unwrap();
        for (k, &err) in coupled.error_norms.iter().enumerate() {
            assert!(
                err <= 1e-10 * coupled.plant.norms[k].max(1e-30),
                "estimation error grew from nothing at node {k}: {err}"
            );
        }
    }

    #[test]
    fn rejects_bad_grids_and_dimensions() {
        let (mesh, ops) = heat_setup();
        let coeffs = OscillatingCoefficients;
        let rc = RcAssembler::new(&mesh, &ops, &coeffs);
        assert!(TimeGrid::span(0.0, 1.0, -0.1).is_err());
        assert!(TimeGrid::span(0.0, 0.0, 0.1).is_err());
        assert!(TimeGrid::span(0.0, 0.05, 0.002 * 1.0001).is_err());
        let grid = TimeGrid::span(0.0, 0.1, 2e-3).unwrap();
        let mut integ =
            CnIntegrator::new(&ops, &rc, grid, SolverStrategy::default()).unwrap();
        let wrong = vec![0.0; 3];
        assert!(cn_forward(&mut integ, &wrong, None::<NoForcing>, StorePolicy::Full).is_err());
    }
}
