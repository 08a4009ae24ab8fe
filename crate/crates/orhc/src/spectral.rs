//! Leading eigenpairs of the Neumann Laplacian on the mesh and the
//! state-penalization operator of the cost functional.

use crate::error::OrhcError;
use crate::fem::OperatorSet;
use crate::layout::ActuatorSensorLayout;
use crate::linalg::{jacobi_symmetric_eig, ColumnMatrix, SplitMix64};
use crate::Result;

/// Mass-orthonormal eigenbasis of the generalized problem
/// `K e = lambda M e` with `K` the pure Laplacian stiffness.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// M-orthonormal eigenvector columns (dof space).
    pub vectors: ColumnMatrix,
}

impl EigenBasis {
    pub fn count(&self) -> usize {
        self.values.len()
    }
}

/// Smallest `n_q` eigenpairs of `K e = lambda M e` by shift-invert
/// subspace iteration on `(K + M)^{-1} M` with Rayleigh-Ritz extraction
/// each sweep. Deterministic: fixed-seed starting block, fixed sweep
/// order, sign-fixed output.
pub fn compute_neumann_eigenbasis(ops: &OperatorSet, n_q: usize) -> Result<EigenBasis> {
    let n = ops.n_dofs();
    if n_q == 0 || n_q > n {
        return Err(OrhcError::Config(format!(
            "eigenbasis size {n_q} out of range 1..={n}"
        )));
    }
    let block = (n_q + (n_q / 2).max(10)).min(n);
    let max_sweeps = 400usize;

    // Shifted operator K + M is SPD; factor once.
    let mut shifted = ops.laplacian.clone();
    shifted.add_scaled(1.0, &ops.mass);
    let bw = shifted.pattern().bandwidth();
    let lu = shifted.to_band(bw, bw)?.factor()?;

    // Deterministic starting block: the constant plus a pseudo-random
    // spread.
    let mut rng = SplitMix64::new(0x0eed_5eed_0000_0001);
    let mut x = ColumnMatrix::zeros(n, block);
    x.cols[0].fill(1.0);
    for col in x.cols.iter_mut().skip(1) {
        rng.fill_symmetric(col);
    }
    m_orthonormalize(ops, &mut x, &mut rng)?;

    let mut ritz_prev: Vec<f64> = vec![f64::INFINITY; n_q];
    let mut converged = false;
    let mut work = vec![0.0; n];
    for _sweep in 0..max_sweeps {
        // X <- (K + M)^{-1} M X
        for col in x.cols.iter_mut() {
            ops.mass.matvec(col, &mut work);
            col.copy_from_slice(&work);
            lu.solve(col);
        }
        m_orthonormalize(ops, &mut x, &mut rng)?;
        // Rayleigh-Ritz on K: H = X^T K X (symmetric, X is M-orthonormal).
        let h = project_symmetric(&ops.laplacian, &x, &mut work);
        let (ritz, vecs) = jacobi_symmetric_eig(block, &h)?;
        rotate_block(&mut x, &vecs);
        let drift = ritz
            .iter()
            .take(n_q)
            .zip(&ritz_prev)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0f64, f64::max);
        ritz_prev[..n_q].copy_from_slice(&ritz[..n_q]);
        if drift < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OrhcError::Numerical(format!(
            "eigensolver did not converge within {max_sweeps} sweeps"
        )));
    }

    // Residual validation on the pairs that are returned.
    let mut values = Vec::with_capacity(n_q);
    let mut vectors = ColumnMatrix::zeros(n, n_q);
    let mut kx = vec![0.0; n];
    let mut mx = vec![0.0; n];
    for j in 0..n_q {
        let v = &x.cols[j];
        ops.laplacian.matvec(v, &mut kx);
        ops.mass.matvec(v, &mut mx);
        let lambda = crate::linalg::dot(v, &kx); // M-normalized Rayleigh quotient
        let mut resid = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            let r = kx[i] - lambda * mx[i];
            resid += r * r;
            scale += mx[i] * mx[i];
        }
        if resid.sqrt() > 1e-6 * (1.0 + lambda.abs()) * scale.sqrt().max(1e-300) {
            return Err(OrhcError::Numerical(format!(
                "eigenpair {j} failed the residual check (lambda = {lambda})"
            )));
        }
        values.push(lambda);
        vectors.cols[j].copy_from_slice(v);
    }

    order_and_sign_fix(&mut values, &mut vectors);
    Ok(EigenBasis { values, vectors })
}

/// Two-pass classical Gram-Schmidt in the M inner product (CGS2); rank
/// drops are refilled deterministically.
fn m_orthonormalize(ops: &OperatorSet, x: &mut ColumnMatrix, rng: &mut SplitMix64) -> Result<()> {
    let n = x.n_rows();
    let mut mv = vec![0.0; n];
    let mut coeffs = vec![0.0; x.n_cols()];
    for j in 0..x.n_cols() {
        let mut refill_guard = 0;
        loop {
            for _pass in 0..2 {
                ops.mass.matvec(&x.cols[j], &mut mv);
                for i in 0..j {
                    coeffs[i] = crate::linalg::dot(&x.cols[i], &mv);
                }
                let (head, tail) = x.cols.split_at_mut(j);
                for i in 0..j {
                    crate::linalg::axpy(-coeffs[i], &head[i], &mut tail[0]);
                }
            }
            ops.mass.matvec(&x.cols[j], &mut mv);
            let norm = crate::linalg::dot(&x.cols[j], &mv).max(0.0).sqrt();
            if norm > 1e-12 {
                let inv = 1.0 / norm;
                for v in x.cols[j].iter_mut() {
                    *v *= inv;
                }
                break;
            }
            refill_guard += 1;
            if refill_guard > 5 {
                return Err(OrhcError::Numerical(
                    "persistent rank deficiency in eigensolver block".into(),
                ));
            }
            rng.fill_symmetric(&mut x.cols[j]);
        }
    }
    Ok(())
}

/// H = X^T A X for symmetric A (row-major block).
fn project_symmetric(a: &crate::linalg::CsrMatrix, x: &ColumnMatrix, work: &mut [f64]) -> Vec<f64> {
    let b = x.n_cols();
    let mut h = vec![0.0; b * b];
    for j in 0..b {
        a.matvec(&x.cols[j], work);
        for i in 0..=j {
            let v = crate::linalg::dot(&x.cols[i], work);
            h[i * b + j] = v;
            h[j * b + i] = v;
        }
    }
    h
}

/// X <- X * V for a small square rotation V (columns of `vecs`).
fn rotate_block(x: &mut ColumnMatrix, vecs: &ColumnMatrix) {
    let n = x.n_rows();
    let b = x.n_cols();
    let mut out = vec![vec![0.0; n]; b];
    for (k, out_col) in out.iter_mut().enumerate() {
        let coeffs = &vecs.cols[k];
        for (j, xc) in x.cols.iter().enumerate() {
            crate::linalg::axpy(coeffs[j], xc, out_col);
        }
    }
    x.cols = out;
}

/// Deterministic ordering inside degenerate clusters (relative gap
/// below 1e-8): sign-fix each vector so its first significant
/// coefficient is positive, then order cluster members by the index of
/// their largest-magnitude coefficient.
fn order_and_sign_fix(values: &mut [f64], vectors: &mut ColumnMatrix) {
    let n_q = values.len();
    for col in vectors.cols.iter_mut() {
        let maxmag = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * maxmag) {
            if *first < 0.0 {
                for v in col.iter_mut() {
                    *v = -*v;
                }
            }
        }
    }
    let mut start = 0;
    while start < n_q {
        let mut end = start + 1;
        while end < n_q
            && (values[end] - values[end - 1]).abs() <= 1e-8 * (1.0 + values[end].abs())
        {
            end += 1;
        }
        if end - start > 1 {
            let mut keyed: Vec<(usize, usize)> = (start..end)
                .map(|j| {
                    let col = &vectors.cols[j];
                    let mut arg = 0usize;
                    let mut best = -1.0f64;
                    for (i, v) in col.iter().enumerate() {
                        if v.abs() > best {
                            best = v.abs();
                            arg = i;
                        }
                    }
                    (arg, j)
                })
                .collect();
            keyed.sort();
            let reordered_vals: Vec<f64> = keyed.iter().map(|&(_, j)| values[j]).collect();
            let reordered_cols: Vec<Vec<f64>> =
                keyed.iter().map(|&(_, j)| vectors.cols[j].clone()).collect();
            for (off, (v, c)) in reordered_vals.into_iter().zip(reordered_cols).enumerate() {
                values[start + off] = v;
                vectors.cols[start + off] = c;
            }
        }
        start = end;
    }
}

/// Which penalization operator weights the state in the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `scale * P_E`: scaled M-orthogonal projection onto an eigenbasis.
    EigProjection,
    /// `scale * 1` with the H norm.
    Identity,
    /// `scale * Z`: scaled sensor outputs.
    Sensors,
    /// `scale * A^{1/2}`: squared norm `scale^2 y^T K_A y`.
    SqrtA,
}

/// State-penalization operator `Q: H -> H_Q`.
pub struct PenaltyOperator {
    pub kind: PenaltyKind,
    pub scale: f64,
    pub basis: Option<EigenBasis>,
    /// Cached `M * E` columns for the eigenprojection kind.
    me: Option<ColumnMatrix>,
    /// Sensor loads for the sensor kind.
    sensor_loads: Option<ColumnMatrix>,
}

impl PenaltyOperator {
    pub fn eig_projection(scale: f64, basis: EigenBasis, ops: &OperatorSet) -> Self {
        assert!(scale >= 0.0);
        let n = ops.n_dofs();
        let mut cols = Vec::with_capacity(basis.count());
        for e in &basis.vectors.cols {
            let mut me = vec![0.0; n];
            ops.mass.matvec(e, &mut me);
            cols.push(me);
        }
        Self {
            kind: PenaltyKind::EigProjection,
            scale,
            basis: Some(basis),
            me: Some(ColumnMatrix { cols }),
            sensor_loads: None,
        }
    }

    pub fn identity(scale: f64) -> Self {
        assert!(scale >= 0.0);
        Self {
            kind: PenaltyKind::Identity,
            scale,
            basis: None,
            me: None,
            sensor_loads: None,
        }
    }

    pub fn sensors(scale: f64, layout: &ActuatorSensorLayout) -> Self {
        assert!(scale >= 0.0);
        Self {
            kind: PenaltyKind::Sensors,
            scale,
            basis: None,
            me: None,
            sensor_loads: Some(layout.sensor_loads.clone()),
        }
    }

    /// Square-root penalty: coordinates are never materialized (the
    /// squared norm and the adjoint source are evaluated through the
    /// quadratic form of `K_A`).
    pub fn sqrt_a(scale: f64, _ops: &OperatorSet) -> Result<Self> {
        assert!(scale >= 0.0);
        Ok(Self {
            kind: PenaltyKind::SqrtA,
            scale,
            basis: None,
            me: None,
            sensor_loads: None,
        })
    }

    /// Coordinates of `Q y` in `H_Q`. For `EigProjection` and `Sensors`
    /// the Euclidean norm of the result is the `H_Q` norm; for
    /// `Identity` the result is `scale * y` whose `H_Q` norm is the mass
    /// norm; `SqrtA` coordinates are not materialized (the square-root
    /// factor is triangular, not symmetric), use [`hq_norm_sq`].
    ///
    /// [`hq_norm_sq`]: PenaltyOperator::hq_norm_sq
    pub fn apply_penalty(&self, ops: &OperatorSet, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != ops.n_dofs() {
            return Err(OrhcError::dim("apply_penalty", ops.n_dofs(), y.len()));
        }
        match self.kind {
            PenaltyKind::EigProjection => {
                let me = self.me.as_ref().expect("cached ME");
                let mut c = vec![0.0; me.n_cols()];
                me.transpose_apply(y, &mut c);
                for v in c.iter_mut() {
                    *v *= self.scale;
                }
                Ok(c)
            }
            PenaltyKind::Identity => Ok(y.iter().map(|v| v * self.scale).collect()),
            PenaltyKind::Sensors => {
                let loads = self.sensor_loads.as_ref().expect("sensor loads");
                let mut w = vec![0.0; loads.n_cols()];
                loads.transpose_apply(y, &mut w);
                for v in w.iter_mut() {
                    *v *= self.scale;
                }
                Ok(w)
            }
            PenaltyKind::SqrtA => Err(OrhcError::Config(
                "sqrt_A penalty has no materialized coordinates; use hq_norm_sq".into(),
            )),
        }
    }

    /// `|| Q y ||^2_{H_Q}`.
    pub fn hq_norm_sq(&self, ops: &OperatorSet, y: &[f64]) -> f64 {
        let s2 = self.scale * self.scale;
        match self.kind {
            PenaltyKind::EigProjection => {
                let me = self.me.as_ref().expect("cached ME");
                let mut acc = 0.0;
                for col in &me.cols {
                    let c = crate::linalg::dot(col, y);
                    acc += c * c;
                }
                s2 * acc
            }
            PenaltyKind::Identity => s2 * ops.mass.quadratic_form(y, y),
            PenaltyKind::Sensors => {
                let loads = self.sensor_loads.as_ref().expect("sensor loads");
                let mut acc = 0.0;
                for col in &loads.cols {
                    let c = crate::linalg::dot(col, y);
                    acc += c * c;
                }
                s2 * acc
            }
            PenaltyKind::SqrtA => s2 * ops.stiffness_a.quadratic_form(y, y),
        }
    }

    /// out += alpha * (Q* Q y); the adjoint source of the cost is
    /// obtained with `alpha = -1`.
    pub fn add_qstar_q(&self, ops: &OperatorSet, y: &[f64], alpha: f64, out: &mut [f64]) {
        let s2 = alpha * self.scale * self.scale;
        match self.kind {
            PenaltyKind::EigProjection => {
                let me = self.me.as_ref().expect("cached ME");
                for col in &me.cols {
                    let c = crate::linalg::dot(col, y);
                    crate::linalg::axpy(s2 * c, col, out);
                }
            }
            PenaltyKind::Identity => {
                ops.mass.matvec_add(s2, y, out);
            }
            PenaltyKind::Sensors => {
                let loads = self.sensor_loads.as_ref().expect("sensor loads");
                for col in &loads.cols {
                    let c = crate::linalg::dot(col, y);
                    crate::linalg::axpy(s2 * c, col, out);
                }
            }
            PenaltyKind::SqrtA => {
                ops.stiffness_a.matvec_add(s2, y, out);
            }
        }
    }

    /// out += alpha * M^{-1} (Q* Q y). The eigenprojection and identity
    /// kinds cancel the mass inverse algebraically; the other kinds
    /// need a factorization of the mass matrix.
    pub fn add_minv_qstar_q(
        &self,
        ops: &OperatorSet,
        mass_lu: Option<&crate::linalg::BandLu>,
        y: &[f64],
        alpha: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let s2 = alpha * self.scale * self.scale;
        match self.kind {
            PenaltyKind::EigProjection => {
                // M^{-1} (s^2 M E E^T M) y = s^2 E (M E)^T y
                let me = self.me.as_ref().expect("cached ME");
                let basis = self.basis.as_ref().expect("basis present");
                for (mcol, ecol) in me.cols.iter().zip(&basis.vectors.cols) {
                    let c = crate::linalg::dot(mcol, y);
                    crate::linalg::axpy(s2 * c, ecol, out);
                }
                Ok(())
            }
            PenaltyKind::Identity => {
                crate::linalg::axpy(s2, y, out);
                Ok(())
            }
            PenaltyKind::Sensors | PenaltyKind::SqrtA => {
                let lu = mass_lu.ok_or_else(|| {
                    OrhcError::Config(
                        "this penalty kind needs a mass factorization for M^{-1} Q* Q".into(),
                    )
                })?;
                let mut tmp = vec![0.0; y.len()];
                self.add_qstar_q(ops, y, alpha, &mut tmp);
                lu.solve(&mut tmp);
                crate::linalg::axpy(1.0, &tmp, out);
                Ok(())
            }
        }
    }

    /// FEM load of `-Q* Q y`.
    pub fn penalty_adjoint_source(&self, ops: &OperatorSet, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != ops.n_dofs() {
            return Err(OrhcError::dim(
                "penalty_adjoint_source",
                ops.n_dofs(),
                y.len(),
            ));
        }
        let mut out = vec![0.0; y.len()];
        self.add_qstar_q(ops, y, -1.0, &mut out);
        Ok(out)
    }
}

/// Ascending analytic Neumann-Laplacian eigenvalues `pi^2 (k^2 + l^2)`
/// of the unit square with multiplicity (test oracle and run-summary
/// reference).
pub fn analytic_neumann_spectrum(count: usize) -> Vec<f64> {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let mut vals = Vec::new();
    let kmax = 2 + (count as f64).sqrt() as usize * 2 + 8;
    for k in 0..=kmax {
        for l in 0..=kmax {
            if k == 0 && l == 0 {
                continue;
            }
            vals.push(pi2 * (k * k + l * l) as f64);
        }
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.truncate(count);
    let mut out = vec![0.0];
    out.extend(vals);
    out.truncate(count);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_static, BoundaryCondition, Mesh};
    use crate::layout::build_layout;

    fn basis(n_div: usize, n_q: usize) -> (OperatorSet, EigenBasis) {
        let mesh = Mesh::build(n_div, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let basis = compute_neumann_eigenbasis(&ops, n_q).unwrap();
        (ops, basis)
    }

    #[test]
    fn constant_mode_comes_first() {
        let (_, basis) = basis(16, 6);
        assert!(basis.values[0].abs() < 1e-8);
        let v0 = &basis.vectors.cols[0];
        let mean = v0.iter().sum::<f64>() / v0.len() as f64;
        for v in v0 {
            assert!((v - mean).abs() < 1e-6 * mean.abs());
        }
        // values ascending
        for w in basis.values.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
    }

    #[test]
    fn spectrum_tracks_analytic_values() {
        // P1 elements overestimate eigenvalues at O(h^2 lambda^2); on the
        // 32-mesh the worst of the first 30 sits at 3.71%. Assert the
        // measured envelope with a small margin; the refinement-ratio
        // test below pins the convergence order.
        let (_, basis) = basis(32, 30);
        let exact = analytic_neumann_spectrum(30);
        for (i, (got, want)) in basis.values.iter().zip(&exact).enumerate().skip(1) {
            let rel = (got - want) / want;
            assert!(rel > -1e-10, "eigenvalue {i} below the analytic value");
            assert!(rel < 0.038, "eigenvalue {i}: {got} vs {want} (rel {rel})");
        }
    }

    #[test]
    fn m_orthonormal_basis() {
        let (ops, basis) = basis(16, 12);
        let mut mv = vec![0.0; ops.n_dofs()];
        for i in 0..12 {
            ops.mass.matvec(&basis.vectors.cols[i], &mut mv);
            for j in 0..12 {
                let g = crate::linalg::dot(&basis.vectors.cols[j], &mv);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g - expect).abs() <= 1e-10,
                    "gram({i},{j}) = {g}"
                );
            }
        }
    }

    #[test]
    fn eigenvalue_error_drops_at_second_order() {
        let exact = analytic_neumann_spectrum(10);
        let (_, coarse) = basis(16, 10);
        let (_, fine) = basis(32, 10);
        // use the simple eigenvalue 2 pi^2 (index 3) and 8 pi^2 (index 8)
        for idx in [3usize, 8] {
            let e_coarse = (coarse.values[idx] - exact[idx]).abs();
            let e_fine = (fine.values[idx] - exact[idx]).abs();
            let ratio = e_coarse / e_fine;
            assert!(
                (3.0..5.0).contains(&ratio),
                "index {idx}: coarse {e_coarse}, fine {e_fine}, ratio {ratio}"
            );
        }
    }

    #[test]
    fn degenerate_pairs_nearly_agree_and_split_shrinks() {
        // The fixed-diagonal triangulation keeps the x<->y reflection but
        // not the quarter turn, so (k,l)/(l,k) pairs split by a
        // discretization-sized amount instead of matching exactly. The
        // split must be small and must shrink under refinement.
        let (_, coarse) = basis(16, 12);
        let (_, fine) = basis(32, 12);
        for &(i, j) in &[(1usize, 2usize), (4, 5), (9, 10)] {
            let sc = (coarse.values[i] - coarse.values[j]).abs() / (1.0 + coarse.values[i]);
            let sf = (fine.values[i] - fine.values[j]).abs() / (1.0 + fine.values[i]);
            assert!(sc < 1e-3, "coarse split {sc} at pair ({i},{j})");
            assert!(sf < 1e-4, "fine split {sf} at pair ({i},{j})");
            if sc > 1e-12 {
                assert!(sf < sc, "split did not shrink: {sc} -> {sf}");
            }
        }
    }

    #[test]
    fn eigenbasis_is_deterministic() {
        let (_, a) = basis(16, 8);
        let (_, b) = basis(16, 8);
        assert_eq!(a.values, b.values);
        for (ca, cb) in a.vectors.cols.iter().zip(&b.vectors.cols) {
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn shifted_pencil_gives_stiffness_a_spectrum() {
        // smallest generalized eigenvalue of (K_A, M) is 1, second is
        // 1 + nu pi^2.
        let (_, basis) = basis(32, 3);
        let lam0 = 0.1 * basis.values[0] + 1.0;
        let lam1 = 0.1 * basis.values[1] + 1.0;
        assert!((lam0 - 1.0).abs() < 1e-8);
        let expect = 1.0 + 0.1 * std::f64::consts::PI.powi(2);
        assert!((lam1 - expect).abs() < 0.01 * expect, "{lam1} vs {expect}");
    }

    #[test]
    fn penalty_projection_examples() {
        let (ops, basis) = basis(16, 10);
        let q = PenaltyOperator::eig_projection(800f64.sqrt(), basis, &ops);
        // y = k-th eigenvector -> scale * e_k
        let y = q.basis.as_ref().unwrap().vectors.cols[4].clone();
        let c = q.apply_penalty(&ops, &y).unwrap();
        for (j, v) in c.iter().enumerate() {
            let expect = if j == 4 { 800f64.sqrt() } else { 0.0 };
            assert!((v - expect).abs() < 1e-7, "coord {j}: {v}");
        }
        assert!((q.hq_norm_sq(&ops, &y) - 800.0).abs() < 1e-6);

        // y M-orthogonal to the basis span -> zero output
        let mut rng = crate::linalg::SplitMix64::new(77);
        let mut y = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y);
        let me = q.me.as_ref().unwrap();
        for (col, e) in me.cols.iter().zip(&q.basis.as_ref().unwrap().vectors.cols) {
            let c = crate::linalg::dot(col, &y);
            crate::linalg::axpy(-c, e, &mut y);
        }
        let c = q.apply_penalty(&ops, &y).unwrap();
        let norm = crate::linalg::norm2(&c);
        assert!(norm < 1e-9, "projection of orthogonal part: {norm}");
    }

    #[test]
    fn penalty_zero_scale_gives_zero_source() {
        let (ops, basis) = basis(16, 5);
        let q = PenaltyOperator::eig_projection(0.0, basis, &ops);
        let y = vec![1.0; ops.n_dofs()];
        let src = q.penalty_adjoint_source(&ops, &y).unwrap();
        assert!(src.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_duality_all_kinds() {
        let mesh = Mesh::build(16, 0).unwrap();
        let ops = assemble_static(&mesh, 0.1, BoundaryCondition::Neumann).unwrap();
        let layout = build_layout(1, 0.5, &mesh, &ops).unwrap();
        let basis = compute_neumann_eigenbasis(&ops, 6).unwrap();
        let kinds: Vec<PenaltyOperator> = vec![
            PenaltyOperator::eig_projection(2.5, basis, &ops),
            PenaltyOperator::identity(1.3),
            PenaltyOperator::sensors(0.7, &layout),
            PenaltyOperator::sqrt_a(1.1, &ops).unwrap(),
        ];
        let mut rng = crate::linalg::SplitMix64::new(123);
        for q in &kinds {
            for _ in 0..5 {
                let mut y = vec![0.0; ops.n_dofs()];
                let mut z = vec![0.0; ops.n_dofs()];
                rng.fill_symmetric(&mut y);
                rng.fill_symmetric(&mut z);
                // <-source(y), z> = <Qy, Qz>_{H_Q}; polarize from norms.
                let src = q.penalty_adjoint_source(&ops, &y).unwrap();
                let lhs = -crate::linalg::dot(&src, &z);
                let mut ypz = y.clone();
                crate::linalg::axpy(1.0, &z, &mut ypz);
                let mut ymz = y.clone();
                crate::linalg::axpy(-1.0, &z, &mut ymz);
                let rhs = 0.25 * (q.hq_norm_sq(&ops, &ypz) - q.hq_norm_sq(&ops, &ymz));
                let scale = q.hq_norm_sq(&ops, &y).sqrt() * q.hq_norm_sq(&ops, &z).sqrt();
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * scale.max(1.0),
                    "{:?}: {lhs} vs {rhs}",
                    q.kind
                );
            }
        }
    }

    #[test]
    fn norm_two_routes_agree() {
        let (ops, basis) = basis(16, 8);
        let q = PenaltyOperator::eig_projection(800f64.sqrt(), basis, &ops);
        let mut rng = crate::linalg::SplitMix64::new(31);
        for _ in 0..10 {
            let mut y = vec![0.0; ops.n_dofs()];
            rng.fill_symmetric(&mut y);
            let direct = q.hq_norm_sq(&ops, &y);
            let src = q.penalty_adjoint_source(&ops, &y).unwrap();
            let via_source = -crate::linalg::dot(&src, &y);
            assert!((direct - via_source).abs() <= 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn projection_energy_monotone_in_basis_size() {
        let (ops, basis) = basis(16, 12);
        let mut rng = crate::linalg::SplitMix64::new(8);
        let mut y = vec![0.0; ops.n_dofs()];
        rng.fill_symmetric(&mut y);
        let mut mv = vec![0.0; ops.n_dofs()];
        ops.mass.matvec(&y, &mut mv);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for e in &basis.vectors.cols {
            let c = crate::linalg::dot(e, &mv);
            acc += c * c;
            assert!(acc >= prev);
            prev = acc;
        }
    }
}
