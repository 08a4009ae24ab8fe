use crate::error::OrhcError;
use crate::Result;

/// Tall dense matrix stored as a list of columns; used for eigenvector
/// blocks and low-rank solver workspaces.
#[derive(Debug, Clone)]
pub struct ColumnMatrix {
    pub cols: Vec<Vec<f64>>,
}

impl ColumnMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            cols: vec![vec![0.0; n_rows]; n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.cols.first().map_or(0, |c| c.len())
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    /// out = self^T x  (length n_cols)
    pub fn transpose_apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_cols());
        for (o, c) in out.iter_mut().zip(&self.cols) {
            *o = super::dot(c, x);
        }
    }

    /// out = self * coeffs  (length n_rows)
    pub fn apply(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_cols());
        out.fill(0.0);
        for (c, &a) in self.cols.iter().zip(coeffs) {
            super::axpy(a, c, out);
        }
    }
}

/// Dense LU with partial pivoting for small systems (Gram matrices,
/// Woodbury capacitance blocks).
#[derive(Debug, Clone)]
pub struct SmallLu {
    n: usize,
    lu: Vec<f64>, // row-major
    perm: Vec<usize>,
}

impl SmallLu {
    pub fn factor(n: usize, a_row_major: &[f64]) -> Result<Self> {
        assert_eq!(a_row_major.len(), n * n);
        let mut lu = a_row_major.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < f64::MIN_POSITIVE * 1e4 || !best.is_finite() {
                return Err(OrhcError::Numerical(format!(
                    "singular matrix in dense LU at column {k}"
                )));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    lu.swap(p * n + j, k * n + j);
                }
            }
            let inv = 1.0 / lu[k * n + k];
            for i in (k + 1)..n {
                let l = lu[i * n + k] * inv;
                lu[i * n + k] = l;
                for j in (k + 1)..n {
                    lu[i * n + j] -= l * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve(b, &mut x);
        x
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues ascending with matching eigenvector
/// columns. The input is given row-major and is assumed symmetric; only
/// the upper triangle is read.
pub fn jacobi_symmetric_eig(n: usize, a_row_major: &[f64]) -> Result<(Vec<f64>, ColumnMatrix)> {
    assert_eq!(a_row_major.len(), n * n);
    let mut a = a_row_major.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let idx = |i: usize, j: usize| i * n + j;
    let max_sweeps = 64;
    let mut converged = false;
    for _sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(n, &a)) {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Update A = J^T A J on rows/columns p, q.
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[idx(k.min(p), k.max(p))];
                        let akq = a[idx(k.min(q), k.max(q))];
                        let new_kp = c * akp - s * akq;
                        let new_kq = s * akp + c * akq;
                        a[idx(k.min(p), k.max(p))] = new_kp;
                        a[idx(k.min(q), k.max(q))] = new_kq;
                    }
                }
                let new_pp = app - t * apq;
                let new_qq = aqq + t * apq;
                a[idx(p, p)] = new_pp;
                a[idx(q, q)] = new_qq;
                a[idx(p, q)] = 0.0;
                for k in 0..n {
                    let vkp = v[idx(k, p)];
                    let vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One more residual check before giving up.
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if off.sqrt() > 1e-10 * (1.0 + frobenius(n, &a)) {
            return Err(OrhcError::Numerical(
                "Jacobi eigensolver did not converge".into(),
            ));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[idx(i, i)]
            .partial_cmp(&a[idx(j, j)])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| a[idx(i, i)]).collect();
    let mut vectors = ColumnMatrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.cols[c][r] = v[idx(r, src)];
        }
    }
    Ok((values, vectors))
}

/// Frobenius norm of a symmetric matrix of which only the upper
/// triangle is maintained.
fn frobenius(n: usize, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        s += a[i * n + i] * a[i * n + i];
        for j in (i + 1)..n {
            s += 2.0 * a[i * n + j] * a[i * n + j];
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SplitMix64;

    #[test]
    fn small_lu_solves_random_system() {
        let n = 7;
        let mut rng = SplitMix64::new(11);
        let mut a = vec![0.0; n * n];
        rng.fill_symmetric(&mut a);
        for i in 0..n {
            a[i * n + i] += 4.0;
        }
        let lu = SmallLu::factor(n, &a).unwrap();
        let mut b = vec![0.0; n];
        rng.fill_symmetric(&mut b);
        let x = lu.solve_vec(&b);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i * n + j] * x[j];
            }
            assert!((acc - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn small_lu_needs_pivoting_case() {
        // Zero on the leading diagonal forces a row swap.
        let a = vec![0.0, 1.0, 1.0, 0.0];
        let lu = SmallLu::factor(2, &a).unwrap();
        let x = lu.solve_vec(&[3.0, 5.0]);
        assert!((x[0] - 5.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3.
        let (vals, vecs) = jacobi_symmetric_eig(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // eigenvector for 1 is (1,-1)/sqrt(2) up to sign
        let v0 = &vecs.cols[0];
        assert!((v0[0] + v0[1]).abs() < 1e-10);
    }

    #[test]
    fn jacobi_recovers_random_spectrum() {
        let n = 12;
        let mut rng = SplitMix64::new(5);
        // Build A = Q D Q^T from random reflections applied to a diagonal.
        let diag: Vec<f64> = (0..n).map(|k| k as f64 - 3.5).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = diag[i];
        }
        // apply a few random Givens rotations symmetrically
        for _ in 0..40 {
            let p = (rng.next_u64() as usize) % n;
            let q = (rng.next_u64() as usize) % n;
            if p == q {
                continue;
            }
            let ang = rng.next_symmetric() * std::f64::consts::PI;
            let (s, c) = ang.sin_cos();
            // rows
            for j in 0..n {
                let ap = a[p * n + j];
                let aq = a[q * n + j];
                a[p * n + j] = c * ap - s * aq;
                a[q * n + j] = s * ap + c * aq;
            }
            // columns
            for i in 0..n {
                let ap = a[i * n + p];
                let aq = a[i * n + q];
                a[i * n + p] = c * ap - s * aq;
                a[i * n + q] = s * ap + c * aq;
            }
        }
        // Symmetrize exactly to kill rounding drift.
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (a[i * n + j] + a[j * n + i]);
                a[i * n + j] = m;
                a[j * n + i] = m;
            }
        }
        let (vals, vecs) = jacobi_symmetric_eig(n, &a).unwrap();
        let mut expected = diag.clone();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (v, e) in vals.iter().zip(&expected) {
            assert!((v - e).abs() < 1e-9, "eigenvalue {v} vs {e}");
        }
        // Residual ||A v - lambda v||
        for k in 0..n {
            let v = &vecs.cols[k];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[i * n + j] * v[j];
                }
                assert!((acc - vals[k] * v[i]).abs() < 1e-8);
            }
        }
    }
}
