use std::sync::Arc;

use crate::error::OrhcError;
use crate::Result;

/// Sparsity pattern in compressed-sparse-row form, shared between all
/// matrices assembled on the same mesh.
#[derive(Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Build from unsorted (row, col) pairs; duplicates are merged.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: &[(usize, usize)]) -> Arc<Self> {
        let mut sorted: Vec<(usize, usize)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(i, _) in &sorted {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = sorted.iter().map(|&(_, j)| j).collect();
        Arc::new(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Flat index of entry (i, j), if present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|off| lo + off)
    }

    /// Maximal |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0usize;
        for i in 0..self.n_rows {
            for &j in self.row_cols(i) {
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }
}

/// Sparse matrix with a shared pattern and its own values.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let pairs: Vec<(usize, usize)> = triplets.iter().map(|&(i, j, _)| (i, j)).collect();
        let pattern = SparsityPattern::from_pairs(n_rows, n_cols, &pairs);
        let mut m = Self::zeros(pattern);
        for &(i, j, v) in triplets {
            let p = m.pattern.position(i, j).expect("triplet entry in pattern");
            m.values[p] += v;
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern
            .position(i, j)
            .map_or(0.0, |p| self.values[p])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols());
        debug_assert_eq!(y.len(), self.n_rows());
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        for i in 0..self.n_rows() {
            let mut acc = 0.0;
            for p in rp[i]..rp[i + 1] {
                acc += self.values[p] * x[ci[p]];
            }
            y[i] = acc;
        }
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        for i in 0..self.n_rows() {
            let mut acc = 0.0;
            for p in rp[i]..rp[i + 1] {
                acc += self.values[p] * x[ci[p]];
            }
            y[i] += alpha * acc;
        }
    }

    /// y = A^T x
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows());
        debug_assert_eq!(y.len(), self.n_cols());
        y.fill(0.0);
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        for i in 0..self.n_rows() {
            let xi = x[i];
            for p in rp[i]..rp[i + 1] {
                y[ci[p]] += self.values[p] * xi;
            }
        }
    }

    /// x^T A y
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        let mut total = 0.0;
        for i in 0..self.n_rows() {
            let mut acc = 0.0;
            for p in rp[i]..rp[i + 1] {
                acc += self.values[p] * y[ci[p]];
            }
            total += x[i] * acc;
        }
        total
    }

    /// self += alpha * other; both matrices must share the pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern,
            "pattern mismatch in add_scaled"
        );
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * o;
        }
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= alpha;
        }
        out
    }

    /// max_ij |a_ij - a_ji| (square matrices).
    pub fn symmetry_error(&self) -> f64 {
        let mut err = 0.0f64;
        for i in 0..self.n_rows() {
            for (off, &j) in self.pattern.row_cols(i).iter().enumerate() {
                let p = self.pattern.row_ptr[i] + off;
                let a_ij = self.values[p];
                let a_ji = self.get(j, i);
                err = err.max((a_ij - a_ji).abs());
            }
        }
        err
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for i in 0..self.n_rows() {
            let rp = &self.pattern.row_ptr;
            out[i] = self.values[rp[i]..rp[i + 1]].iter().sum();
        }
        out
    }

    pub fn total_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Dense band copy of the matrix; fails if an entry lies outside the
    /// requested band.
    pub fn to_band(&self, kl: usize, ku: usize) -> Result<super::BandMatrix> {
        let mut band = super::BandMatrix::zeros(self.n_rows(), kl, ku);
        for i in 0..self.n_rows() {
            for (off, &j) in self.pattern.row_cols(i).iter().enumerate() {
                let p = self.pattern.row_ptr[i] + off;
                let v = self.values[p];
                if v != 0.0 && (j + kl < i || j > i + ku) {
                    return Err(OrhcError::Numerical(format!(
                        "entry ({i},{j}) outside band (kl={kl}, ku={ku})"
                    )));
                }
                if j + kl >= i && j <= i + ku {
                    band.set(i, j, v);
                }
            }
        }
        Ok(band)
    }

    /// Write the matrix as `row col value` text lines (coordinate
    /// format, zero-based indices, 17 significant digits).
    pub fn write_coordinate<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{} {} {}", self.n_rows(), self.n_cols(), self.pattern.nnz())?;
        for i in 0..self.n_rows() {
            for (off, &j) in self.pattern.row_cols(i).iter().enumerate() {
                let p = self.pattern.row_ptr[i] + off;
                writeln!(w, "{} {} {:.16e}", i, j, self.values[p])?;
            }
        }
        Ok(())
    }
}
