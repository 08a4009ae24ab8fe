use crate::error::OrhcError;
use crate::Result;

/// Square banded matrix with `kl` sub- and `ku` super-diagonals, stored
/// row-major: row `i` occupies `data[i*w .. (i+1)*w]` with `w = kl+ku+1`
/// and column `j` at offset `j - i + kl`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + (j + self.kl - i)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j));
        let w = self.width();
        self.data[i * w + (j + self.kl - i)] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j));
        let w = self.width();
        self.data[i * w + (j + self.kl - i)] += v;
    }

    /// Raw band storage (row-major, width `kl + ku + 1`), for scatter
    /// assembly.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let w = self.width();
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for j in j0..=j1 {
                acc += row[j + self.kl - i] * x[j];
            }
            y[i] = acc;
        }
    }

    /// LU factorization without pivoting, in place.
    ///
    /// Valid for the strongly diagonally-weighted systems produced by
    /// implicit time stepping of parabolic problems; a vanishing pivot
    /// is reported as an error rather than repaired.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let w = kl + ku + 1;
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE * 1e4 {
                return Err(OrhcError::Numerical(format!(
                    "zero or non-finite pivot {pivot:e} at row {k} in banded LU"
                )));
            }
            let inv = 1.0 / pivot;
            let i_max = (k + kl).min(n - 1);
            let j_max = (k + ku).min(n - 1);
            let len = j_max - k; // columns k+1 ..= j_max
            // Split borrows: row k is read, rows k+1..=i_max are updated.
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let row_k = &head[k * w..];
            for i in (k + 1)..=i_max {
                let ri = &mut tail[(i - k - 1) * w..(i - k) * w];
                let off = k + kl - i; // column k in row i
                let l = ri[off] * inv;
                ri[off] = l;
                // row_k columns k+1..=j_max start at kl+1; row i offset off+1.
                let src = &row_k[kl + 1..kl + 1 + len];
                let dst = &mut ri[off + 1..off + 1 + len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= l * s;
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            data: self.data,
        })
    }
}

/// Banded LU factors (unit lower / upper), supporting solves with the
/// matrix and its transpose.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandLu {
    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Approximate heap footprint, used for cache budgeting.
    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let w = self.width();
        let kl = self.kl;
        let ku = self.ku;
        // L y = b (unit lower)
        for i in 0..self.n {
            let j0 = i.saturating_sub(kl);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in j0..i {
                acc -= row[j + kl - i] * b[j];
            }
            b[i] = acc;
        }
        // U x = y
        for i in (0..self.n).rev() {
            let j1 = (i + ku).min(self.n - 1);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = b[i];
            for j in (i + 1)..=j1 {
                acc -= row[j + kl - i] * b[j];
            }
            b[i] = acc / row[kl];
        }
    }

    /// Solve A^T x = b in place (U^T lower solve, then L^T upper solve).
    pub fn solve_transpose(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let w = self.width();
        let kl = self.kl;
        let ku = self.ku;
        // U^T y = b: U^T is lower triangular with U's diagonal.
        // Column-oriented sweep avoids transposed indexing.
        for j in 0..self.n {
            let row_j = &self.data[j * w..(j + 1) * w];
            let bj = b[j] / row_j[kl];
            b[j] = bj;
            let c1 = (j + ku).min(self.n - 1);
            for c in (j + 1)..=c1 {
                b[c] -= row_j[c + kl - j] * bj;
            }
        }
        // L^T x = y: unit diagonal, column-oriented backward sweep.
        for j in (0..self.n).rev() {
            let bj = b[j];
            let c0 = j.saturating_sub(kl);
            let row_j = &self.data[j * w..(j + 1) * w];
            for c in c0..j {
                b[c] -= row_j[c + kl - j] * bj;
            }
        }
    }
}
