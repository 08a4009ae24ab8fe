//! Dependency-free numerical kernels used by the assembly and
//! time-stepping layers: compressed sparse rows, banded LU, small dense
//! factorizations and a cyclic Jacobi eigensolver for projected
//! problems.

mod band;
mod dense;
mod sparse;

pub use band::{BandLu, BandMatrix};
pub use dense::{jacobi_symmetric_eig, ColumnMatrix, SmallLu};
pub use sparse::{CsrMatrix, SparsityPattern};

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Least-squares line fit through (x_i, y_i); returns (slope, intercept).
///
/// Requires at least two distinct abscissae; degenerate input yields
/// slope 0 through the mean.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        (0.0, my)
    } else {
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    }
}

/// Deterministic pseudo-random stream (splitmix64) for starting blocks
/// and test vectors; keeps the crate free of RNG dependencies.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in (-1, 1).
    pub fn next_symmetric(&mut self) -> f64 {
        let u = self.next_u64() >> 11; // 53 bits
        2.0 * (u as f64 / (1u64 << 53) as f64) - 1.0
    }

    pub fn fill_symmetric(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_symmetric();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_line() {
        let xs: Vec<f64> = (0..20).map(|k| 0.3 * k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -1.7 * x + 0.4).collect();
        let (slope, icpt) = linear_fit(&xs, &ys);
        assert!((slope + 1.7).abs() < 1e-12);
        assert!((icpt - 0.4).abs() < 1e-12);
    }

    #[test]
    fn splitmix_is_deterministic() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SplitMix64::new(7);
        let vals: Vec<f64> = (0..1000).map(|_| c.next_symmetric()).collect();
        assert!(vals.iter().all(|v| v.abs() < 1.0));
        let mean = vals.iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.1);
    }
}
