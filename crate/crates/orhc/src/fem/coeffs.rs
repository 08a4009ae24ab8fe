/// Reaction coefficient `a(x, t)` and convection field `b(x, t)` of the
/// nonautonomous part of the dynamics.
pub trait CoefficientField: Send + Sync {
    /// Returns `(a, b)` at a point.
    fn eval(&self, x: [f64; 2], t: f64) -> (f64, [f64; 2]);
}

/// The oscillating benchmark coefficient family:
/// `a = -1/2 + x1 - |sin(6t + x1)|`,
/// `b = (x1 + x2, |cos(6t) x1 x2|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OscillatingCoefficients;

impl CoefficientField for OscillatingCoefficients {
    #[inline]
    fn eval(&self, x: [f64; 2], t: f64) -> (f64, [f64; 2]) {
        let a = -0.5 + x[0] - (6.0 * t + x[0]).sin().abs();
        let b = [x[0] + x[1], ((6.0 * t).cos() * x[0] * x[1]).abs()];
        (a, b)
    }
}

/// Space- and time-independent coefficients, mostly for tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantCoefficients {
    pub a: f64,
    pub b: [f64; 2],
}

impl CoefficientField for ConstantCoefficients {
    #[inline]
    fn eval(&self, _x: [f64; 2], _t: f64) -> (f64, [f64; 2]) {
        (self.a, self.b)
    }
}

/// Closure-backed coefficients.
pub struct FnCoefficients<F>
where
    F: Fn([f64; 2], f64) -> (f64, [f64; 2]) + Send + Sync,
{
    pub f: F,
}

impl<F> CoefficientField for FnCoefficients<F>
where
    F: Fn([f64; 2], f64) -> (f64, [f64; 2]) + Send + Sync,
{
    #[inline]
    fn eval(&self, x: [f64; 2], t: f64) -> (f64, [f64; 2]) {
        (self.f)(x, t)
    }
}
