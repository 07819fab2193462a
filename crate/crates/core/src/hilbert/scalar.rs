use std::fmt::Debug;
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst};

/// Floating-point scalar the linear-algebra layer is generic over.
pub trait Real: Float + FloatConst + Default + Debug + Sum + Send + Sync + 'static {
    /// Absolute tolerance for trace, hermiticity and positivity checks.
    fn tolerance() -> Self;

    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Real for f64 {
    fn tolerance() -> Self {
        1e-9
    }
    fn lit(x: f64) -> Self {
        x
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Real for f32 {
    fn tolerance() -> Self {
        1e-4
    }
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

pub type C<T> = Complex<T>;

pub(crate) fn c<T: Real>(re: f64, im: f64) -> C<T> {
    Complex::new(T::lit(re), T::lit(im))
}

pub(crate) fn re<T: Real>(x: T) -> C<T> {
    Complex::new(x, T::zero())
}
