//! Scalar abstraction so the numeric core runs at f32 or f64.

use num_traits::Float;

/// Floating point scalar for all tensor and geometry math.
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Relative tolerance for gradient checks at this precision.
    fn grad_check_tol() -> Self;

    fn from_f64(x: f64) -> Self;

    fn from_usize_(n: usize) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn grad_check_tol() -> Self {
        1e-2
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn from_usize_(n: usize) -> Self {
        n as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn grad_check_tol() -> Self {
        1e-4
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_usize_(n: usize) -> Self {
        n as f64
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Epsilon used by layer normalization, expressed per precision.
pub fn layer_norm_eps<S: Scalar>() -> S {
    S::from_f64(1e-5)
}
