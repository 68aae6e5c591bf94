use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for tensors and box geometry.
///
/// Everything numeric in this crate is generic over `Scalar` so the same
/// kernels and loss formulas run in `f32` (tensor execution, file I/O) and
/// `f64` (gradient checking, where central differences need the headroom).
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static {
    /// Lossless-enough conversion from an `f64` literal; panics only for
    /// values outside the target type's range, which never occurs for the
    /// constants used here.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    /// Widens to `f64` for accumulation and reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand used throughout the crate for embedding constants into generic
/// arithmetic, e.g. `sc::<S>(0.5) * x`.
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64_lit(v)
}
