//! Scalar abstraction: the numeric code is generic over f32/f64.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar used by the law and weight computations.
///
/// Accuracy statements elsewhere in the crate (1e-12 quantile round trips
/// and the like) assume f64; f32 works but with correspondingly lower
/// precision.
pub trait Real: Float + FromPrimitive + core::fmt::Debug + core::fmt::Display + 'static {
    /// Shorthand for lossy conversion of constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant conversion")
    }

    fn of_u64(x: u64) -> Self {
        Self::from_u64(x).expect("integer conversion")
    }

    fn half() -> Self {
        Self::of(0.5)
    }

    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}
