//! Scalar abstraction: every module is generic over the floating-point type.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the solver works over (f32 or f64).
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Shorthand for converting an f64 literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
