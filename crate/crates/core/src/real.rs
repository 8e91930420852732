//! Scalar abstraction over the two precisions the toolkit runs in.
//!
//! Gradient checking runs in `f64`; training runs in `f32`. Generic code
//! takes `T: Real` and converts literals through [`real`].

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors and parameters.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Name used by serialized formats ("f32" / "f64").
    const DTYPE: &'static str;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
}

/// Convert an `f64` literal into the working precision.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal convertible to Real")
}

/// Widen back to `f64` for reporting and logging.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("Real convertible to f64")
}
