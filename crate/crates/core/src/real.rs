//! Scalar abstraction shared by every numerical kernel in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Besides the usual arithmetic bounds, each implementation carries the
/// tolerances used by the simplex engine. The `f64` values are the ones the
/// solver is tuned for; the `f32` values are scaled to single precision.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Reduced costs above `-reduced_cost_tol()` count as non-negative.
    fn reduced_cost_tol() -> Self;

    /// Residual `r` at target `y` is zero when `|r| < zero_residual_tol() * (1 + |y|)`.
    fn zero_residual_tol() -> Self;

    /// Smallest admissible pivot magnitude, relative to the scale of the row.
    fn pivot_tol() -> Self;

    /// Lossy conversion from `f64`; panics only for values that cannot be
    /// represented at all, which never happens for finite constants.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    fn reduced_cost_tol() -> Self {
        1e-10
    }
    fn zero_residual_tol() -> Self {
        1e-9
    }
    fn pivot_tol() -> Self {
        1e-11
    }
}

impl Real for f32 {
    fn reduced_cost_tol() -> Self {
        1e-5
    }
    fn zero_residual_tol() -> Self {
        1e-5
    }
    fn pivot_tol() -> Self {
        1e-6
    }
}
