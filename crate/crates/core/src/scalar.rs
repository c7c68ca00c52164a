//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the grid machinery is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean length of a 2-vector without intermediate overflow for desk-scale values.
#[inline]
pub fn norm2<T: Scalar>(v: [T; 2]) -> T {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

#[inline]
pub fn dot2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

/// Projects `v` onto the closed ball of radius `r`, guaranteeing `norm2(result) <= r`
/// in floating point (the plain rescale can overshoot by one ulp).
#[inline]
pub fn project_ball<T: Scalar>(v: [T; 2], r: T) -> [T; 2] {
    let n = norm2(v);
    if n <= r {
        return v;
    }
    let s = r / n;
    let mut out = [v[0] * s, v[1] * s];
    let shrink = T::one() - T::epsilon() * T::lit(4.0);
    while norm2(out) > r {
        out = [out[0] * shrink, out[1] * shrink];
    }
    out
}

/// Clamps `v` to `[-r, r]`.
#[inline]
pub fn project_interval<T: Scalar>(v: T, r: T) -> T {
    v.max(-r).min(r)
}
