//! Scalar abstraction: every numerical kernel in this crate is generic over
//! [`Real`], which is implemented for `f32` and `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar used for coordinates, fields and residuals.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for pulling an `f64` literal into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// 2-vector in physical space. 1D meshes use the x component only.
pub type Vec2<T> = [T; 2];

#[inline]
pub fn dot<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm<T: Real>(a: Vec2<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub<T: Real>(a: Vec2<T>, b: Vec2<T>) -> Vec2<T> {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn cross<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}
