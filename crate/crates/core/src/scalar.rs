//! Floating-point scalar abstraction used throughout the crate.
//!
//! Every numerical routine is generic over [`Real`], a blanket alias over the
//! `num-traits` surface we rely on.  `f64` is the workhorse; `f32` works for
//! the same code paths at correspondingly looser tolerances.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::float::{Float, FloatConst};
use num_traits::{FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for all field values, eigen-data and bounds.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + ScalarOperand
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Shorthand for converting an `f64` literal; panics only on NaN inputs,
    /// which never occur for compile-time constants.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    /// Exact conversion of a small integer (lattice index, mode count, ...).
    #[inline]
    fn of_int(value: i64) -> Self {
        Self::from_i64(value).expect("small integer")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + Sum<Self>
        + ScalarOperand
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

/// Neumaier-compensated accumulator; keeps long mode sums accurate to O(eps)
/// independently of summand count.
#[derive(Clone, Copy, Debug)]
pub struct Compensated<T> {
    sum: T,
    carry: T,
}

impl<T: Real> Compensated<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), carry: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, value: T) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

impl<T: Real> Default for Compensated<T> {
    fn default() -> Self {
        Self::new()
    }
}
