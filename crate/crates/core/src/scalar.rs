//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real scalar usable throughout the crate: `f32` for training, `f64` for
/// reference computations and gradient checks.
///
/// The bound set is what the FFT (`rustfft`) and the matrix kernels
/// (`ndarray`/`matrixmultiply`) need, so exact rational types are not
/// admissible here.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Short name used in checkpoint headers.
    fn type_name() -> &'static str;
}

impl Scalar for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}

/// Converts a slice between scalar types.
pub fn cast_slice<A: Scalar, B: Scalar>(xs: &[A]) -> Vec<B> {
    xs.iter().map(|&x| B::of(x.f64())).collect()
}
