//! Scalar abstraction over the floating-point type used by the whole crate.
//!
//! All numeric code is generic over [`Real`], which extends [`num_traits::Float`]
//! with the special functions and random draws the library needs. Concrete
//! implementations are provided for `f32` and `f64`; the crate root exposes
//! type aliases for both.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Draws one standard normal sample.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws one uniform sample from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

impl Real for f64 {
    fn erfc(self) -> Self {
        libm::erfc(self)
    }

    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen()
    }
}

/// Converts an `f64` constant into `F`, rounding for narrower types.
#[inline]
pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite constant must convert")
}

/// Standard normal density.
#[inline]
pub(crate) fn normal_pdf<F: Real>(x: F) -> F {
    let half = real::<F>(0.5);
    let inv_sqrt_2pi = real::<F>(0.398_942_280_401_432_7);
    (-(x * x) * half).exp() * inv_sqrt_2pi
}

/// Standard normal cumulative distribution, evaluated through `erfc` so the
/// tails keep full relative precision.
#[inline]
pub(crate) fn normal_cdf<F: Real>(x: F) -> F {
    let half = real::<F>(0.5);
    let inv_sqrt_2 = real::<F>(core::f64::consts::FRAC_1_SQRT_2);
    half * (-x * inv_sqrt_2).erfc()
}

/// Numerically safe logistic sigmoid.
#[inline]
pub(crate) fn sigmoid<F: Real>(t: F) -> F {
    F::one() / (F::one() + (-t).exp())
}
