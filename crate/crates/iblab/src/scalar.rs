//! Scalar abstraction: every numeric module in this crate is generic over a
//! floating-point type implementing [`Real`]. Concrete `f64` aliases live at
//! the crate root.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("f64 literal not representable in scalar type")
}

/// `ln 2` in the working scalar type.
#[inline]
pub fn ln2<F: Real>() -> F {
    lit(std::f64::consts::LN_2)
}

/// Natural-log value converted to bits.
#[inline]
pub fn nats_to_bits<F: Real>(x: F) -> F {
    x / ln2()
}

/// `x * log2(x)` with the `0 log 0 = 0` convention.
#[inline]
pub fn xlog2x<F: Real>(x: F) -> F {
    if x > F::zero() {
        x * x.log2()
    } else {
        F::zero()
    }
}

/// Error function to near machine precision: Maclaurin series for small
/// arguments, Laplace continued fraction for the complement at large ones.
///
/// `num_traits::Float` has no `erf`; this one serves as the Erf network
/// activation (where its derivative 2/√π·e^(-x²) must match to full
/// precision for finite-difference checks), and as the normal CDF.
pub fn erf<F: Real>(x: F) -> F {
    let sign = if x < F::zero() { -F::one() } else { F::one() };
    let ax = x.abs();
    let two_over_sqrt_pi = lit::<F>(2.0 / std::f64::consts::PI.sqrt());
    if ax < lit(2.5) {
        // erf(x) = 2/√π Σ (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = ax * ax;
        let mut term = ax;
        let mut acc = ax;
        let mut n = 1u32;
        loop {
            term = term * (-x2) / lit::<F>(n as f64);
            let contrib = term / lit::<F>((2 * n + 1) as f64);
            acc = acc + contrib;
            if contrib.abs() < acc.abs() * lit(1e-18) || n > 200 {
                break;
            }
            n += 1;
        }
        sign * two_over_sqrt_pi * acc
    } else {
        sign * (F::one() - erfc_large(ax))
    }
}

/// erfc(x) for x ≥ 2.5 via the Laplace continued fraction
/// erfc(x) = e^(-x²)/√π · 1/(x + ½/(x + 1/(x + 3/2/(x + ...)))),
/// evaluated bottom-up (64 levels are ample at these arguments).
fn erfc_large<F: Real>(x: F) -> F {
    let mut g = x;
    for k in (1..=64u32).rev() {
        g = x + lit::<F>(k as f64 / 2.0) / g;
    }
    (-x * x).exp() / (lit::<F>(std::f64::consts::PI.sqrt()) * g)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<F: Real>(x: F) -> F {
    let half = lit::<F>(0.5);
    half * (F::one() + erf(x / lit::<F>(std::f64::consts::SQRT_2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_values() {
        // Reference values from standard tables.
        let cases = [
            (0.0, 0.0),
            (0.5, 0.5204998778130465),
            (1.0, 0.8427007929497149),
            (2.0, 0.9953222650189527),
            (3.0, 0.9999779095030014),
            (5.0, 0.9999999999984626),
        ];
        for (x, want) in cases {
            let got: f64 = erf(x);
            assert!((got - want).abs() < 1e-14, "erf({x}) = {got}, want {want}");
            assert!((erf(-x) + want).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_cdf_symmetry() {
        for &x in &[0.0f64, 0.3, 1.7, 2.9] {
            let s = normal_cdf(x) + normal_cdf(-x);
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn xlog2x_zero_convention() {
        assert_eq!(xlog2x(0.0f64), 0.0);
        assert!((xlog2x(0.5f64) + 0.5).abs() < 1e-15);
    }
}
