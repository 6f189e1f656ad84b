//! Scalar abstraction for the Euclidean bubble algebra and quadrature kernels.

use num_traits::{Float, FromPrimitive, NumCast};
use std::fmt::Debug;

/// Floating point type usable by the generic parts of the crate.
pub trait Real: Float + FromPrimitive + NumCast + Debug + Send + Sync + 'static {
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a small integer.
    fn int(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable")
    }

    fn pi() -> Self {
        Self::lit(std::f64::consts::PI)
    }
}

impl<T> Real for T where T: Float + FromPrimitive + NumCast + Debug + Send + Sync + 'static {}

/// Gamma(n/2) for a positive integer n, computed by the half-integer recursion.
pub fn gamma_half<T: Real>(n: usize) -> T {
    assert!(n >= 1, "gamma_half needs n >= 1");
    let mut value = if n.is_multiple_of(2) { T::one() } else { T::pi().sqrt() };
    let mut k = if n.is_multiple_of(2) { 2 } else { 1 };
    while k < n {
        value = value * T::int(k) / T::lit(2.0);
        k += 2;
    }
    value
}

/// Area of the unit sphere S^{n-1} in R^n, i.e. 2 pi^{n/2} / Gamma(n/2).
pub fn sphere_area<T: Real>(n: usize) -> T {
    assert!(n >= 1, "sphere_area needs n >= 1");
    T::lit(2.0) * T::pi().powf(T::int(n) / T::lit(2.0)) / gamma_half::<T>(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_half_values() {
        let pi = std::f64::consts::PI;
        assert!((gamma_half::<f64>(1) - pi.sqrt()).abs() < 1e-15);
        assert!((gamma_half::<f64>(2) - 1.0).abs() < 1e-15);
        assert!((gamma_half::<f64>(5) - 0.75 * pi.sqrt()).abs() < 1e-14);
        assert!((gamma_half::<f64>(8) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_areas() {
        let pi = std::f64::consts::PI;
        assert!((sphere_area::<f64>(2) - 2.0 * pi).abs() < 1e-14);
        assert!((sphere_area::<f64>(3) - 4.0 * pi).abs() < 1e-13);
        assert!((sphere_area::<f64>(4) - 2.0 * pi * pi).abs() < 1e-13);
        assert!((sphere_area::<f64>(6) - pi.powi(3)).abs() < 1e-12);
        assert!((sphere_area::<f32>(3) - 4.0 * std::f32::consts::PI).abs() < 1e-5);
    }
}
