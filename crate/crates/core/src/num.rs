//! Scalar abstraction shared by the density kernels.
//!
//! The B-spline, Pareto and PSF kernels are written once against [`Real`] and
//! instantiated for `f32` and `f64`. The sampler and post-processing layers
//! run in `f64` through the aliases exported at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Error function, evaluated in double precision.
    #[inline]
    fn erf(self) -> Self {
        Self::lit(statrs::function::erf::erf(self.as_f64()))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf<T: Real>(z: T) -> T {
    let half = T::lit(0.5);
    half * (T::one() + (z / T::SQRT_2()).erf())
}

/// `ln(sum(exp(v)))` without overflow; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((std_normal_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.959963984540054f64) - 0.975).abs() < 1e-10);
        assert!((std_normal_cdf(-1.0f32) - 0.158_655_25).abs() < 1e-6);
    }

    #[test]
    fn logsumexp_handles_extremes() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
