//! Pareto photon spectra with a conjugate Gamma prior on the shape.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Pareto shapes of the source and background spectra, sharing the scale `e_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams<T = f64> {
    pub eta_s: T,
    pub eta_b: T,
    pub e_min: T,
}

/// `eta * e_min^eta / e^(eta + 1)` on `e >= e_min`, zero below.
#[inline]
pub fn pareto_density<T: Real>(e: T, e_min: T, eta: T) -> T {
    if e < e_min {
        return T::zero();
    }
    eta / e_min * (e_min / e).powf(eta + T::one())
}

/// `ln` of [`pareto_density`] (`-inf` below `e_min`).
#[inline]
pub fn pareto_log_density<T: Real>(e: T, e_min: T, eta: T) -> T {
    if e < e_min {
        return T::neg_infinity();
    }
    eta.ln() - e_min.ln() - (eta + T::one()) * (e / e_min).ln()
}

/// Inverse-CDF transform: `e_min * u^(-1/eta)` for `u` in `(0, 1]`.
#[inline]
pub fn pareto_quantile_upper<T: Real>(u: T, e_min: T, eta: T) -> T {
    e_min * u.powf(-T::one() / eta)
}

pub fn pareto_sample<T: Real, R: Rng + ?Sized>(e_min: T, eta: T, rng: &mut R) -> T {
    // 1 - U lies in (0, 1]
    let u = T::lit(1.0 - rng.random::<f64>());
    pareto_quantile_upper(u, e_min, eta)
}

/// Shape/rate parameters of a Gamma distribution (mode `(a - 1) / b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Self {
        GammaParams { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sd(&self) -> f64 {
        self.shape.sqrt() / self.rate
    }

    pub fn mode(&self) -> f64 {
        ((self.shape - 1.0) / self.rate).max(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("positive gamma parameters").sample(rng)
    }

    /// Conjugate update with Pareto observations above `e_min`.
    pub fn update(&self, energies: &[f64], e_min: f64) -> Result<GammaParams> {
        let (a, b) = gamma_pareto_update(self.shape, self.rate, energies, e_min)?;
        Ok(GammaParams::new(a, b))
    }
}

/// Gamma(a, b) prior on a Pareto shape, updated with `energies`:
/// returns `(a + n, b + sum ln(E_i / e_min))`.
pub fn gamma_pareto_update(a: f64, b: f64, energies: &[f64], e_min: f64) -> Result<(f64, f64)> {
    let mut log_sum = 0.0;
    for (i, &e) in energies.iter().enumerate() {
        if !(e >= e_min) {
            return Err(Error::InvalidArgument(format!("energy {e} (index {i}) below e_min {e_min}")));
        }
        log_sum += (e / e_min).ln();
    }
    Ok((a + energies.len() as f64, b + log_sum))
}

/// Detector response applied to the spectral kernel. The default passes the
/// intrinsic Pareto density through unchanged.
pub trait SpectralResponse: Send + Sync {
    fn log_density(&self, e: f64, e_min: f64, eta: f64) -> f64;
}

/// Constant effective area, no energy dispersion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityResponse;

impl SpectralResponse for IdentityResponse {
    #[inline]
    fn log_density(&self, e: f64, e_min: f64, eta: f64) -> f64 {
        pareto_log_density(e, e_min, eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::quadrature_1d;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_closed_forms() {
        assert_eq!(pareto_density(2.0, 2.0, 1.5), 1.5 / 2.0);
        assert_eq!(pareto_density(2.0, 1.0, 1.0), 0.25);
        assert_eq!(pareto_density(0.5, 1.0, 1.0), 0.0);
        assert!((pareto_log_density(3.0f64, 1.0, 2.0) - pareto_density(3.0f64, 1.0, 2.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn density_integrates_to_one() {
        let (e_min, eta) = (1.0, 1.7);
        let upper = 100.0f64 * e_min;
        // integrate in log space to keep the midpoint rule accurate
        let body = quadrature_1d(|u: f64| { let e = u.exp(); pareto_density(e, e_min, eta) * e }, 0.0, upper.ln(), 200_000);
        let tail = (e_min / upper).powf(eta);
        assert!((body + tail - 1.0).abs() < 1e-8, "{}", body + tail);
    }

    #[test]
    fn quantile_boundary() {
        assert_eq!(pareto_quantile_upper(1.0, 3.0, 2.0), 3.0);
    }

    #[test]
    fn median_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v: Vec<f64> = (0..100_000).map(|_| pareto_sample(1.0, 2.0, &mut rng)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = v[v.len() / 2];
        // density at the median is 2 * 2^(-3/2); sd of the sample median ~ 1/(2 f sqrt(n))
        let se = 1.0 / (2.0 * 2.0 * 2f64.powf(-1.5) * (1e5f64).sqrt());
        assert!((med - 2f64.sqrt()).abs() < 4.0 * se, "{med}");
        assert!(v[0] >= 1.0);
    }

    #[test]
    fn update_examples() {
        assert_eq!(gamma_pareto_update(3.196, 2.196, &[], 1.0).unwrap(), (3.196, 2.196));
        let (a, b) = gamma_pareto_update(3.196, 2.196, &[std::f64::consts::E], 1.0).unwrap();
        assert!((a - 4.196).abs() < 1e-12 && (b - 3.196).abs() < 1e-12);
        assert!(gamma_pareto_update(1.0, 1.0, &[0.5], 1.0).is_err());
    }

    #[test]
    fn prior_mode_is_one() {
        assert_eq!(GammaParams::new(3.196, 2.196).mode(), 1.0);
    }

    proptest! {
        #[test]
        fn update_is_batch_associative(
            e1 in proptest::collection::vec(1.0f64..500.0, 0..20),
            e2 in proptest::collection::vec(1.0f64..500.0, 0..20),
        ) {
            let (a1, b1) = gamma_pareto_update(2.0, 1.0, &e1, 1.0).unwrap();
            let (a12, b12) = gamma_pareto_update(a1, b1, &e2, 1.0).unwrap();
            let all: Vec<f64> = e1.iter().chain(&e2).copied().collect();
            let (a, b) = gamma_pareto_update(2.0, 1.0, &all, 1.0).unwrap();
            prop_assert_eq!(a12, a);
            prop_assert!((b12 - b).abs() < 1e-9 * b.max(1.0));
        }
    }
}
