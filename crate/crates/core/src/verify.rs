//! Quick oracle suite behind the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bspline::{bivariate_kernel, knot_variance, normalized_bspline_density, BackgroundComponent, KnotVector};
use crate::geometry::MapBounds;
use crate::oracle::{crp_expected_clusters, crp_partition_law, prior_expected_clusters_mc, quadrature, quadrature_1d, quadrature_richardson, Rect};
use crate::psf::{GaussianPsf, PsfModel};
use crate::spectral::{gamma_pareto_update, GammaParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst absolute deviation seen.
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error <= self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: error {:.3e} (tolerance {:.1e})", self.name, self.error, self.tolerance)
    }
}

/// Random ascending knots with gaps in `[0.2, 2.2)`, starting in `[-3, 3)`.
pub fn random_knots<R: Rng + ?Sized>(rng: &mut R) -> [f64; 5] {
    let mut k = [rng.random_range(-3.0..3.0); 5];
    for i in 1..5 {
        k[i] = k[i - 1] + rng.random_range(0.2..2.2);
    }
    k
}

/// Integrate `f` against the order-4 density on `knots`, one panel set per knot interval.
fn moment(knots: &[f64; 5], f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    knots
        .windows(2)
        .map(|w| quadrature_1d(|x| f(x) * normalized_bspline_density(4, knots, x).unwrap(), w[0], w[1], panels))
        .sum()
}

pub fn variance_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err = (knot_variance(&[0.0f64, 1.0]) - 1.0 / 12.0).abs();
    err = err.max((knot_variance(&[0.0f64, 1.0, 2.0, 3.0, 4.0]) - 1.0 / 3.0).abs());
    for _ in 0..50 {
        let k = random_knots(&mut rng);
        let mean = moment(&k, |x| x, 4096);
        let var = moment(&k, |x| (x - mean) * (x - mean), 4096);
        err = err.max((knot_variance(&k) - var).abs());
    }
    Check { name: "knot variance formula vs quadrature", error: err, tolerance: 1e-8 }
}

/// 1-D and bivariate B-spline densities and the map-renormalized PSF, `configs` random draws each.
pub fn normalization_check(seed: u64, configs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    for _ in 0..configs {
        let kx = random_knots(&mut rng);
        let ky = random_knots(&mut rng);
        err = err.max((moment(&kx, |_| 1.0, 4096) - 1.0).abs());
        let comp = BackgroundComponent::new(KnotVector(kx), KnotVector(ky));
        let mut total = 0.0;
        for wx in kx.windows(2) {
            for wy in ky.windows(2) {
                let r = Rect { x0: wx[0], x1: wx[1], y0: wy[0], y1: wy[1] };
                total += quadrature_richardson(|x, y| bivariate_kernel(x, y, &comp), r, 100);
            }
        }
        err = err.max((total - 1.0).abs());
    }
    let bounds = MapBounds::square(5.0, 1.0, 316.0).expect("valid map");
    let psf = PsfModel::Gaussian(GaussianPsf::default());
    for _ in 0..configs {
        let mu = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let e = 10f64.powf(rng.random_range(0.0..1.0));
        let s = 9.0 * GaussianPsf::<f64>::default().sigma(e);
        let r = Rect { x0: (mu.0 - s).max(-5.0), x1: (mu.0 + s).min(5.0), y0: (mu.1 - s).max(-5.0), y1: (mu.1 + s).min(5.0) };
        let at = psf.at(e).expect("Gaussian PSF covers all energies");
        let mass = at.map_mass(mu, &bounds);
        let total = quadrature(|x, y| at.raw(x - mu.0, y - mu.1) / mass, r, 4000);
        err = err.max((total - 1.0).abs());
    }
    Check { name: "densities integrate to one", error: err, tolerance: 1e-6 }
}

pub fn conjugacy_check() -> Check {
    let energies = [1.0, 2.0, 5.0, 10.0, 1.5];
    let (a, b) = gamma_pareto_update(3.196, 2.196, &energies, 1.0).expect("energies above e_min");
    let log_sum: f64 = energies.iter().map(|e: &f64| e.ln()).sum();
    let err = (a - 8.196).abs().max((b - (2.196 + log_sum)).abs());
    let mode = GammaParams::new(3.196, 2.196).mode();
    Check { name: "Gamma-Pareto update and prior mode", error: err.max((mode - 1.0).abs()), tolerance: 1e-12 }
}

pub fn crp_check() -> Check {
    let mut err: f64 = 0.0;
    for n in 1..=7 {
        let law = crp_partition_law(n, 2.0).expect("small n");
        err = err.max((law.expected_clusters() - crp_expected_clusters(n, 2.0)).abs());
        err = err.max((law.probs.iter().sum::<f64>() - 1.0).abs());
    }
    Check { name: "CRP partition law vs harmonic sum", error: err, tolerance: 1e-12 }
}

pub fn prior_sources_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mc = prior_expected_clusters_mc(10_000, 1.0, 2.0, 20_000, &mut rng);
    Check { name: "prior expected number of sources near 16", error: (mc - 16.0).abs(), tolerance: 1.5 }
}

/// Run every check with tolerances multiplied by `tolerance_scale` (1 for normal use).
pub fn run_checks(seed: u64, tolerance_scale: f64) -> Vec<Check> {
    let mut checks = vec![
        variance_check(seed),
        normalization_check(seed, 20),
        conjugacy_check(),
        crp_check(),
        prior_sources_check(seed),
        Check {
            name: "midpoint quadrature of x^2 on [0, 1]",
            error: (quadrature(|x, _| x * x, Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }, 1000) - 1.0 / 3.0).abs(),
            tolerance: 1e-6,
        },
    ];
    for c in &mut checks {
        c.tolerance *= tolerance_scale;
    }
    checks
}
