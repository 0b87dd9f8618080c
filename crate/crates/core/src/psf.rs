//! Point-spread functions: density of an observed photon position given the true
//! source location and the photon energy.
//!
//! Densities are truncated to the analysed map and renormalized there, so they
//! integrate to one over the map for every source location.

use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MapBounds;
use crate::num::{std_normal_cdf, Real};

/// Resampling guard for draws that land off the map.
pub const MAX_SAMPLE_ATTEMPTS: usize = 1_000_000;

/// Isotropic Gaussian PSF with `sigma(E) = sigma_ref * (E / e_ref)^(-index) + sigma_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPsf<T = f64> {
    pub sigma_ref: T,
    pub e_ref: T,
    pub index: T,
    pub sigma_floor: T,
}

impl<T: Real> Default for GaussianPsf<T> {
    /// Calibrated so the 68% containment radius at 1 GeV is about one degree.
    fn default() -> Self {
        GaussianPsf { sigma_ref: T::lit(0.6), e_ref: T::one(), index: T::lit(0.8), sigma_floor: T::lit(0.07) }
    }
}

impl<T: Real> GaussianPsf<T> {
    /// Energy-independent PSF.
    pub fn constant(sigma: T) -> Self {
        GaussianPsf { sigma_ref: sigma, e_ref: T::one(), index: T::zero(), sigma_floor: T::zero() }
    }

    #[inline]
    pub fn sigma(&self, energy: T) -> T {
        self.sigma_ref * (energy / self.e_ref).powf(-self.index) + self.sigma_floor
    }
}

/// Untruncated isotropic Gaussian density at offset `(dx, dy)`.
#[inline]
pub fn gaussian_raw<T: Real>(dx: T, dy: T, sigma: T) -> T {
    let s2 = sigma * sigma;
    (-(dx * dx + dy * dy) / (T::lit(2.0) * s2)).exp() / (T::lit(2.0) * T::PI() * s2)
}

/// Mass of an isotropic Gaussian centred at `mu` inside the map rectangle.
#[inline]
pub fn gaussian_map_mass<T: Real>(mu: (T, T), sigma: T, bounds: &MapBounds<T>) -> T {
    // beyond 8 sigma from every edge the deficit is below double precision
    let reach = T::lit(8.0) * sigma;
    let axis = |m: T, lo: T, hi: T| {
        if m - lo > reach && hi - m > reach {
            T::one()
        } else {
            std_normal_cdf((hi - m) / sigma) - std_normal_cdf((lo - m) / sigma)
        }
    };
    axis(mu.0, bounds.x_min, bounds.x_max) * axis(mu.1, bounds.y_min, bounds.y_max)
}

/// Tabulated radial PSF, bilinear in (log E, offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPsf {
    energies: Vec<f64>,
    offsets: Vec<f64>,
    /// Row-renormalized densities, `table[e][r]`.
    table: Vec<Vec<f64>>,
    /// Factor applied to each raw row.
    scale: Vec<f64>,
}

impl TabulatedPsf {
    /// Build from raw rows; each row is rescaled to unit mass over the plane.
    pub fn new(energies: Vec<f64>, offsets: Vec<f64>, raw: Vec<Vec<f64>>) -> Result<Self> {
        if energies.is_empty() || offsets.len() < 2 {
            return Err(Error::InvalidArgument("tabulated PSF needs >= 1 energy and >= 2 offsets".into()));
        }
        if !energies.windows(2).all(|w| w[0] < w[1]) || energies[0] <= 0.0 {
            return Err(Error::InvalidArgument("PSF energies must be positive and ascending".into()));
        }
        if offsets[0] != 0.0 || !offsets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("PSF offsets must ascend from 0".into()));
        }
        if raw.len() != energies.len() || raw.iter().any(|r| r.len() != offsets.len()) {
            return Err(Error::InvalidArgument("PSF table shape does not match its axes".into()));
        }
        if raw.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("PSF densities must be finite and non-negative".into()));
        }
        let mut table = Vec::with_capacity(raw.len());
        let mut scale = Vec::with_capacity(raw.len());
        for row in raw {
            let mass = radial_mass(&offsets, &row, f64::INFINITY);
            if !(mass > 0.0) {
                return Err(Error::InvalidArgument("PSF row with zero mass".into()));
            }
            scale.push(1.0 / mass);
            table.push(row.iter().map(|v| v / mass).collect());
        }
        Ok(TabulatedPsf { energies, offsets, table, scale })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn max_offset(&self) -> f64 {
        *self.offsets.last().unwrap()
    }

    /// Radial profile at `energy`, interpolated linearly in log energy.
    pub fn profile(&self, energy: f64) -> Result<Vec<f64>> {
        let (lo, hi) = (self.energies[0], *self.energies.last().unwrap());
        if !(energy >= lo && energy <= hi) {
            return Err(Error::EnergyOutOfTable { energy, lo, hi });
        }
        if self.energies.len() == 1 {
            return Ok(self.table[0].clone());
        }
        let k = self.energies.partition_point(|&e| e <= energy).clamp(1, self.energies.len() - 1);
        let (e0, e1) = (self.energies[k - 1], self.energies[k]);
        let w = (energy.ln() - e0.ln()) / (e1.ln() - e0.ln());
        Ok(self.table[k - 1].iter().zip(&self.table[k]).map(|(a, b)| (1.0 - w) * a + w * b).collect())
    }

    /// Read the text format: `n_e n_r`, energies, offsets, then `n_e` rows of `n_r` densities.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = crate::io::open(path)?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| Error::parse(path, n + 1, format!("bad number `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((n + 1, vals));
        }
        let mut it = rows.into_iter();
        let (l1, dims) = it.next().ok_or_else(|| Error::parse(path, 1, "empty PSF file"))?;
        if dims.len() != 2 {
            return Err(Error::parse(path, l1, "first line must be `n_e n_r`"));
        }
        let (ne, nr) = (dims[0] as usize, dims[1] as usize);
        let (l2, energies) = it.next().ok_or_else(|| Error::parse(path, 2, "missing energies"))?;
        let (l3, offsets) = it.next().ok_or_else(|| Error::parse(path, 3, "missing offsets"))?;
        if energies.len() != ne {
            return Err(Error::parse(path, l2, format!("expected {ne} energies")));
        }
        if offsets.len() != nr {
            return Err(Error::parse(path, l3, format!("expected {nr} offsets")));
        }
        let mut table = Vec::with_capacity(ne);
        for (ln, row) in it {
            if row.len() != nr {
                return Err(Error::parse(path, ln, format!("expected {nr} densities")));
            }
            table.push(row);
        }
        if table.len() != ne {
            return Err(Error::parse(path, l3, format!("expected {ne} density rows, found {}", table.len())));
        }
        TabulatedPsf::new(energies, offsets, table)
    }
}

/// `int_0^limit 2 pi r rho(r) dr` for a piecewise-linear profile (zero past the last node).
fn radial_mass(offsets: &[f64], rho: &[f64], limit: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..offsets.len() - 1 {
        let (a, b) = (offsets[k], offsets[k + 1]);
        if a >= limit {
            break;
        }
        let bb = b.min(limit);
        total += segment_mass(a, b, rho[k], rho[k + 1], bb);
    }
    total
}

/// `int_a^x 2 pi r (ra + s (r - a)) dr` with `s` the slope of the segment `[a, b]`.
#[inline]
fn segment_mass(a: f64, b: f64, ra: f64, rb: f64, x: f64) -> f64 {
    let s = (rb - ra) / (b - a);
    let c0 = ra - s * a;
    2.0 * std::f64::consts::PI * (c0 * (x * x - a * a) / 2.0 + s * (x * x * x - a * a * a) / 3.0)
}

#[inline]
fn profile_at(offsets: &[f64], rho: &[f64], r: f64) -> f64 {
    let last = offsets.len() - 1;
    if r > offsets[last] {
        return 0.0;
    }
    let k = offsets.partition_point(|&o| o <= r).clamp(1, last);
    let (a, b) = (offsets[k - 1], offsets[k]);
    let w = (r - a) / (b - a);
    (1.0 - w) * rho[k - 1] + w * rho[k]
}

/// Fraction of the circle of radius `r` around `mu` that lies inside the map.
fn arc_fraction_inside(mu: (f64, f64), r: f64, b: &MapBounds<f64>) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI, TAU};
    if r <= 0.0 {
        return 1.0;
    }
    // each side excludes an arc centred on its outward normal
    let sides = [(b.x_max - mu.0, 0.0), (mu.1 - b.y_min, 3.0 * FRAC_PI_2), (mu.0 - b.x_min, PI), (b.y_max - mu.1, FRAC_PI_2)];
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for (d, centre) in sides {
        if d < r {
            let half = (d / r).clamp(-1.0, 1.0).acos();
            let (lo, hi) = (centre - half, centre + half);
            // split at the 0 / 2pi seam
            let lo = lo.rem_euclid(TAU);
            let hi_w = lo + 2.0 * half;
            if hi_w > TAU {
                arcs.push((lo, TAU));
                arcs.push((0.0, hi_w - TAU));
            } else {
                arcs.push((lo, hi_w));
            }
            let _ = hi;
        }
    }
    if arcs.is_empty() {
        return 1.0;
    }
    arcs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut covered = 0.0;
    let (mut cs, mut ce) = arcs[0];
    for &(s, e) in &arcs[1..] {
        if s > ce {
            covered += ce - cs;
            cs = s;
            ce = e;
        } else {
            ce = ce.max(e);
        }
    }
    covered += ce - cs;
    (1.0 - covered / TAU).max(0.0)
}

/// Either PSF form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PsfModel {
    Gaussian(GaussianPsf<f64>),
    Tabulated(TabulatedPsf),
}

impl Default for PsfModel {
    fn default() -> Self {
        PsfModel::Gaussian(GaussianPsf::default())
    }
}

/// A PSF specialised to one energy: what the samplers evaluate per event.
#[derive(Debug, Clone, PartialEq)]
pub enum PsfAt {
    Gaussian { sigma: f64 },
    Radial { offsets: std::sync::Arc<[f64]>, rho: Vec<f64> },
}

impl PsfModel {
    pub fn at(&self, energy: f64) -> Result<PsfAt> {
        match self {
            PsfModel::Gaussian(g) => Ok(PsfAt::Gaussian { sigma: g.sigma(energy) }),
            PsfModel::Tabulated(t) => Ok(PsfAt::Radial { offsets: t.offsets.clone().into(), rho: t.profile(energy)? }),
        }
    }
}

impl PsfAt {
    /// Untruncated density at offset `(dx, dy)`.
    #[inline]
    pub fn raw(&self, dx: f64, dy: f64) -> f64 {
        match self {
            PsfAt::Gaussian { sigma } => gaussian_raw(dx, dy, *sigma),
            PsfAt::Radial { offsets, rho } => profile_at(offsets, rho, (dx * dx + dy * dy).sqrt()),
        }
    }

    /// Mass of the untruncated PSF centred at `mu` that falls inside the map.
    pub fn map_mass(&self, mu: (f64, f64), bounds: &MapBounds<f64>) -> f64 {
        match self {
            PsfAt::Gaussian { sigma } => gaussian_map_mass(mu, *sigma, bounds),
            PsfAt::Radial { offsets, rho } => {
                let rmax = *offsets.last().unwrap();
                let inside = mu.0 - rmax >= bounds.x_min
                    && mu.0 + rmax <= bounds.x_max
                    && mu.1 - rmax >= bounds.y_min
                    && mu.1 + rmax <= bounds.y_max;
                if inside {
                    return radial_mass(offsets, rho, f64::INFINITY);
                }
                // radial midpoint rule with the exact angular fraction per ring
                let n = 400;
                let h = rmax / n as f64;
                (0..n)
                    .map(|k| {
                        let r = (k as f64 + 0.5) * h;
                        2.0 * std::f64::consts::PI * r * profile_at(offsets, rho, r) * arc_fraction_inside(mu, r, bounds)
                    })
                    .sum::<f64>()
                    * h
            }
        }
    }

    /// Map-truncated, renormalized density at `x` for true location `mu` (per deg^2).
    #[inline]
    pub fn density(&self, x: (f64, f64), mu: (f64, f64), bounds: &MapBounds<f64>) -> f64 {
        if !bounds.contains(x.0, x.1) {
            return 0.0;
        }
        let raw = self.raw(x.0 - mu.0, x.1 - mu.1);
        if raw == 0.0 {
            return 0.0;
        }
        raw / self.map_mass(mu, bounds)
    }

    /// Radial CDF of the untruncated PSF.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        match self {
            PsfAt::Gaussian { sigma } => 1.0 - (-r * r / (2.0 * sigma * sigma)).exp(),
            PsfAt::Radial { offsets, rho } => radial_mass(offsets, rho, r).min(1.0),
        }
    }

    /// Draw an offset from the untruncated PSF.
    fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            PsfAt::Gaussian { sigma } => {
                let dx: f64 = StandardNormal.sample(rng);
                let dy: f64 = StandardNormal.sample(rng);
                (dx * sigma, dy * sigma)
            }
            PsfAt::Radial { .. } => {
                let u = rng.random::<f64>();
                let r = self.radius_for(u);
                let th = rng.random::<f64>() * std::f64::consts::TAU;
                (r * th.cos(), r * th.sin())
            }
        }
    }

    fn radius_for(&self, frac: f64) -> f64 {
        let mut hi = match self {
            PsfAt::Gaussian { sigma } => 50.0 * sigma,
            PsfAt::Radial { offsets, .. } => *offsets.last().unwrap(),
        };
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.radial_cdf(mid) < frac {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draw an observed position for true location `mu`, resampling until it lands on the map.
    pub fn sample<R: Rng + ?Sized>(&self, mu: (f64, f64), bounds: &MapBounds<f64>, rng: &mut R) -> Result<(f64, f64)> {
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let (dx, dy) = self.sample_offset(rng);
            let (x, y) = (mu.0 + dx, mu.1 + dy);
            if bounds.contains(x, y) {
                return Ok((x, y));
            }
        }
        Err(Error::Degenerate(format!("PSF sample at {mu:?} never landed on the map")))
    }
}

/// Truncated, renormalized PSF density (per deg^2).
pub fn psf_density(x: (f64, f64), mu: (f64, f64), energy: f64, model: &PsfModel, bounds: &MapBounds<f64>) -> Result<f64> {
    Ok(model.at(energy)?.density(x, mu, bounds))
}

pub fn psf_sample<R: Rng + ?Sized>(
    mu: (f64, f64),
    energy: f64,
    model: &PsfModel,
    bounds: &MapBounds<f64>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    model.at(energy)?.sample(mu, bounds, rng)
}

/// Radius containing `frac` of the (untruncated) PSF mass, by bisection on the radial CDF.
pub fn containment_radius(energy: f64, model: &PsfModel, frac: f64) -> Result<f64> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidArgument(format!("containment fraction must be in (0, 1), got {frac}")));
    }
    Ok(model.at(energy)?.radius_for(frac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{quadrature, Rect};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bounds() -> MapBounds {
        MapBounds::square(5.0, 1.0, 316.0).unwrap()
    }

    fn rect(b: &MapBounds) -> Rect {
        Rect { x0: b.x_min, x1: b.x_max, y0: b.y_min, y1: b.y_max }
    }

    #[test]
    fn mode_at_true_location() {
        let m = PsfModel::default();
        let b = bounds();
        let mu = (0.3, -1.2);
        let peak = psf_density(mu, mu, 2.0, &m, &b).unwrap();
        for &(dx, dy) in &[(0.01, 0.0), (0.0, -0.02), (0.3, 0.3), (1.0, 0.0)] {
            assert!(psf_density((mu.0 + dx, mu.1 + dy), mu, 2.0, &m, &b).unwrap() < peak);
        }
    }

    #[test]
    fn higher_energy_concentrates() {
        let m = PsfModel::default();
        let b = bounds();
        let mu = (0.0, 0.0);
        assert!(psf_density(mu, mu, 10.0, &m, &b).unwrap() > psf_density(mu, mu, 1.0, &m, &b).unwrap());
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        let m = PsfModel::default();
        let b = bounds();
        for &(mu, e) in &[((0.0, 0.0), 1.0), ((1.5, -2.0), 5.0), ((3.0, 3.0), 30.0)] {
            let at = m.at(e).unwrap();
            let int = quadrature(|x, y| at.density((x, y), mu, &b), rect(&b), 400);
            assert!((int - 1.0).abs() < 1e-6, "{mu:?} {e}: {int}");
        }
    }

    #[test]
    fn edge_source_renormalized() {
        let m = PsfModel::Gaussian(GaussianPsf::constant(0.5));
        let b = bounds();
        let at = m.at(1.0).unwrap();
        let mu = (4.9, -4.95);
        assert!(at.map_mass(mu, &b) < 0.5);
        let int = quadrature(|x, y| at.density((x, y), mu, &b), rect(&b), 2000);
        assert!((int - 1.0).abs() < 1e-5, "{int}");
    }

    #[test]
    fn containment_closed_form() {
        let m = PsfModel::Gaussian(GaussianPsf::constant(1.0));
        let r = containment_radius(1.0, &m, 0.3935).unwrap();
        assert!((r - 1.0).abs() < 1e-3, "{r}");
        let d = PsfModel::default();
        assert!(containment_radius(1.0, &d, 0.9).unwrap() > containment_radius(1.0, &d, 0.5).unwrap());
        assert!(containment_radius(1.0, &d, 1.0).is_err());
    }

    #[test]
    fn default_containment_near_one_degree() {
        let r = containment_radius(1.0, &PsfModel::default(), 0.68).unwrap();
        assert!((r - 1.0).abs() < 0.15, "{r}");
    }

    #[test]
    fn corner_samples_stay_inside() {
        let m = PsfModel::default();
        let b = bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let (x, y) = psf_sample((5.0, 5.0), 1.0, &m, &b, &mut rng).unwrap();
            assert!(b.contains(x, y));
        }
    }

    fn toy_table() -> TabulatedPsf {
        let offsets: Vec<f64> = (0..=60).map(|k| k as f64 * 0.05).collect();
        let row = |s: f64| offsets.iter().map(|r| (-r * r / (2.0 * s * s)).exp()).collect::<Vec<_>>();
        TabulatedPsf::new(vec![1.0, 10.0, 100.0], offsets.clone(), vec![row(0.6), row(0.2), row(0.08)]).unwrap()
    }

    #[test]
    fn table_nodes_reproduced_after_scaling() {
        let t = toy_table();
        let p = t.profile(10.0).unwrap();
        for (k, &r) in t.offsets().iter().enumerate() {
            let raw = (-r * r / (2.0 * 0.2 * 0.2)).exp();
            assert!((p[k] - raw * t.scale()[1]).abs() < 1e-15);
        }
        assert!(t.profile(0.5).is_err());
        assert!(t.profile(200.0).is_err());
    }

    #[test]
    fn tabulated_integrates_to_one_near_edge() {
        let m = PsfModel::Tabulated(toy_table());
        let b = bounds();
        for &mu in &[(0.0, 0.0), (4.8, 4.6), (-4.9, 0.2)] {
            let at = m.at(3.0).unwrap();
            let int = quadrature(|x, y| at.density((x, y), mu, &b), rect(&b), 1200);
            assert!((int - 1.0).abs() < 2e-3, "{mu:?}: {int}");
        }
    }

    #[test]
    fn arc_fraction_limits() {
        let b = bounds();
        assert_eq!(arc_fraction_inside((0.0, 0.0), 1.0, &b), 1.0);
        // straight edge through the centre: half the circle inside
        assert!((arc_fraction_inside((5.0, 0.0), 1.0, &b) - 0.5).abs() < 1e-12);
        // corner: a quarter
        assert!((arc_fraction_inside((5.0, 5.0), 1.0, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tabulated_file_round_trip() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "2 3\n1 10\n0 0.5 1.0\n1 0.5 0\n2 1 0").unwrap();
        let t = TabulatedPsf::read(f.path()).unwrap();
        assert_eq!(t.energies(), &[1.0, 10.0]);
        assert!((radial_mass(t.offsets(), &t.profile(1.0).unwrap(), f64::INFINITY) - 1.0).abs() < 1e-12);
    }
}
