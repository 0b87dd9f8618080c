//! Synthetic skies with known truth: binned Poisson counts from point sources
//! and a background template, converted to events at bin centroids.
//!
//! Expected counts of source `s` in pixel `(u, v)` and energy bin `z` are
//! `f0 * E_z^(-rho) * psf(center) * pixel_area * exposure_z`. Each component's
//! counts are drawn separately, so every event carries its origin.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{Grid, GridSpec, MapBounds, PhotonEvent};
use crate::psf::{GaussianPsf, PsfModel, TabulatedPsf};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSource {
    pub x: f64,
    pub y: f64,
    pub f0: f64,
    pub rho: f64,
}

/// Log-spaced energy bins.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBins {
    pub edges: Vec<f64>,
}

impl EnergyBins {
    /// `n` bins of `dex` decades each, starting at `e_min`.
    pub fn log_uniform(e_min: f64, dex: f64, n: usize) -> Result<Self> {
        if !(e_min > 0.0 && dex > 0.0) || n == 0 {
            return Err(Error::InvalidArgument(format!("bad energy binning: e_min {e_min}, dex {dex}, n {n}")));
        }
        Ok(EnergyBins { edges: (0..=n).map(|k| e_min * 10f64.powf(dex * k as f64)).collect() })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Geometric mean of the bin limits.
    pub fn centroid(&self, z: usize) -> f64 {
        (self.edges[z] * self.edges[z + 1]).sqrt()
    }

    pub fn width(&self, z: usize) -> f64 {
        self.edges[z + 1] - self.edges[z]
    }
}

impl Default for EnergyBins {
    fn default() -> Self {
        EnergyBins::log_uniform(1.0, 0.1, 25).expect("valid default binning")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exposure {
    Constant(f64),
    PerBin(Vec<f64>),
    /// Exposure proportional to bin width: the amplitude then reads as a
    /// differential spectrum, so bin counts fall as `E^(1 - rho)` per log bin.
    PerGeV(f64),
}

impl Exposure {
    pub fn at(&self, bins: &EnergyBins, z: usize) -> f64 {
        match self {
            Exposure::Constant(c) => *c,
            Exposure::PerBin(v) => v[z],
            Exposure::PerGeV(c) => c * bins.width(z),
        }
    }

    fn validate(&self, bins: &EnergyBins) -> Result<()> {
        let ok = match self {
            Exposure::Constant(c) | Exposure::PerGeV(c) => *c >= 0.0 && c.is_finite(),
            Exposure::PerBin(v) => {
                if v.len() != bins.len() {
                    return Err(Error::InvalidArgument(format!("{} exposures for {} energy bins", v.len(), bins.len())));
                }
                v.iter().all(|c| *c >= 0.0 && c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("exposure must be finite and non-negative".into()))
        }
    }
}

/// Background expected counts.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    None,
    /// `total` expected counts spread evenly over the map.
    Flat { total: f64, rho: f64 },
    /// Expected counts per pixel (all energies), split over bins like a source of index `rho`.
    Map { grid: Grid<f64>, rho: f64 },
    /// Expected counts per (pixel, bin), bin-major: `values[z * npix + pixel]`.
    Cube { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub sources: Vec<SimSource>,
    pub background: Background,
    pub exposure: Exposure,
    pub bins: EnergyBins,
    pub grid: GridSpec,
    pub psf: PsfModel,
    pub thin_to: Option<usize>,
    pub seed: u64,
}

impl SimScenario {
    /// 10 x 10 degree map centred on the origin with 0.05 degree pixels.
    pub fn new(sources: Vec<SimSource>, background: Background, exposure: Exposure) -> Result<Self> {
        let bins = EnergyBins::default();
        let bounds = MapBounds::square(5.0, bins.edges[0], *bins.edges.last().unwrap())?;
        let sc = SimScenario {
            sources,
            background,
            exposure,
            grid: GridSpec::new(bounds, 0.05)?,
            bins,
            psf: PsfModel::default(),
            thin_to: None,
            seed: 0,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn bounds(&self) -> MapBounds<f64> {
        self.grid.bounds
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.edges.windows(2).any(|w| !(w[1] > w[0])) || self.bins.is_empty() {
            return Err(Error::InvalidArgument("energy bin edges must ascend".into()));
        }
        self.exposure.validate(&self.bins)?;
        for (k, s) in self.sources.iter().enumerate() {
            if !(s.f0 >= 0.0 && s.f0.is_finite()) || !(s.rho > 0.0) || !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::InvalidArgument(format!("source {}: need f0 >= 0 and rho > 0", k + 1)));
            }
        }
        let npix = self.grid.len();
        match &self.background {
            Background::None => {}
            Background::Flat { total, rho } => {
                if !(*total >= 0.0) || !(*rho > 0.0) {
                    return Err(Error::InvalidArgument("flat background needs total >= 0 and rho > 0".into()));
                }
            }
            Background::Map { grid, rho } => {
                if grid.spec.nx != self.grid.nx || grid.spec.ny != self.grid.ny {
                    return Err(Error::InvalidArgument(format!(
                        "background template is {}x{}, map is {}x{}",
                        grid.spec.nx, grid.spec.ny, self.grid.nx, self.grid.ny
                    )));
                }
                if grid.values.iter().any(|v| !(*v >= 0.0)) || !(*rho > 0.0) {
                    return Err(Error::InvalidArgument("background template must be non-negative with rho > 0".into()));
                }
            }
            Background::Cube { values } => {
                if values.len() != npix * self.bins.len() {
                    return Err(Error::InvalidArgument(format!(
                        "background cube has {} cells, expected {}",
                        values.len(),
                        npix * self.bins.len()
                    )));
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidArgument("background cube must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len() * self.bins.len()
    }

    /// `E_z^(-rho) * exposure_z` over all bins.
    fn spectral_factors(&self, rho: f64) -> Vec<f64> {
        (0..self.bins.len()).map(|z| self.bins.centroid(z).powf(-rho) * self.exposure.at(&self.bins, z)).collect()
    }

    /// Expected counts of source `s` in pixel `(u, v)` and bin `z`.
    pub fn source_expectation(&self, s: usize, u: usize, v: usize, z: usize) -> Result<f64> {
        let src = &self.sources[s];
        let e = self.bins.centroid(z);
        let (cx, cy) = self.grid.center(u, v);
        let psf = self.psf.at(e)?.raw(cx - src.x, cy - src.y);
        Ok(src.f0 * e.powf(-src.rho) * psf * self.grid.pixel_area() * self.exposure.at(&self.bins, z))
    }

    /// Expected counts of every cell for one component (sources first, background last),
    /// cell index `z * npix + pixel`.
    pub fn component_expectations(&self, component: usize) -> Result<Vec<f64>> {
        let npix = self.grid.len();
        let nz = self.bins.len();
        let mut out = vec![0.0; npix * nz];
        if component < self.sources.len() {
            let src = self.sources[component];
            let area = self.grid.pixel_area();
            let spec = self.spectral_factors(src.rho);
            for z in 0..nz {
                let psf = self.psf.at(self.bins.centroid(z))?;
                let amp = src.f0 * spec[z] * area;
                if amp == 0.0 {
                    continue;
                }
                let slab = &mut out[z * npix..(z + 1) * npix];
                for (p, cell) in slab.iter_mut().enumerate() {
                    let (u, v) = self.grid.cell_xy(p);
                    let (cx, cy) = self.grid.center(u, v);
                    *cell = amp * psf.raw(cx - src.x, cy - src.y);
                }
            }
            return Ok(out);
        }
        if component != self.sources.len() {
            return Err(Error::InvalidArgument(format!("no component {component}")));
        }
        let split = |rho: f64| {
            let f = self.spectral_factors(rho);
            let norm: f64 = f.iter().sum();
            f.into_iter().map(move |v| if norm > 0.0 { v / norm } else { 0.0 })
        };
        match &self.background {
            Background::None => {}
            Background::Flat { total, rho } => {
                let per_pixel = total / npix as f64;
                for (z, w) in split(*rho).enumerate() {
                    out[z * npix..(z + 1) * npix].iter_mut().for_each(|c| *c = per_pixel * w);
                }
            }
            Background::Map { grid, rho } => {
                for (z, w) in split(*rho).enumerate() {
                    for (c, t) in out[z * npix..(z + 1) * npix].iter_mut().zip(&grid.values) {
                        *c = t * w;
                    }
                }
            }
            Background::Cube { values } => out.copy_from_slice(values),
        }
        Ok(out)
    }

    pub fn n_components(&self) -> usize {
        self.sources.len() + 1
    }
}

/// Generating component of a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Truth {
    /// 1-based source number.
    Source(usize),
    Background,
}

impl std::fmt::Display for Truth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truth::Source(k) => write!(f, "source_{k}"),
            Truth::Background => write!(f, "background"),
        }
    }
}

impl std::str::FromStr for Truth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "background" {
            return Ok(Truth::Background);
        }
        s.strip_prefix("source_")
            .and_then(|k| k.parse().ok())
            .filter(|k| *k > 0)
            .map(Truth::Source)
            .ok_or_else(|| format!("bad origin `{s}`"))
    }
}

/// Simulated counts: the total per cell and the sparse per-component split.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCounts {
    pub npix: usize,
    pub nbins: usize,
    /// `counts[z * npix + pixel]`.
    pub counts: Vec<u32>,
    /// Non-zero `(cell, count)` per component, sources first, background last.
    pub by_component: Vec<Vec<(usize, u32)>>,
}

impl SimCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Independent Poisson counts in every cell of `lambda`.
///
/// Drawn as a Poisson total spread multinomially over cells, which has the same
/// law and costs time in the number of counts rather than cells.
fn poisson_cells<R: Rng + ?Sized>(lambda: &[f64], rng: &mut R) -> Result<Vec<(usize, u32)>> {
    let mut cum = Vec::with_capacity(lambda.len());
    let mut acc = 0.0;
    for &l in lambda {
        acc += l;
        cum.push(acc);
    }
    if acc <= 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(acc).map_err(|e| Error::InvalidArgument(format!("Poisson mean {acc}: {e}")))?.sample(rng) as u64;
    let mut cells: Vec<usize> = (0..n)
        .map(|_| {
            let t = rng.random::<f64>() * acc;
            cum.partition_point(|&c| c <= t).min(lambda.len() - 1)
        })
        .collect();
    cells.sort_unstable();
    let mut out: Vec<(usize, u32)> = Vec::new();
    for c in cells {
        match out.last_mut() {
            Some((last, k)) if *last == c => *k += 1,
            _ => out.push((c, 1)),
        }
    }
    Ok(out)
}

pub fn simulate_counts<R: Rng + ?Sized>(sc: &SimScenario, rng: &mut R) -> Result<SimCounts> {
    sc.validate()?;
    let npix = sc.grid.len();
    let mut counts = vec![0u32; sc.n_cells()];
    let mut by_component = Vec::with_capacity(sc.n_components());
    for c in 0..sc.n_components() {
        let cells = poisson_cells(&sc.component_expectations(c)?, rng)?;
        for &(cell, k) in &cells {
            counts[cell] += k;
        }
        by_component.push(cells);
    }
    Ok(SimCounts { npix, nbins: sc.bins.len(), counts, by_component })
}

/// One event per count at its cell centroid, ordered by cell then component.
pub fn counts_to_events(counts: &SimCounts, sc: &SimScenario) -> (Vec<PhotonEvent<f64>>, Vec<Truth>) {
    let n_src = sc.sources.len();
    let mut tagged: Vec<(usize, Truth, u32)> = Vec::new();
    for (c, cells) in counts.by_component.iter().enumerate() {
        let origin = if c < n_src { Truth::Source(c + 1) } else { Truth::Background };
        tagged.extend(cells.iter().map(|&(cell, k)| (cell, origin, k)));
    }
    tagged.sort();
    let mut events = Vec::new();
    let mut truth = Vec::new();
    for (cell, origin, k) in tagged {
        let (z, p) = (cell / counts.npix, cell % counts.npix);
        let (u, v) = sc.grid.cell_xy(p);
        let (x, y) = sc.grid.center(u, v);
        let e = sc.bins.centroid(z);
        for _ in 0..k {
            events.push(PhotonEvent::new(x, y, e));
            truth.push(origin);
        }
    }
    (events, truth)
}

/// Uniform subsample of `target` items without replacement, original order kept.
pub fn thin_events<T: Clone, R: Rng + ?Sized>(items: &[T], target: usize, rng: &mut R) -> Result<Vec<T>> {
    if target > items.len() {
        return Err(Error::InvalidArgument(format!("cannot thin {} events to {target}", items.len())));
    }
    let mut keep = index::sample(rng, items.len(), target).into_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| items[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub events: Vec<PhotonEvent<f64>>,
    pub truth: Vec<Truth>,
}

/// Counts, events and optional thinning in one pass.
pub fn simulate<R: Rng + ?Sized>(sc: &SimScenario, rng: &mut R) -> Result<Simulation> {
    let counts = simulate_counts(sc, rng)?;
    let (events, truth) = counts_to_events(&counts, sc);
    let Some(target) = sc.thin_to else {
        return Ok(Simulation { events, truth });
    };
    let pairs: Vec<(PhotonEvent<f64>, Truth)> = events.into_iter().zip(truth).collect();
    let (events, truth) = thin_events(&pairs, target, rng)?.into_iter().unzip();
    Ok(Simulation { events, truth })
}

pub fn write_truth(path: impl AsRef<Path>, truth: &[Truth]) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "event_index,origin")?;
        for (i, t) in truth.iter().enumerate() {
            writeln!(w, "{i},{t}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<Truth>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (n, line) in crate::io::open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let (i, o) = line.split_once(',').ok_or_else(|| Error::parse(path, n + 1, "expected `event_index,origin`"))?;
        if i.trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(Error::parse(path, n + 1, "event indices must run 0, 1, 2, ..."));
        }
        out.push(o.trim().parse().map_err(|m: String| Error::parse(path, n + 1, m))?);
    }
    Ok(out)
}

/// Read a background cube: `nx ny nz x_min x_max y_min y_max`, then `nz * ny`
/// rows of `nx` values (bin-major, rows from `y_min` upward).
pub fn read_cube(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let mut lines = crate::io::open(path)?.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty cube file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let h: Vec<usize> = header
        .split_whitespace()
        .take(3)
        .map(|s| s.parse().map_err(|_| Error::parse(path, 1, "cube header must start `nx ny nz`")))
        .collect::<Result<_>>()?;
    if h.len() != 3 {
        return Err(Error::parse(path, 1, "cube header must start `nx ny nz`"));
    }
    let (nx, ny, nz) = (h[0], h[1], h[2]);
    let mut values = Vec::with_capacity(nx * ny * nz);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| Error::parse(path, n + 1, format!("bad value `{f}`"))))
            .collect::<Result<_>>()?;
        if row.len() != nx {
            return Err(Error::parse(path, n + 1, format!("expected {nx} values, found {}", row.len())));
        }
        values.extend(row);
    }
    if values.len() != nx * ny * nz {
        return Err(Error::parse(path, 1, format!("expected {} values, found {}", nx * ny * nz, values.len())));
    }
    Ok((nx, ny, nz, values))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ExposureFile {
    Constant(f64),
    PerBin(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundFile {
    kind: String,
    total: Option<f64>,
    rho: Option<f64>,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_half_width")]
    half_width: f64,
    #[serde(default = "default_pixel")]
    pixel_size: f64,
    #[serde(default = "default_e_min")]
    e_min: f64,
    #[serde(default = "default_dex")]
    dex_per_bin: f64,
    #[serde(default = "default_bins")]
    n_energy_bins: usize,
    exposure: ExposureFile,
    #[serde(default)]
    exposure_per_gev: bool,
    thin_to: Option<usize>,
    psf: Option<GaussianPsf<f64>>,
    psf_table: Option<PathBuf>,
    background: Option<BackgroundFile>,
    #[serde(default)]
    source: Vec<SimSource>,
}

fn default_half_width() -> f64 {
    5.0
}
fn default_pixel() -> f64 {
    0.05
}
fn default_e_min() -> f64 {
    1.0
}
fn default_dex() -> f64 {
    0.1
}
fn default_bins() -> usize {
    25
}

/// Parse a TOML scenario. Relative file paths resolve against `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<SimScenario> {
    let f: ScenarioFile = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("scenario: {e}")))?;
    let bins = EnergyBins::log_uniform(f.e_min, f.dex_per_bin, f.n_energy_bins)?;
    let bounds = MapBounds::square(f.half_width, bins.edges[0], *bins.edges.last().unwrap())?;
    let grid = GridSpec::new(bounds, f.pixel_size)?;
    let exposure = match (f.exposure, f.exposure_per_gev) {
        (ExposureFile::Constant(c), false) => Exposure::Constant(c),
        (ExposureFile::Constant(c), true) => Exposure::PerGeV(c),
        (ExposureFile::PerBin(v), false) => Exposure::PerBin(v),
        (ExposureFile::PerBin(_), true) => {
            return Err(Error::InvalidArgument("exposure_per_gev needs a single exposure value".into()))
        }
    };
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let psf = match (f.psf, f.psf_table) {
        (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either psf or psf_table, not both".into())),
        (Some(g), None) => PsfModel::Gaussian(g),
        (None, Some(p)) => PsfModel::Tabulated(TabulatedPsf::read(resolve(&p))?),
        (None, None) => PsfModel::default(),
    };
    let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::InvalidArgument(format!("background needs `{what}`")));
    let background = match f.background {
        None => Background::None,
        Some(b) => match b.kind.as_str() {
            "none" => Background::None,
            "flat" => Background::Flat { total: need(b.total, "total")?, rho: need(b.rho, "rho")? },
            "template" | "cube" => {
                let p = b.path.ok_or_else(|| Error::InvalidArgument(format!("{} background needs `path`", b.kind)))?;
                let p = resolve(&p);
                if !p.exists() {
                    return Err(Error::InvalidArgument(format!("background template {} does not exist", p.display())));
                }
                if b.kind == "template" {
                    Background::Map { grid: crate::io::read_grid(&p, bounds.e_min, bounds.e_max)?, rho: need(b.rho, "rho")? }
                } else {
                    let (nx, ny, nz, values) = read_cube(&p)?;
                    if (nx, ny, nz) != (grid.nx, grid.ny, bins.len()) {
                        return Err(Error::InvalidArgument(format!(
                            "cube is {nx}x{ny}x{nz}, scenario is {}x{}x{}",
                            grid.nx,
                            grid.ny,
                            bins.len()
                        )));
                    }
                    Background::Cube { values }
                }
            }
            other => return Err(Error::InvalidArgument(format!("unknown background kind `{other}`"))),
        },
    };
    let sc = SimScenario { sources: f.source, background, exposure, bins, grid, psf, thin_to: f.thin_to, seed: f.seed };
    sc.validate()?;
    Ok(sc)
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<SimScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}
