//! Turning pooled posterior source locations into source regions.
//!
//! Draws from all chains (after burn-in) are pooled on a pixel grid, the
//! highest local maxima seed candidate regions, each region is grown greedily
//! until its presence probability reaches `p_star`, and draws are then
//! relabelled by region to summarise counts and intensities.

mod hpd;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, GridSpec, PixelGrid};
use crate::sampler::TraceRecord;

pub use hpd::{hpd_interval, IntensitySummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub pixel_size: f64,
    pub p_star: f64,
    /// Side of the square window (in pixels) a region may grow into.
    pub d_r: usize,
    /// Leading fraction of each chain discarded.
    pub burn_in_fraction: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig { pixel_size: 0.05, p_star: 0.95, d_r: 3, burn_in_fraction: 0.75 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size > 0.0) {
            return Err(Error::InvalidArgument(format!("pixel size must be positive, got {}", self.pixel_size)));
        }
        if !(self.p_star > 0.0 && self.p_star <= 1.0) {
            return Err(Error::InvalidArgument(format!("p_star must be in (0, 1], got {}", self.p_star)));
        }
        if self.d_r == 0 {
            return Err(Error::InvalidArgument("d_R must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidArgument(format!("burn-in fraction must be in [0, 1), got {}", self.burn_in_fraction)));
        }
        Ok(())
    }
}

/// Records left after dropping the leading `fraction` of a chain.
pub fn discard_burn_in(records: &[TraceRecord], fraction: f64) -> &[TraceRecord] {
    let skip = (records.len() as f64 * fraction).floor() as usize;
    &records[skip.min(records.len())..]
}

/// Retained iterations of all chains, with every source draw located on the grid.
#[derive(Debug, Clone)]
pub struct PooledDraws<'a> {
    pub spec: GridSpec,
    pub iterations: Vec<&'a TraceRecord>,
    /// Pixel of each draw, per iteration (same order as `sources`).
    pub pixels: Vec<Vec<usize>>,
}

impl<'a> PooledDraws<'a> {
    pub fn new(chains: &[&'a [TraceRecord]], spec: GridSpec) -> Result<Self> {
        let iterations: Vec<&TraceRecord> = chains.iter().flat_map(|c| c.iter()).collect();
        if iterations.is_empty() {
            return Err(Error::InvalidArgument("no retained iterations to post-process".into()));
        }
        let b = spec.bounds;
        let mut pixels = Vec::with_capacity(iterations.len());
        for r in &iterations {
            let mut px = Vec::with_capacity(r.sources.len());
            for s in &r.sources {
                if !b.contains(s.x, s.y) {
                    return Err(Error::InvalidArgument(format!("source draw ({}, {}) at iteration {} is off the map", s.x, s.y, r.iter)));
                }
                px.push(spec.cell(s.x, s.y));
            }
            pixels.push(px);
        }
        Ok(PooledDraws { spec, iterations, pixels })
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// Pixel counts of all pooled source-location draws.
pub fn pool_draws(draws: &PooledDraws<'_>) -> PixelGrid {
    let mut grid = PixelGrid::zeros(draws.spec);
    for px in draws.pixels.iter().flatten() {
        grid.values[*px] += 1;
    }
    grid
}

/// Most frequent number of sources across retained iterations; ties go to the smaller count.
pub fn map_k_star(draws: &PooledDraws<'_>) -> usize {
    let mut freq: HashMap<usize, usize> = HashMap::new();
    for r in &draws.iterations {
        *freq.entry(r.k_s).or_default() += 1;
    }
    freq.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map_or(0, |(k, _)| k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    /// Seed pixels, best first.
    pub seeds: Vec<usize>,
    /// Fewer local maxima than requested.
    pub shortfall: bool,
}

fn neighbourhood_sum(grid: &PixelGrid, p: usize) -> u64 {
    grid.values[p] + grid.spec.neighbours(p).map(|q| grid.values[q]).sum::<u64>()
}

/// The `k_star` highest local maxima of the pooled grid.
///
/// Pixels are ordered by (count, 3x3 neighbourhood sum, lower row-major index);
/// a local maximum beats all 8 neighbours in that order, which reduces to the
/// strict count rule away from plateaus.
pub fn find_candidate_regions(grid: &PixelGrid, k_star: usize) -> Candidates {
    let key = |p: usize| (grid.values[p], neighbourhood_sum(grid, p), std::cmp::Reverse(p));
    let mut maxima: Vec<usize> = (0..grid.values.len())
        .filter(|&p| grid.values[p] > 0 && grid.spec.neighbours(p).all(|q| key(p) > key(q)))
        .collect();
    maxima.sort_by_key(|&p| std::cmp::Reverse(key(p)));
    let shortfall = maxima.len() < k_star;
    maxima.truncate(k_star);
    Candidates { seeds: maxima, shortfall }
}

/// Fraction of retained iterations with at least one draw inside `pixels`.
pub fn region_presence_probability(pixels: &[usize], draws: &PooledDraws<'_>) -> f64 {
    if draws.is_empty() {
        return 0.0;
    }
    let set: std::collections::HashSet<usize> = pixels.iter().copied().collect();
    let hit = draws.pixels.iter().filter(|px| px.iter().any(|p| set.contains(p))).count();
    hit as f64 / draws.len() as f64
}

/// Pixels of the `d_r` x `d_r` window around `seed`, clipped to the grid.
pub fn window(spec: &GridSpec, seed: usize, d_r: usize) -> Vec<usize> {
    let (c, r) = spec.cell_xy(seed);
    let lo = (d_r - 1) / 2;
    let hi = d_r - 1 - lo;
    let mut out = Vec::new();
    for row in r.saturating_sub(lo)..=(r + hi).min(spec.ny - 1) {
        for col in c.saturating_sub(lo)..=(c + hi).min(spec.nx - 1) {
            out.push(row * spec.nx + col);
        }
    }
    out
}

/// Grow a region from `seed` inside its window, adding at each step the adjacent
/// pixel with the largest presence gain (lower index on ties), until the presence
/// probability reaches `p_star` or no pixel is left. Pixels in `taken` are skipped.
pub fn grow_region(
    seed: usize,
    draws: &PooledDraws<'_>,
    p_star: f64,
    d_r: usize,
    taken: &std::collections::HashSet<usize>,
) -> (Vec<usize>, f64) {
    let spec = &draws.spec;
    let allowed: Vec<usize> = window(spec, seed, d_r).into_iter().filter(|p| *p == seed || !taken.contains(p)).collect();
    // iterations hit by each allowed pixel
    let mut hits: HashMap<usize, Vec<usize>> = allowed.iter().map(|&p| (p, Vec::new())).collect();
    for (t, px) in draws.pixels.iter().enumerate() {
        for p in px {
            if let Some(v) = hits.get_mut(p) {
                if v.last() != Some(&t) {
                    v.push(t);
                }
            }
        }
    }
    let n = draws.len().max(1) as f64;
    let mut covered = vec![false; draws.len()];
    let mut n_covered = 0usize;
    let mut add = |p: usize, covered: &mut Vec<bool>| {
        for &t in &hits[&p] {
            if !covered[t] {
                covered[t] = true;
                n_covered += 1;
            }
        }
        n_covered
    };
    let mut region = vec![seed];
    let mut prob = add(seed, &mut covered) as f64 / n;
    while prob < p_star {
        let mut best: Option<(usize, usize)> = None;
        for &p in &allowed {
            if region.contains(&p) || !spec.neighbours(p).any(|q| region.contains(&q)) {
                continue;
            }
            let gain = hits[&p].iter().filter(|&&t| !covered[t]).count();
            if best.is_none_or(|(bg, bp)| gain > bg || (gain == bg && p < bp)) {
                best = Some((gain, p));
            }
        }
        let Some((_, p)) = best else { break };
        region.push(p);
        prob = add(p, &mut covered) as f64 / n;
    }
    region.sort_unstable();
    (region, prob)
}

/// Region label of every draw: `m` (1-based) inside region `m`, 0 elsewhere.
pub fn relabel(draws: &PooledDraws<'_>, regions: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (m, px) in regions.iter().enumerate() {
        for &p in px {
            if owner.insert(p, m + 1).is_some() {
                return Err(Error::InvalidArgument(format!("pixel {p} belongs to more than one region")));
            }
        }
    }
    Ok(draws.pixels.iter().map(|px| px.iter().map(|p| owner.get(p).copied().unwrap_or(0)).collect()).collect())
}

/// `P(K = k | K > 0)` for `k = 1, 2, ...` (index `k - 1`), from per-iteration draw counts in region `m`.
pub fn conditional_count_distribution(m: usize, labels: &[Vec<usize>]) -> Result<Vec<f64>> {
    let counts: Vec<usize> = labels.iter().map(|l| l.iter().filter(|&&x| x == m).count()).filter(|&k| k > 0).collect();
    if counts.is_empty() {
        return Err(Error::InvalidArgument(format!("region {m} never holds a draw")));
    }
    let max = *counts.iter().max().unwrap();
    let mut dist = vec![0.0; max];
    for k in &counts {
        dist[k - 1] += 1.0;
    }
    let n = counts.len() as f64;
    dist.iter_mut().for_each(|v| *v /= n);
    Ok(dist)
}

/// Relative intensity `delta * w` in iterations where region `m` holds exactly one cluster.
pub fn relative_intensities(m: usize, draws: &PooledDraws<'_>, labels: &[Vec<usize>]) -> Option<IntensitySummary> {
    let mut samples = Vec::new();
    for (r, l) in draws.iterations.iter().zip(labels) {
        let inside: Vec<usize> = l.iter().enumerate().filter(|(_, &x)| x == m).map(|(k, _)| k).collect();
        if inside.len() != 1 {
            continue;
        }
        if let (Some(delta), Some(w)) = (r.delta, r.sources[inside[0]].weight) {
            samples.push(delta * w);
        }
    }
    IntensitySummary::from_samples(&samples)
}

/// Per-pixel location probabilities from iterations with exactly one draw in region `m`.
pub fn location_posterior(m: usize, region: &[usize], draws: &PooledDraws<'_>, labels: &[Vec<usize>]) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, usize> = region.iter().map(|&p| (p, 0)).collect();
    let mut total = 0usize;
    for (px, l) in draws.pixels.iter().zip(labels) {
        let inside: Vec<usize> = l.iter().enumerate().filter(|(_, &x)| x == m).map(|(k, _)| k).collect();
        if inside.len() == 1 {
            *counts.get_mut(&px[inside[0]]).expect("labelled draw lies in its region") += 1;
            total += 1;
        }
    }
    let mut out: Vec<(usize, f64)> =
        counts.into_iter().map(|(p, c)| (p, if total == 0 { 0.0 } else { c as f64 / total as f64 })).collect();
    out.sort_by_key(|e| e.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub seed: usize,
    pub pixels: Vec<usize>,
    pub presence_prob: f64,
    /// `P(K = k | K > 0)` at index `k - 1`.
    pub count_dist: Vec<f64>,
    pub location_posterior: Vec<(usize, f64)>,
    pub intensity: Option<IntensitySummary>,
    /// Mean location of the draws falling inside the region.
    pub centroid: (f64, f64),
}

impl Region {
    /// Probability of more than one source in the region given at least one.
    pub fn p_multi(&self) -> f64 {
        self.count_dist.iter().skip(1).fold(0.0, |a, p| a + p)
    }

    pub fn contains(&self, spec: &GridSpec, x: f64, y: f64) -> bool {
        spec.bounds.contains(x, y) && self.pixels.binary_search(&spec.cell(x, y)).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k_star: usize,
    pub shortfall: bool,
    pub regions: Vec<Region>,
}

/// Full region analysis of pooled draws.
pub fn analyse(draws: &PooledDraws<'_>, cfg: &PostprocessConfig) -> Result<Report> {
    cfg.validate()?;
    let grid = pool_draws(draws);
    let k_star = map_k_star(draws);
    let cand = find_candidate_regions(&grid, k_star);
    // seeds are reserved up front; other contested pixels go to the earlier region
    let mut taken: std::collections::HashSet<usize> = cand.seeds.iter().copied().collect();
    let mut grown = Vec::with_capacity(cand.seeds.len());
    for &seed in &cand.seeds {
        let (px, prob) = grow_region(seed, draws, cfg.p_star, cfg.d_r, &taken);
        taken.extend(px.iter().copied());
        grown.push((seed, px, prob));
    }
    let pixel_sets: Vec<Vec<usize>> = grown.iter().map(|g| g.1.clone()).collect();
    let labels = relabel(draws, &pixel_sets)?;
    let mut regions = Vec::with_capacity(grown.len());
    for (k, (seed, pixels, prob)) in grown.into_iter().enumerate() {
        let m = k + 1;
        let count_dist = conditional_count_distribution(m, &labels).unwrap_or_default();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (r, l) in draws.iterations.iter().zip(&labels) {
            for (s, &lab) in r.sources.iter().zip(l) {
                if lab == m {
                    sx += s.x;
                    sy += s.y;
                    n += 1;
                }
            }
        }
        let centroid = if n > 0 { (sx / n as f64, sy / n as f64) } else { {
            let (c, r) = draws.spec.cell_xy(seed);
            draws.spec.center(c, r)
        } };
        regions.push(Region {
            id: m,
            seed,
            location_posterior: location_posterior(m, &pixels, draws, &labels),
            intensity: relative_intensities(m, draws, &labels),
            pixels,
            presence_prob: prob,
            count_dist,
            centroid,
        });
    }
    Ok(Report { k_star, shortfall: cand.shortfall, regions })
}

/// Monte Carlo background map: per iteration, every background component emits
/// as many photons as it holds; pixel counts are averaged over iterations.
pub fn posterior_background_map<R: Rng + ?Sized>(records: &[&TraceRecord], spec: GridSpec, rng: &mut R) -> Result<Grid<f64>> {
    let mut acc = vec![0u64; spec.len()];
    let mut used = 0usize;
    for r in records {
        if r.background.is_empty() && r.k_b > 0 {
            return Err(Error::InvalidArgument(format!(
                "iteration {} has no background components recorded; enable background recording",
                r.iter
            )));
        }
        for b in &r.background {
            for _ in 0..b.count {
                let (x, y) = b.comp.sample(rng);
                if spec.bounds.contains(x, y) {
                    acc[spec.cell(x, y)] += 1;
                }
            }
        }
        used += 1;
    }
    let norm = if used == 0 { 0.0 } else { 1.0 / used as f64 };
    Ok(Grid { spec, values: acc.into_iter().map(|c| c as f64 * norm).collect() })
}

pub const REGION_HEADER: &str =
    "region_id,n_pixels,presence_prob,p_multi,intensity_mean,hpd68_lo,hpd68_hi,hpd95_lo,hpd95_hi,centroid_x,centroid_y";

pub fn write_regions(path: impl AsRef<Path>, regions: &[Region]) -> Result<()> {
    let path = path.as_ref();
    let mut w = crate::io::create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{REGION_HEADER}").map_err(io)?;
    for r in regions {
        let intensity = match &r.intensity {
            Some(s) => format!("{},{},{},{},{}", s.mean, s.hpd68.0, s.hpd68.1, s.hpd95.0, s.hpd95.1),
            None => "NA,NA,NA,NA,NA".to_string(),
        };
        writeln!(w, "{},{},{},{},{},{},{}", r.id, r.pixels.len(), r.presence_prob, r.p_multi(), intensity, r.centroid.0, r.centroid.1)
            .map_err(io)?;
    }
    w.flush().map_err(io)
}
