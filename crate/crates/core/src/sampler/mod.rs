//! Collapsed Gibbs sampler for the two-level source/background mixture.
//!
//! Level 0 holds point sources (PSF kernels, uniform base measure on the map),
//! level 1 holds background components (bivariate B-spline kernels). The
//! engine in [`engine`] is written for any number of levels.

pub mod engine;
pub mod kernels;
pub mod level;
pub mod trace;
pub mod weights;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::{BackgroundComponent, EnvelopeConfig};
use crate::error::{Error, Result};
use crate::geometry::{Hyperparameters, MapBounds, PhotonEvent};
use crate::psf::PsfModel;
use crate::spectral::GammaParams;

pub use engine::{AuxRefresh, Gibbs, SpectralLevels};
pub use kernels::{BackgroundKernel, BgParam, DiscreteKernel, Kernel, ParamRecord, SourceBirth, SourceKernel};
pub use level::{Level, LevelOps, ABSENT};
pub use trace::{read_trace, write_trace, BackgroundDraw, SourceDraw, Trace, TraceRecord, TraceWriter};
pub use weights::{recover_weights, stick_breaking, RecoveredWeights};

pub type ChainRng = ChaCha8Rng;

pub const SOURCE: usize = 0;
pub const BACKGROUND: usize = 1;

/// Cluster size from which a source counts as bright in the acceptance diagnostics.
pub const MAJOR_CLUSTER: usize = 100;

/// Running counters kept by a chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sweeps: u64,
    pub mh_proposals: u64,
    pub mh_accepts: u64,
    /// Proposals and acceptances restricted to clusters with at least [`MAJOR_CLUSTER`] members.
    pub mh_major_proposals: u64,
    pub mh_major_accepts: u64,
    pub knot_draws: u64,
    pub knot_proposals: u64,
    pub envelope_violations: u64,
    pub knot_failures: u64,
    pub prior_fallbacks: u64,
    pub births: u64,
    pub underflows: u64,
}

impl Diagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.mh_proposals == 0 {
            f64::NAN
        } else {
            self.mh_accepts as f64 / self.mh_proposals as f64
        }
    }

    pub fn major_acceptance_rate(&self) -> f64 {
        if self.mh_major_proposals == 0 {
            f64::NAN
        } else {
            self.mh_major_accepts as f64 / self.mh_major_proposals as f64
        }
    }

    /// Counter-wise difference, for rates over a window of sweeps.
    pub fn since(&self, earlier: &Diagnostics) -> Diagnostics {
        Diagnostics {
            sweeps: self.sweeps - earlier.sweeps,
            mh_proposals: self.mh_proposals - earlier.mh_proposals,
            mh_accepts: self.mh_accepts - earlier.mh_accepts,
            mh_major_proposals: self.mh_major_proposals - earlier.mh_major_proposals,
            mh_major_accepts: self.mh_major_accepts - earlier.mh_major_accepts,
            knot_draws: self.knot_draws - earlier.knot_draws,
            knot_proposals: self.knot_proposals - earlier.knot_proposals,
            envelope_violations: self.envelope_violations - earlier.envelope_violations,
            knot_failures: self.knot_failures - earlier.knot_failures,
            prior_fallbacks: self.prior_fallbacks - earlier.prior_fallbacks,
            births: self.births - earlier.births,
            underflows: self.underflows - earlier.underflows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ModelKind {
    /// Positions only.
    #[default]
    Spatial,
    /// Positions and Pareto energies.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub aux_refresh: AuxRefresh,
    pub source_birth: SourceBirth,
    pub envelope: EnvelopeConfig,
    pub random_scan: bool,
    pub record_weights: bool,
    pub record_background: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            aux_refresh: AuxRefresh::PerSweep,
            source_birth: SourceBirth::PosteriorDraw,
            envelope: EnvelopeConfig::fast(),
            random_scan: false,
            record_weights: false,
            record_background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub hyper: Hyperparameters,
    pub psf: PsfModel,
    pub bounds: MapBounds<f64>,
    pub iterations: usize,
    /// Record every `thin`-th iteration.
    pub thin: usize,
    pub seed: u64,
    pub options: SamplerOptions,
}

impl FitConfig {
    pub fn new(bounds: MapBounds<f64>) -> Self {
        FitConfig {
            model: ModelKind::Spatial,
            hyper: Hyperparameters::default(),
            psf: PsfModel::default(),
            bounds,
            iterations: 1000,
            thin: 1,
            seed: 0,
            options: SamplerOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Source,
    Background,
}

/// Latent state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub iteration: u64,
    pub z: Vec<Origin>,
    /// Source cluster of each event, 1-based; 0 for background events.
    pub h_s: Vec<u32>,
    /// Background cluster of each event, 1-based; 0 for source events.
    pub h_b: Vec<u32>,
    pub mus: Vec<(f64, f64)>,
    pub bg_comps: Vec<BackgroundComponent<f64>>,
    /// `NaN` under the spatial-only model (stored as `null`).
    #[serde(deserialize_with = "null_as_nan")]
    pub eta_s: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub eta_b: f64,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl ChainState {
    pub fn k_s(&self) -> usize {
        self.mus.len()
    }

    pub fn k_b(&self) -> usize {
        self.bg_comps.len()
    }

    pub fn n_source(&self) -> usize {
        self.z.iter().filter(|o| **o == Origin::Source).count()
    }

    fn tally(h: &[u32], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &l in h {
            if l > 0 && (l as usize) <= k {
                c[l as usize - 1] += 1;
            }
        }
        c
    }

    pub fn source_counts(&self) -> Vec<usize> {
        Self::tally(&self.h_s, self.k_s())
    }

    pub fn background_counts(&self) -> Vec<usize> {
        Self::tally(&self.h_b, self.k_b())
    }

    /// Label consistency, dense 1-based indexing and non-empty clusters.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.z.len();
        if self.h_s.len() != n || self.h_b.len() != n {
            return Err(Error::Degenerate("label vectors differ in length".into()));
        }
        for i in 0..n {
            let ok = match self.z[i] {
                Origin::Source => self.h_s[i] > 0 && self.h_b[i] == 0,
                Origin::Background => self.h_b[i] > 0 && self.h_s[i] == 0,
            };
            if !ok {
                return Err(Error::Degenerate(format!("event {i}: labels disagree with its origin")));
            }
            if self.h_s[i] as usize > self.k_s() || self.h_b[i] as usize > self.k_b() {
                return Err(Error::Degenerate(format!("event {i}: cluster index beyond cluster count")));
            }
        }
        if self.source_counts().contains(&0) || self.background_counts().contains(&0) {
            return Err(Error::Degenerate("empty cluster".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: ChainState,
    pub rng: ChainRng,
    pub weight_rng: ChainRng,
    pub diagnostics: Diagnostics,
}

impl Snapshot {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let w = crate::io::create(path)?;
        serde_json::to_writer(w, self).map_err(|e| Error::io(path, e.into()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let r = crate::io::open(path)?;
        serde_json::from_reader(r).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// One chain of the source/background sampler.
pub struct Chain {
    gibbs: Gibbs,
    cfg: FitConfig,
    iteration: u64,
    weight_rng: ChainRng,
}

fn to_internal(h: &[u32]) -> Vec<u32> {
    h.iter().map(|&l| if l == 0 { ABSENT } else { l - 1 }).collect()
}

fn to_external(h: &[u32]) -> Vec<u32> {
    h.iter().map(|&l| if l == ABSENT { 0 } else { l + 1 }).collect()
}

impl Chain {
    /// Start with every event in a single background component spanning the map.
    pub fn new(events: &[PhotonEvent<f64>], cfg: &FitConfig) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::InvalidArgument("no events to fit".into()));
        }
        cfg.bounds.validate()?;
        cfg.hyper.validate()?;
        if cfg.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        for (i, e) in events.iter().enumerate() {
            e.check(&cfg.bounds, i)?;
        }
        let n = events.len();
        let h = &cfg.hyper;
        let src = SourceKernel::new(events, &cfg.psf, cfg.bounds, h.prop_sd2, cfg.options.source_birth)?;
        let bg = BackgroundKernel::new(events, cfg.bounds, h.c_ell, h.c_b, cfg.options.envelope)?;
        let src_level = Level::new(src, h.alpha_s, h.h_s, n);
        let mut bg_level = Level::new(bg, h.alpha_b, h.h_b, n);
        let all: Vec<usize> = (0..n).collect();
        bg_level.seed_cluster(BgParam::new(BackgroundKernel::widest(&cfg.bounds)), &all);

        let spectral = match cfg.model {
            ModelKind::Spatial => None,
            ModelKind::Joint => {
                let priors = vec![GammaParams::new(h.a_eta_s, h.b_eta_s), GammaParams::new(h.a_eta_b, h.b_eta_b)];
                let eta = priors.iter().map(|p| if p.shape > 1.0 { p.mode() } else { p.mean() }).collect();
                Some(SpectralLevels { energies: events.iter().map(|e| e.energy).collect(), e_min: cfg.bounds.e_min, priors, eta })
            }
        };
        let rng = ChainRng::seed_from_u64(cfg.seed);
        let mut weight_rng = ChainRng::seed_from_u64(cfg.seed);
        weight_rng.set_stream(1);
        let mut gibbs = Gibbs::new(vec![Box::new(src_level), Box::new(bg_level)], h.lambda, spectral, rng)?;
        gibbs.aux_refresh = cfg.options.aux_refresh;
        gibbs.random_scan = cfg.options.random_scan;
        Ok(Chain { gibbs, cfg: cfg.clone(), iteration: 0, weight_rng })
    }

    /// Continue from a saved snapshot.
    pub fn resume(events: &[PhotonEvent<f64>], cfg: &FitConfig, snap: &Snapshot) -> Result<Self> {
        let mut chain = Chain::new(events, cfg)?;
        let st = &snap.state;
        if st.z.len() != events.len() {
            return Err(Error::InvalidArgument(format!("snapshot holds {} events, data has {}", st.z.len(), events.len())));
        }
        st.check_invariants()?;
        let src: Vec<ParamRecord> = st.mus.iter().map(|&(x, y)| ParamRecord::Location { x, y }).collect();
        let bg: Vec<ParamRecord> = st.bg_comps.iter().map(|c| ParamRecord::Background(*c)).collect();
        chain.gibbs.levels_mut()[SOURCE].restore(&to_internal(&st.h_s), &src)?;
        chain.gibbs.levels_mut()[BACKGROUND].restore(&to_internal(&st.h_b), &bg)?;
        chain.gibbs.resync(snap.rng.clone())?;
        if cfg.model == ModelKind::Joint {
            chain.gibbs.set_eta(&[st.eta_s, st.eta_b])?;
        }
        chain.gibbs.set_diagnostics(snap.diagnostics);
        chain.weight_rng = snap.weight_rng.clone();
        chain.iteration = st.iteration;
        Ok(chain)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    pub fn gibbs(&self) -> &Gibbs {
        &self.gibbs
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        self.gibbs.diagnostics()
    }

    pub fn step(&mut self) -> Result<()> {
        self.gibbs.sweep()?;
        self.iteration += 1;
        Ok(())
    }

    pub fn state(&self) -> ChainState {
        let levels = self.gibbs.levels();
        let mus = levels[SOURCE]
            .records()
            .into_iter()
            .map(|r| match r {
                ParamRecord::Location { x, y } => (x, y),
                _ => unreachable!("source level holds locations"),
            })
            .collect();
        let bg_comps = levels[BACKGROUND]
            .records()
            .into_iter()
            .map(|r| match r {
                ParamRecord::Background(c) => c,
                _ => unreachable!("background level holds components"),
            })
            .collect();
        let z = self.gibbs.z().iter().map(|&j| if j as usize == SOURCE { Origin::Source } else { Origin::Background }).collect();
        let (eta_s, eta_b) = self.gibbs.eta().map_or((f64::NAN, f64::NAN), |e| (e[SOURCE], e[BACKGROUND]));
        ChainState {
            iteration: self.iteration,
            z,
            h_s: to_external(levels[SOURCE].labels()),
            h_b: to_external(levels[BACKGROUND].labels()),
            mus,
            bg_comps,
            eta_s,
            eta_b,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.state(),
            rng: self.gibbs.rng().clone(),
            weight_rng: self.weight_rng.clone(),
            diagnostics: *self.gibbs.diagnostics(),
        }
    }

    /// Trace record of the current state; draws weights from a separate stream when enabled.
    pub fn record(&mut self) -> TraceRecord {
        let st = self.state();
        let w = self.cfg.options.record_weights.then(|| recover_weights(&st, &self.cfg.hyper, &mut self.weight_rng));
        let sc = st.source_counts();
        let bc = st.background_counts();
        let sources = st
            .mus
            .iter()
            .enumerate()
            .map(|(l, &(x, y))| SourceDraw { x, y, count: sc[l], weight: w.as_ref().map(|w| w.source[l]) })
            .collect();
        let background = if self.cfg.options.record_background {
            st.bg_comps
                .iter()
                .enumerate()
                .map(|(l, &comp)| BackgroundDraw { comp, count: bc[l], weight: w.as_ref().map(|w| w.background[l]) })
                .collect()
        } else {
            Vec::new()
        };
        TraceRecord {
            iter: st.iteration,
            k_s: st.k_s(),
            k_b: st.k_b(),
            eta_s: st.eta_s,
            eta_b: st.eta_b,
            n_src: st.n_source(),
            sources,
            background,
            delta: w.map(|w| w.delta),
        }
    }

    /// Run until `until` total iterations, passing every retained record to `sink`.
    pub fn run_to(&mut self, until: u64, mut sink: impl FnMut(&TraceRecord) -> Result<()>) -> Result<()> {
        while self.iteration < until {
            self.step()?;
            if self.iteration.is_multiple_of(self.cfg.thin as u64) {
                let r = self.record();
                sink(&r)?;
            }
        }
        Ok(())
    }
}

/// Run one chain from scratch and collect its trace.
pub fn run_chain(events: &[PhotonEvent<f64>], cfg: &FitConfig) -> Result<Trace> {
    let mut chain = Chain::new(events, cfg)?;
    let mut records = Vec::new();
    chain.run_to(cfg.iterations as u64, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok(Trace { records, diagnostics: *chain.diagnostics() })
}

/// Recommended smoothness floors from a background-only fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessFloors {
    pub c_ell: f64,
    pub c_b: f64,
}

/// Fit the background level alone and return the 20th percentile of the per-axis
/// kernel standard deviations over all components of the retained iterations.
/// The floors in `cfg.hyper` still constrain this fit, so keep them small.
pub fn tune_smoothness(events: &[PhotonEvent<f64>], cfg: &FitConfig, burn_in_fraction: f64) -> Result<SmoothnessFloors> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("no events to fit".into()));
    }
    for (i, e) in events.iter().enumerate() {
        e.check(&cfg.bounds, i)?;
    }
    let h = &cfg.hyper;
    let bg = BackgroundKernel::new(events, cfg.bounds, h.c_ell, h.c_b, cfg.options.envelope)?;
    let mut level = Level::new(bg, h.alpha_b, h.h_b, events.len());
    let all: Vec<usize> = (0..events.len()).collect();
    level.seed_cluster(BgParam::new(BackgroundKernel::widest(&cfg.bounds)), &all);
    let mut gibbs = Gibbs::new(vec![Box::new(level)], h.lambda, None, ChainRng::seed_from_u64(cfg.seed))?;
    gibbs.aux_refresh = cfg.options.aux_refresh;
    let skip = (cfg.iterations as f64 * burn_in_fraction).floor() as usize;
    let (mut sd_ell, mut sd_b) = (Vec::new(), Vec::new());
    for t in 0..cfg.iterations {
        gibbs.sweep()?;
        if t < skip {
            continue;
        }
        for r in gibbs.levels()[0].records() {
            if let ParamRecord::Background(c) = r {
                sd_ell.push(c.ell.sd());
                sd_b.push(c.b.sd());
            }
        }
    }
    if sd_ell.is_empty() {
        return Err(Error::InvalidArgument("no iterations left after burn-in".into()));
    }
    Ok(SmoothnessFloors { c_ell: percentile(&mut sd_ell, 0.2), c_b: percentile(&mut sd_b, 0.2) })
}

/// Lower empirical quantile: the `ceil(q * n)`-th smallest value.
fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}
