//! Cluster kernels: the per-level likelihood, base measure and parameter updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::{
    sample_component_constrained, BackgroundComponent, CubicPieces, EnvelopeConfig, KnotConditional, KnotVector, N_KNOTS,
};
use crate::error::{Error, Result};
use crate::geometry::{MapBounds, PhotonEvent};
use crate::oracle::MicroGroup;
use crate::psf::{PsfAt, PsfModel};

use super::{ChainRng, Diagnostics};

/// Serializable form of one cluster parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamRecord {
    Location { x: f64, y: f64 },
    Background(BackgroundComponent<f64>),
    Atom(usize),
}

/// Likelihood and base measure of one level of the mixture.
pub trait Kernel: Send {
    type Param: Clone + Send;

    /// `q(x_i | param)`.
    fn density(&self, p: &Self::Param, i: usize) -> f64;

    /// Draw from the base measure.
    fn sample_prior(&self, rng: &mut ChainRng, diag: &mut Diagnostics) -> Self::Param;

    /// Parameter of a cluster opened by event `i` through auxiliary value `aux`.
    fn birth(&self, _i: usize, aux: &Self::Param, _rng: &mut ChainRng) -> Self::Param {
        aux.clone()
    }

    /// One update of the parameter given the events currently in the cluster.
    fn update(&self, p: &mut Self::Param, members: &[usize], rng: &mut ChainRng, diag: &mut Diagnostics);

    fn record(&self, p: &Self::Param) -> ParamRecord;

    fn decode_record(&self, r: &ParamRecord) -> Result<Self::Param>;
}

/// How a new source cluster gets its location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SourceBirth {
    /// Draw from the location posterior given the single event.
    #[default]
    PosteriorDraw,
    /// Keep the auxiliary value that was selected.
    AuxValue,
}

/// PSF kernel with a uniform base measure on the map.
pub struct SourceKernel {
    bounds: MapBounds<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    psf: Vec<PsfAt>,
    prop_sd: f64,
    birth: SourceBirth,
}

impl SourceKernel {
    pub fn new(events: &[PhotonEvent<f64>], psf: &PsfModel, bounds: MapBounds<f64>, prop_sd2: f64, birth: SourceBirth) -> Result<Self> {
        let psf = events.iter().map(|e| psf.at(e.energy)).collect::<Result<Vec<_>>>()?;
        Ok(SourceKernel {
            bounds,
            xs: events.iter().map(|e| e.x).collect(),
            ys: events.iter().map(|e| e.y).collect(),
            psf,
            prop_sd: prop_sd2.sqrt(),
            birth,
        })
    }

    #[inline]
    fn log_density(&self, mu: (f64, f64), i: usize) -> f64 {
        let (dx, dy) = (self.xs[i] - mu.0, self.ys[i] - mu.1);
        match &self.psf[i] {
            PsfAt::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                -(dx * dx + dy * dy) / (2.0 * s2)
                    - (2.0 * std::f64::consts::PI * s2).ln()
                    - self.psf[i].map_mass(mu, &self.bounds).ln()
            }
            at => at.density((self.xs[i], self.ys[i]), mu, &self.bounds).ln(),
        }
    }

    /// `min` over the map of the PSF mass inside the map: attained at a corner.
    fn least_mass(&self, at: &PsfAt) -> f64 {
        let b = &self.bounds;
        [(b.x_min, b.y_min), (b.x_min, b.y_max), (b.x_max, b.y_min), (b.x_max, b.y_max)]
            .iter()
            .map(|&c| at.map_mass(c, b))
            .fold(f64::INFINITY, f64::min)
    }
}

impl Kernel for SourceKernel {
    type Param = (f64, f64);

    #[inline]
    fn density(&self, p: &(f64, f64), i: usize) -> f64 {
        self.psf[i].density((self.xs[i], self.ys[i]), *p, &self.bounds)
    }

    fn sample_prior(&self, rng: &mut ChainRng, _diag: &mut Diagnostics) -> (f64, f64) {
        let b = &self.bounds;
        (b.x_min + rng.random::<f64>() * b.width(), b.y_min + rng.random::<f64>() * b.height())
    }

    fn birth(&self, i: usize, aux: &(f64, f64), rng: &mut ChainRng) -> (f64, f64) {
        if self.birth == SourceBirth::AuxValue {
            return *aux;
        }
        // target: psf(x_i | mu) on the map, i.e. raw(x_i - mu) / mass(mu);
        // propose from raw(x_i - mu) truncated to the map and correct by mass
        let at = &self.psf[i];
        let floor = self.least_mass(at);
        let x = (self.xs[i], self.ys[i]);
        for _ in 0..crate::psf::MAX_SAMPLE_ATTEMPTS {
            let Ok(mu) = at.sample(x, &self.bounds, rng) else { break };
            if rng.random::<f64>() * at.map_mass(mu, &self.bounds) <= floor {
                return mu;
            }
        }
        *aux
    }

    fn update(&self, p: &mut (f64, f64), members: &[usize], rng: &mut ChainRng, diag: &mut Diagnostics) {
        let z1: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        let z2: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        let cand = (p.0 + self.prop_sd * z1, p.1 + self.prop_sd * z2);
        let major = members.len() >= super::MAJOR_CLUSTER;
        diag.mh_proposals += 1;
        diag.mh_major_proposals += u64::from(major);
        if !self.bounds.contains(cand.0, cand.1) {
            return;
        }
        let log_a: f64 = members.iter().map(|&i| self.log_density(cand, i) - self.log_density(*p, i)).sum();
        if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
            *p = cand;
            diag.mh_accepts += 1;
            diag.mh_major_accepts += u64::from(major);
        }
    }

    fn record(&self, p: &(f64, f64)) -> ParamRecord {
        ParamRecord::Location { x: p.0, y: p.1 }
    }

    fn decode_record(&self, r: &ParamRecord) -> Result<(f64, f64)> {
        match r {
            ParamRecord::Location { x, y } if self.bounds.contains(*x, *y) => Ok((*x, *y)),
            other => Err(Error::InvalidArgument(format!("not a source location on the map: {other:?}"))),
        }
    }
}

/// Background component with cached cubic pieces per axis.
#[derive(Debug, Clone, Copy)]
pub struct BgParam {
    pub comp: BackgroundComponent<f64>,
    px: CubicPieces<f64>,
    py: CubicPieces<f64>,
}

impl BgParam {
    pub fn new(comp: BackgroundComponent<f64>) -> Self {
        BgParam { px: CubicPieces::new(&comp.ell), py: CubicPieces::new(&comp.b), comp }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.px.eval(x) * self.py.eval(y)
    }
}

/// Bivariate B-spline kernel with the ordered-uniform base measure, restricted to smooth components.
pub struct BackgroundKernel {
    bounds: MapBounds<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    c_ell: f64,
    c_b: f64,
    envelope: EnvelopeConfig,
    fallback: BackgroundComponent<f64>,
}

/// Prior draws attempted per axis before falling back to the widest component.
const PRIOR_ATTEMPTS: usize = 100_000;

impl BackgroundKernel {
    pub fn new(events: &[PhotonEvent<f64>], bounds: MapBounds<f64>, c_ell: f64, c_b: f64, envelope: EnvelopeConfig) -> Result<Self> {
        let fallback = Self::widest(&bounds);
        if !crate::bspline::check_smoothness(&fallback, c_ell, c_b) {
            return Err(Error::InvalidArgument(format!(
                "smoothness floors ({c_ell}, {c_b}) exceed what a map of {} x {} deg allows",
                bounds.width(),
                bounds.height()
            )));
        }
        Ok(BackgroundKernel {
            bounds,
            xs: events.iter().map(|e| e.x).collect(),
            ys: events.iter().map(|e| e.y).collect(),
            c_ell,
            c_b,
            envelope,
            fallback,
        })
    }

    /// Equispaced knots spanning the whole map.
    pub fn widest(bounds: &MapBounds<f64>) -> BackgroundComponent<f64> {
        BackgroundComponent::new(
            KnotVector::equispaced(bounds.x_min, bounds.x_max),
            KnotVector::equispaced(bounds.y_min, bounds.y_max),
        )
    }

    fn update_axis(
        &self,
        kv: &mut KnotVector<f64>,
        coords: &[f64],
        axis: (f64, f64),
        floor: f64,
        rng: &mut ChainRng,
        diag: &mut Diagnostics,
    ) {
        let cond = KnotConditional::new(axis, floor, coords);
        for knot in 0..N_KNOTS {
            match cond.sample(kv, knot, &self.envelope, rng) {
                Ok((v, stats)) => {
                    kv.0[knot] = v;
                    diag.knot_draws += 1;
                    diag.knot_proposals += stats.proposals as u64;
                    diag.envelope_violations += stats.envelope_violations as u64;
                }
                Err(_) => diag.knot_failures += 1,
            }
        }
    }
}

impl Kernel for BackgroundKernel {
    type Param = BgParam;

    #[inline]
    fn density(&self, p: &BgParam, i: usize) -> f64 {
        p.eval(self.xs[i], self.ys[i])
    }

    fn sample_prior(&self, rng: &mut ChainRng, diag: &mut Diagnostics) -> BgParam {
        let b = &self.bounds;
        match sample_component_constrained(b.x_axis(), b.y_axis(), self.c_ell, self.c_b, None, PRIOR_ATTEMPTS, rng) {
            Some(c) => BgParam::new(c),
            None => {
                diag.prior_fallbacks += 1;
                BgParam::new(self.fallback)
            }
        }
    }

    fn update(&self, p: &mut BgParam, members: &[usize], rng: &mut ChainRng, diag: &mut Diagnostics) {
        if members.is_empty() {
            *p = self.sample_prior(rng, diag);
            return;
        }
        let xs: Vec<f64> = members.iter().map(|&i| self.xs[i]).collect();
        let ys: Vec<f64> = members.iter().map(|&i| self.ys[i]).collect();
        let mut comp = p.comp;
        self.update_axis(&mut comp.ell, &xs, self.bounds.x_axis(), self.c_ell, rng, diag);
        self.update_axis(&mut comp.b, &ys, self.bounds.y_axis(), self.c_b, rng, diag);
        *p = BgParam::new(comp);
    }

    fn record(&self, p: &BgParam) -> ParamRecord {
        ParamRecord::Background(p.comp)
    }

    fn decode_record(&self, r: &ParamRecord) -> Result<BgParam> {
        match r {
            ParamRecord::Background(c) if c.ell.is_ascending() && c.b.is_ascending() => Ok(BgParam::new(*c)),
            other => Err(Error::InvalidArgument(format!("not a background component: {other:?}"))),
        }
    }
}

/// Finite-atom kernel on discrete cells, used to check the sampler against exact enumeration.
pub struct DiscreteKernel {
    group: MicroGroup,
    cells: Vec<usize>,
}

impl DiscreteKernel {
    pub fn new(group: MicroGroup, cells: Vec<usize>) -> Self {
        DiscreteKernel { group, cells }
    }

    fn draw_weighted(weights: &[f64], rng: &mut ChainRng) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        weights.len() - 1
    }
}

impl Kernel for DiscreteKernel {
    type Param = usize;

    fn density(&self, a: &usize, i: usize) -> f64 {
        self.group.density[*a][self.cells[i]]
    }

    fn sample_prior(&self, rng: &mut ChainRng, _diag: &mut Diagnostics) -> usize {
        Self::draw_weighted(&self.group.prior, rng)
    }

    fn update(&self, a: &mut usize, members: &[usize], rng: &mut ChainRng, _diag: &mut Diagnostics) {
        let w: Vec<f64> = self
            .group
            .prior
            .iter()
            .zip(&self.group.density)
            .map(|(p, d)| p * members.iter().map(|&i| d[self.cells[i]]).product::<f64>())
            .collect();
        *a = Self::draw_weighted(&w, rng);
    }

    fn record(&self, a: &usize) -> ParamRecord {
        ParamRecord::Atom(*a)
    }

    fn decode_record(&self, r: &ParamRecord) -> Result<usize> {
        match r {
            ParamRecord::Atom(a) if *a < self.group.prior.len() => Ok(*a),
            other => Err(Error::InvalidArgument(format!("not an atom index: {other:?}"))),
        }
    }
}
