//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys are rejected by name.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bspline::EnvelopeConfig;
use crate::error::{Error, Result};
use crate::geometry::MapBounds;
use crate::postprocess::PostprocessConfig;
use crate::psf::{GaussianPsf, PsfModel, TabulatedPsf};
use crate::sampler::{AuxRefresh, FitConfig, ModelKind, SourceBirth};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub chains: usize,
    pub post: PostprocessConfig,
    /// Path of a tabulated PSF, when one replaces the Gaussian.
    pub psf_table: Option<std::path::PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bounds = MapBounds::square(5.0, 1.0, 10f64.powf(2.5)).expect("valid default map");
        RunConfig { fit: FitConfig::new(bounds), chains: 4, post: PostprocessConfig::default(), psf_table: None }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("bad value `{value}` for `{key}`, expected true or false")),
    }
}

pub fn parse_model(value: &str) -> Result<ModelKind> {
    match value {
        "spatial" => Ok(ModelKind::Spatial),
        "joint" => Ok(ModelKind::Joint),
        _ => Err(Error::InvalidArgument(format!("model must be spatial or joint, got `{value}`"))),
    }
}

fn model_name(m: ModelKind) -> &'static str {
    match m {
        ModelKind::Spatial => "spatial",
        ModelKind::Joint => "joint",
    }
}

fn gaussian(psf: &mut PsfModel) -> &mut GaussianPsf<f64> {
    if let PsfModel::Tabulated(_) = psf {
        *psf = PsfModel::default();
    }
    match psf {
        PsfModel::Gaussian(g) => g,
        PsfModel::Tabulated(_) => unreachable!("replaced above"),
    }
}

impl RunConfig {
    /// Apply one setting. `Ok(false)` means the key is unknown.
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let f = &mut self.fit;
        let h = &mut f.hyper;
        let b = &mut f.bounds;
        match key {
            "model" => f.model = parse_model(value).map_err(|e| e.to_string())?,
            "seed" => f.seed = parse(key, value)?,
            "iterations" => f.iterations = parse(key, value)?,
            "thin" => f.thin = parse(key, value)?,
            "chains" => self.chains = parse(key, value)?,
            "burn_in" => self.post.burn_in_fraction = parse(key, value)?,
            "pixel_size" => self.post.pixel_size = parse(key, value)?,
            "p_star" => self.post.p_star = parse(key, value)?,
            "d_r" => self.post.d_r = parse(key, value)?,
            "lambda" => h.lambda = parse(key, value)?,
            "alpha_s" => h.alpha_s = parse(key, value)?,
            "alpha_b" => h.alpha_b = parse(key, value)?,
            "a_eta_s" => h.a_eta_s = parse(key, value)?,
            "b_eta_s" => h.b_eta_s = parse(key, value)?,
            "a_eta_b" => h.a_eta_b = parse(key, value)?,
            "b_eta_b" => h.b_eta_b = parse(key, value)?,
            "c_ell" => h.c_ell = parse(key, value)?,
            "c_b" => h.c_b = parse(key, value)?,
            "h_s" => h.h_s = parse(key, value)?,
            "h_b" => h.h_b = parse(key, value)?,
            "prop_sd2" => h.prop_sd2 = parse(key, value)?,
            "x_min" => b.x_min = parse(key, value)?,
            "x_max" => b.x_max = parse(key, value)?,
            "y_min" => b.y_min = parse(key, value)?,
            "y_max" => b.y_max = parse(key, value)?,
            "e_min" => b.e_min = parse(key, value)?,
            "e_max" => b.e_max = parse(key, value)?,
            "psf_sigma_ref" => gaussian(&mut f.psf).sigma_ref = parse(key, value)?,
            "psf_e_ref" => gaussian(&mut f.psf).e_ref = parse(key, value)?,
            "psf_index" => gaussian(&mut f.psf).index = parse(key, value)?,
            "psf_sigma_floor" => gaussian(&mut f.psf).sigma_floor = parse(key, value)?,
            "psf_table" => self.psf_table = Some(value.into()),
            "aux_refresh" => {
                f.options.aux_refresh = match value {
                    "per_sweep" => AuxRefresh::PerSweep,
                    "per_event" => AuxRefresh::PerEvent,
                    _ => return Err(format!("aux_refresh must be per_sweep or per_event, got `{value}`")),
                }
            }
            "source_birth" => {
                f.options.source_birth = match value {
                    "posterior" => SourceBirth::PosteriorDraw,
                    "aux" => SourceBirth::AuxValue,
                    _ => return Err(format!("source_birth must be posterior or aux, got `{value}`")),
                }
            }
            "envelope" => {
                f.options.envelope = match value {
                    "fast" => EnvelopeConfig::fast(),
                    "uniform" => EnvelopeConfig::default(),
                    _ => return Err(format!("envelope must be fast or uniform, got `{value}`")),
                }
            }
            "random_scan" => f.options.random_scan = parse_bool(key, value)?,
            "record_weights" => f.options.record_weights = parse_bool(key, value)?,
            "record_background" => f.options.record_background = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse settings on top of the defaults; a relative `psf_table` resolves against `base`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::parse(path, n + 1, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => return Err(Error::UnknownKey(key.to_string())),
                Err(msg) => return Err(Error::parse(path, n + 1, msg)),
            }
        }
        if let Some(t) = &cfg.psf_table {
            let base = path.parent().unwrap_or(Path::new("."));
            let t = if t.is_absolute() { t.clone() } else { base.join(t) };
            cfg.fit.psf = PsfModel::Tabulated(TabulatedPsf::read(&t)?);
            cfg.psf_table = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.bounds.validate()?;
        self.fit.hyper.validate()?;
        self.post.validate()?;
        if self.chains == 0 {
            return Err(Error::InvalidArgument("need at least one chain".into()));
        }
        if self.fit.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of chain `k`: consecutive offsets from the run seed.
    pub fn chain_seed(&self, k: usize) -> u64 {
        self.fit.seed.wrapping_add(k as u64)
    }

    /// Settings in the input format; parsing the output gives back the same configuration.
    pub fn to_text(&self) -> String {
        let f = &self.fit;
        let h = &f.hyper;
        let b = &f.bounds;
        let o = &f.options;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("model", model_name(f.model).into());
        kv("seed", f.seed.to_string());
        kv("iterations", f.iterations.to_string());
        kv("thin", f.thin.to_string());
        kv("chains", self.chains.to_string());
        kv("burn_in", self.post.burn_in_fraction.to_string());
        kv("pixel_size", self.post.pixel_size.to_string());
        kv("p_star", self.post.p_star.to_string());
        kv("d_r", self.post.d_r.to_string());
        for (k, v) in [
            ("lambda", h.lambda),
            ("alpha_s", h.alpha_s),
            ("alpha_b", h.alpha_b),
            ("a_eta_s", h.a_eta_s),
            ("b_eta_s", h.b_eta_s),
            ("a_eta_b", h.a_eta_b),
            ("b_eta_b", h.b_eta_b),
            ("c_ell", h.c_ell),
            ("c_b", h.c_b),
        ] {
            kv(k, v.to_string());
        }
        kv("h_s", h.h_s.to_string());
        kv("h_b", h.h_b.to_string());
        kv("prop_sd2", h.prop_sd2.to_string());
        for (k, v) in [("x_min", b.x_min), ("x_max", b.x_max), ("y_min", b.y_min), ("y_max", b.y_max), ("e_min", b.e_min), ("e_max", b.e_max)]
        {
            kv(k, v.to_string());
        }
        match (&f.psf, &self.psf_table) {
            (PsfModel::Tabulated(_), Some(p)) => kv("psf_table", p.display().to_string()),
            (PsfModel::Gaussian(g), _) => {
                kv("psf_sigma_ref", g.sigma_ref.to_string());
                kv("psf_e_ref", g.e_ref.to_string());
                kv("psf_index", g.index.to_string());
                kv("psf_sigma_floor", g.sigma_floor.to_string());
            }
            (PsfModel::Tabulated(_), None) => {}
        }
        kv("aux_refresh", if o.aux_refresh == AuxRefresh::PerEvent { "per_event" } else { "per_sweep" }.into());
        kv("source_birth", if o.source_birth == SourceBirth::AuxValue { "aux" } else { "posterior" }.into());
        kv("envelope", if o.envelope.piecewise { "fast" } else { "uniform" }.into());
        kv("random_scan", o.random_scan.to_string());
        kv("record_weights", o.record_weights.to_string());
        kv("record_background", o.record_background.to_string());
        s
    }
}
