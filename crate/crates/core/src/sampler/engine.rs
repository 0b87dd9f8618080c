//! Collapsed Gibbs sweep over a J-level mixture of Dirichlet-process mixtures.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{pareto_density, GammaParams};

use super::level::{LevelOps, ABSENT};
use super::{ChainRng, Diagnostics};

/// When auxiliary parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AuxRefresh {
    /// Once per sweep, shared by every event.
    #[default]
    PerSweep,
    /// Before every event, with a just-emptied cluster's value kept in the first slot.
    PerEvent,
}

/// Pareto energy model attached to each level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLevels {
    pub energies: Vec<f64>,
    pub e_min: f64,
    pub priors: Vec<GammaParams>,
    pub eta: Vec<f64>,
}

pub struct Gibbs {
    levels: Vec<Box<dyn LevelOps>>,
    lambda: f64,
    z: Vec<u32>,
    sizes: Vec<usize>,
    spectral: Option<SpectralLevels>,
    pub aux_refresh: AuxRefresh,
    pub random_scan: bool,
    rng: ChainRng,
    diag: Diagnostics,
    buf: Vec<f64>,
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl Gibbs {
    /// `levels` must already hold every event in exactly one cluster.
    pub fn new(levels: Vec<Box<dyn LevelOps>>, lambda: f64, spectral: Option<SpectralLevels>, rng: ChainRng) -> Result<Self> {
        let n = levels.first().map_or(0, |l| l.labels().len());
        if levels.iter().any(|l| l.labels().len() != n) {
            return Err(Error::InvalidArgument("levels disagree on the number of events".into()));
        }
        if let Some(s) = &spectral {
            if s.energies.len() != n || s.priors.len() != levels.len() || s.eta.len() != levels.len() {
                return Err(Error::InvalidArgument("spectral model does not match the levels".into()));
            }
        }
        let mut g = Gibbs {
            levels,
            lambda,
            z: vec![ABSENT; n],
            sizes: Vec::new(),
            spectral,
            aux_refresh: AuxRefresh::default(),
            random_scan: false,
            rng,
            diag: Diagnostics::default(),
            buf: Vec::new(),
            starts: Vec::new(),
            order: (0..n).collect(),
        };
        g.sync_labels()?;
        Ok(g)
    }

    /// Rebuild the level-1 labels from the per-level cluster labels.
    fn sync_labels(&mut self) -> Result<()> {
        self.sizes = vec![0; self.levels.len()];
        for i in 0..self.z.len() {
            let held: Vec<usize> = (0..self.levels.len()).filter(|&j| self.levels[j].labels()[i] != ABSENT).collect();
            if held.len() != 1 {
                return Err(Error::InvalidArgument(format!("event {i} sits in {} levels", held.len())));
            }
            self.z[i] = held[0] as u32;
            self.sizes[held[0]] += 1;
        }
        Ok(())
    }

    pub fn levels(&self) -> &[Box<dyn LevelOps>] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Box<dyn LevelOps>] {
        &mut self.levels
    }

    /// Level index of every event.
    pub fn z(&self) -> &[u32] {
        &self.z
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn eta(&self) -> Option<&[f64]> {
        self.spectral.as_ref().map(|s| s.eta.as_slice())
    }

    pub fn set_eta(&mut self, eta: &[f64]) -> Result<()> {
        match &mut self.spectral {
            Some(s) if s.eta.len() == eta.len() && eta.iter().all(|e| *e > 0.0) => {
                s.eta.copy_from_slice(eta);
                Ok(())
            }
            _ => Err(Error::InvalidArgument("spectral indices do not match the model".into())),
        }
    }

    pub fn rng(&self) -> &ChainRng {
        &self.rng
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    pub fn set_diagnostics(&mut self, d: Diagnostics) {
        self.diag = d;
    }

    /// `(level, cluster)` of every event.
    pub fn assignments(&self) -> Vec<(usize, usize)> {
        self.z.iter().enumerate().map(|(i, &j)| (j as usize, self.levels[j as usize].labels()[i] as usize)).collect()
    }

    /// Replace the whole state (levels already restored by the caller).
    pub fn resync(&mut self, rng: ChainRng) -> Result<()> {
        self.rng = rng;
        self.sync_labels()
    }

    /// One update of event `i`: its level and cluster drawn jointly.
    pub fn update_event(&mut self, i: usize) {
        let j_old = self.z[i] as usize;
        self.levels[j_old].remove(i);
        self.sizes[j_old] -= 1;
        let fresh = self.aux_refresh == AuxRefresh::PerEvent;
        for lvl in self.levels.iter_mut() {
            lvl.prepare_aux(fresh, &mut self.rng, &mut self.diag);
        }

        self.buf.clear();
        self.starts.clear();
        let mut scales = Vec::with_capacity(self.levels.len());
        for (j, lvl) in self.levels.iter().enumerate() {
            let nj = self.sizes[j] as f64;
            let mut scale = (nj + self.lambda) / (nj + lvl.alpha());
            if let Some(s) = &self.spectral {
                scale *= pareto_density(s.energies[i], s.e_min, s.eta[j]);
            }
            scales.push(scale);
            self.starts.push(self.buf.len());
            lvl.push_weights(i, scale, &mut self.buf);
        }
        let mut total: f64 = self.buf.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            // every kernel underflowed at x_i: fall back to the prior predictive
            self.diag.underflows += 1;
            self.buf.clear();
            for (lvl, &scale) in self.levels.iter().zip(&scales) {
                lvl.push_prior_weights(scale, &mut self.buf);
            }
            total = self.buf.iter().sum();
        }
        let mut u = self.rng.random::<f64>() * total;
        let mut choice = self.buf.len() - 1;
        for (k, w) in self.buf.iter().enumerate() {
            if u < *w {
                choice = k;
                break;
            }
            u -= w;
        }
        let j = self.starts.iter().rposition(|&s| s <= choice).unwrap();
        let local = choice - self.starts[j];
        self.levels[j].assign(i, local, &mut self.rng, &mut self.diag);
        self.z[i] = j as u32;
        self.sizes[j] += 1;
    }

    /// Draw the Pareto indices of each level from their Gamma full conditionals.
    pub fn update_spectral(&mut self) -> Result<()> {
        let Some(s) = &mut self.spectral else { return Ok(()) };
        for j in 0..s.eta.len() {
            let energies: Vec<f64> = self.z.iter().zip(&s.energies).filter(|(z, _)| **z as usize == j).map(|(_, e)| *e).collect();
            let post = s.priors[j].update(&energies, s.e_min)?;
            s.eta[j] = post.sample(&mut self.rng).max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// One full sweep: every event, then every cluster parameter, then the spectral indices.
    pub fn sweep(&mut self) -> Result<()> {
        if self.aux_refresh == AuxRefresh::PerSweep {
            for lvl in self.levels.iter_mut() {
                lvl.refresh_aux(&mut self.rng, &mut self.diag);
            }
        }
        let mut order = std::mem::take(&mut self.order);
        if self.random_scan {
            order.shuffle(&mut self.rng);
        } else {
            order.sort_unstable();
        }
        for &i in &order {
            self.update_event(i);
        }
        self.order = order;
        for lvl in self.levels.iter_mut() {
            lvl.update_params(&mut self.rng, &mut self.diag);
        }
        self.update_spectral()?;
        self.diag.sweeps += 1;
        Ok(())
    }

    /// Check label consistency, dense indexing, non-empty clusters and exact tallies.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Degenerate(m));
        let mut sizes = vec![0usize; self.levels.len()];
        for (i, &j) in self.z.iter().enumerate() {
            for (jj, lvl) in self.levels.iter().enumerate() {
                let inside = lvl.labels()[i] != ABSENT;
                if inside != (jj == j as usize) {
                    return bad(format!("event {i}: level label {j} disagrees with level {jj}"));
                }
            }
            sizes[j as usize] += 1;
        }
        if sizes != self.sizes {
            return bad(format!("level sizes {:?} != tallies {:?}", sizes, self.sizes));
        }
        for (j, lvl) in self.levels.iter().enumerate() {
            let mut counts = vec![0usize; lvl.n_clusters()];
            for &l in lvl.labels() {
                if l != ABSENT {
                    match counts.get_mut(l as usize) {
                        Some(c) => *c += 1,
                        None => return bad(format!("level {j}: label {l} beyond {} clusters", lvl.n_clusters())),
                    }
                }
            }
            if counts.contains(&0) {
                return bad(format!("level {j}: empty cluster"));
            }
            if counts != lvl.counts() {
                return bad(format!("level {j}: occupancy tallies out of date"));
            }
        }
        Ok(())
    }
}
