//! One level of the mixture: a Dirichlet-process mixture over a single kernel,
//! holding its clusters, occupancy tallies and auxiliary parameter draws.

use crate::error::{Error, Result};

use super::kernels::{Kernel, ParamRecord};
use super::{ChainRng, Diagnostics};

/// Label of an event that is not in this level.
pub const ABSENT: u32 = u32::MAX;

/// Object-safe view of a level used by the Gibbs engine.
pub trait LevelOps: Send {
    fn alpha(&self) -> f64;
    fn n_clusters(&self) -> usize;
    fn counts(&self) -> &[usize];
    /// Per-event cluster index, [`ABSENT`] when the event sits in another level.
    fn labels(&self) -> &[u32];

    /// Fresh auxiliary values for the whole sweep.
    fn refresh_aux(&mut self, rng: &mut ChainRng, diag: &mut Diagnostics);
    /// Per-event auxiliary handling; `fresh` redraws them, reusing a just-emptied cluster's value.
    fn prepare_aux(&mut self, fresh: bool, rng: &mut ChainRng, diag: &mut Diagnostics);

    /// Take event `i` out of its cluster, dropping the cluster if it empties.
    fn remove(&mut self, i: usize);
    /// Append `scale * n_l * q(x_i|theta_l)` for every cluster, then `scale * alpha/h * q(x_i|aux)`.
    fn push_weights(&self, i: usize, scale: f64, out: &mut Vec<f64>);
    /// Same layout with every density replaced by one.
    fn push_prior_weights(&self, scale: f64, out: &mut Vec<f64>);
    /// Put event `i` into cluster `choice`, or open a cluster from auxiliary `choice - k`.
    fn assign(&mut self, i: usize, choice: usize, rng: &mut ChainRng, diag: &mut Diagnostics);

    /// Update every cluster parameter given its members.
    fn update_params(&mut self, rng: &mut ChainRng, diag: &mut Diagnostics);

    fn records(&self) -> Vec<ParamRecord>;
    /// Replace the clusters; `labels` uses [`ABSENT`] for events outside the level.
    fn restore(&mut self, labels: &[u32], records: &[ParamRecord]) -> Result<()>;
}

pub struct Level<K: Kernel> {
    pub kernel: K,
    alpha: f64,
    n_aux: usize,
    params: Vec<K::Param>,
    counts: Vec<usize>,
    labels: Vec<u32>,
    aux: Vec<K::Param>,
    emptied: Option<K::Param>,
}

impl<K: Kernel> Level<K> {
    pub fn new(kernel: K, alpha: f64, n_aux: usize, n_events: usize) -> Self {
        Level { kernel, alpha, n_aux, params: Vec::new(), counts: Vec::new(), labels: vec![ABSENT; n_events], aux: Vec::new(), emptied: None }
    }

    pub fn params(&self) -> &[K::Param] {
        &self.params
    }

    /// Open a cluster holding `members`.
    pub fn seed_cluster(&mut self, param: K::Param, members: &[usize]) {
        let l = self.params.len() as u32;
        for &i in members {
            debug_assert_eq!(self.labels[i], ABSENT);
            self.labels[i] = l;
        }
        self.params.push(param);
        self.counts.push(members.len());
    }

    fn draw_aux(&mut self, rng: &mut ChainRng, diag: &mut Diagnostics) {
        self.aux.clear();
        for _ in 0..self.n_aux {
            let p = self.kernel.sample_prior(rng, diag);
            self.aux.push(p);
        }
    }
}

impl<K: Kernel> LevelOps for Level<K> {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn n_clusters(&self) -> usize {
        self.params.len()
    }

    fn counts(&self) -> &[usize] {
        &self.counts
    }

    fn labels(&self) -> &[u32] {
        &self.labels
    }

    fn refresh_aux(&mut self, rng: &mut ChainRng, diag: &mut Diagnostics) {
        self.draw_aux(rng, diag);
    }

    fn prepare_aux(&mut self, fresh: bool, rng: &mut ChainRng, diag: &mut Diagnostics) {
        let emptied = self.emptied.take();
        if fresh {
            self.draw_aux(rng, diag);
            if let (Some(p), Some(slot)) = (emptied, self.aux.first_mut()) {
                *slot = p;
            }
        }
    }

    fn remove(&mut self, i: usize) {
        let l = self.labels[i];
        if l == ABSENT {
            return;
        }
        self.labels[i] = ABSENT;
        let l = l as usize;
        self.counts[l] -= 1;
        if self.counts[l] == 0 {
            self.counts.remove(l);
            self.emptied = Some(self.params.remove(l));
            for lab in self.labels.iter_mut() {
                if *lab != ABSENT && *lab as usize > l {
                    *lab -= 1;
                }
            }
        }
    }

    fn push_weights(&self, i: usize, scale: f64, out: &mut Vec<f64>) {
        for (p, &n) in self.params.iter().zip(&self.counts) {
            out.push(scale * n as f64 * self.kernel.density(p, i));
        }
        let w = scale * self.alpha / self.n_aux as f64;
        for p in &self.aux {
            out.push(w * self.kernel.density(p, i));
        }
    }

    fn push_prior_weights(&self, scale: f64, out: &mut Vec<f64>) {
        out.extend(self.counts.iter().map(|&n| scale * n as f64));
        let w = scale * self.alpha / self.n_aux as f64;
        out.extend(std::iter::repeat_n(w, self.aux.len()));
    }

    fn assign(&mut self, i: usize, choice: usize, rng: &mut ChainRng, diag: &mut Diagnostics) {
        let k = self.params.len();
        if choice < k {
            self.counts[choice] += 1;
            self.labels[i] = choice as u32;
        } else {
            let p = self.kernel.birth(i, &self.aux[choice - k], rng);
            self.params.push(p);
            self.counts.push(1);
            self.labels[i] = k as u32;
            diag.births += 1;
        }
    }

    fn update_params(&mut self, rng: &mut ChainRng, diag: &mut Diagnostics) {
        let mut members: Vec<Vec<usize>> = self.counts.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            if l != ABSENT {
                members[l as usize].push(i);
            }
        }
        for (p, m) in self.params.iter_mut().zip(&members) {
            self.kernel.update(p, m, rng, diag);
        }
    }

    fn records(&self) -> Vec<ParamRecord> {
        self.params.iter().map(|p| self.kernel.record(p)).collect()
    }

    fn restore(&mut self, labels: &[u32], records: &[ParamRecord]) -> Result<()> {
        if labels.len() != self.labels.len() {
            return Err(Error::InvalidArgument(format!("expected {} labels, got {}", self.labels.len(), labels.len())));
        }
        let params = records.iter().map(|r| self.kernel.decode_record(r)).collect::<Result<Vec<_>>>()?;
        let mut counts = vec![0usize; params.len()];
        for &l in labels {
            if l != ABSENT {
                *counts
                    .get_mut(l as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("cluster label {l} out of range")))? += 1;
            }
        }
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("restored state has an empty cluster".into()));
        }
        self.params = params;
        self.counts = counts;
        self.labels = labels.to_vec();
        self.aux.clear();
        self.emptied = None;
        Ok(())
    }
}
