//! Recovery of the mixture weights integrated out by the collapsed sampler.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::geometry::Hyperparameters;

use super::ChainState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredWeights {
    /// Source fraction.
    pub delta: f64,
    /// Within-level weights of the occupied source clusters, in index order.
    pub source: Vec<f64>,
    /// Mass left for unoccupied source clusters.
    pub source_tail: f64,
    pub background: Vec<f64>,
    pub background_tail: f64,
}

/// Stick-breaking posterior draw over occupied clusters: `v_l ~ Beta(n_l, alpha + sum_{l' > l} n_l')`.
pub fn stick_breaking<R: Rng + ?Sized>(counts: &[usize], alpha: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let mut rest: usize = counts.iter().sum();
    let mut remaining = 1.0;
    let mut out = Vec::with_capacity(counts.len());
    for &n in counts {
        rest -= n;
        let v = if n == 0 {
            0.0
        } else {
            Beta::new(n as f64, alpha + rest as f64).expect("positive shapes").sample(rng)
        };
        out.push(remaining * v);
        remaining *= 1.0 - v;
    }
    (out, remaining)
}

/// Draw the source fraction and both sets of within-level weights given one state.
pub fn recover_weights<R: Rng + ?Sized>(state: &ChainState, hyper: &Hyperparameters, rng: &mut R) -> RecoveredWeights {
    let n_s = state.n_source() as f64;
    let n_b = state.z.len() as f64 - n_s;
    let delta = Beta::new(hyper.lambda + n_s, hyper.lambda + n_b).expect("positive shapes").sample(rng);
    let (source, source_tail) = stick_breaking(&state.source_counts(), hyper.alpha_s, rng);
    let (background, background_tail) = stick_breaking(&state.background_counts(), hyper.alpha_b, rng);
    RecoveredWeights { delta, source, source_tail, background, background_tail }
}
