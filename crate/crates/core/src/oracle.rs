//! Brute-force reference computations used to check the samplers and kernels:
//! midpoint quadrature, the exact CRP partition law, and exhaustive posteriors
//! for tiny two-level mixtures with piecewise-constant kernels.
//!
//! Nothing here calls into the sampler; only primitive densities are shared.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Composite midpoint rule on `[a, b]` with `n` panels. Error is `O(h^2)` for smooth integrands.
pub fn quadrature_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Axis-aligned integration rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// Composite midpoint rule on a rectangle with `resolution` panels per axis.
pub fn quadrature(f: impl Fn(f64, f64) -> f64, rect: Rect, resolution: usize) -> f64 {
    let hx = (rect.x1 - rect.x0) / resolution as f64;
    let hy = (rect.y1 - rect.y0) / resolution as f64;
    let mut total = 0.0;
    for j in 0..resolution {
        let y = rect.y0 + (j as f64 + 0.5) * hy;
        let mut row = 0.0;
        for i in 0..resolution {
            row += f(rect.x0 + (i as f64 + 0.5) * hx, y);
        }
        total += row;
    }
    total * hx * hy
}

/// Midpoint rule at `resolution` and `2 * resolution` combined to cancel the
/// `h^2` term; error is `O(h^4)` for integrands smooth on the rectangle.
pub fn quadrature_richardson(f: impl Fn(f64, f64) -> f64, rect: Rect, resolution: usize) -> f64 {
    let coarse = quadrature(&f, rect, resolution);
    let fine = quadrature(&f, rect, 2 * resolution);
    (4.0 * fine - coarse) / 3.0
}

/// All set partitions of `n` items as restricted growth strings, in lexicographic order.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut a = vec![0usize; n];
    fn rec(i: usize, max: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == a.len() {
            out.push(a.clone());
            return;
        }
        for v in 0..=max + 1 {
            a[i] = v;
            rec(i + 1, max.max(v), a, out);
        }
    }
    a[0] = 0;
    rec(1, 0, &mut a, &mut out);
    out
}

fn block_sizes(rgs: &[usize]) -> Vec<usize> {
    let k = rgs.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &b in rgs {
        sizes[b] += 1;
    }
    sizes
}

/// Log probability of a partition with the given block sizes under CRP(`alpha`).
pub fn crp_log_prob(sizes: &[usize], alpha: f64) -> f64 {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut lp = sizes.len() as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n as f64);
    for &s in sizes {
        lp += ln_gamma(s as f64);
    }
    lp
}

/// Exact CRP law over all partitions of `n <= 10` items.
#[derive(Debug, Clone)]
pub struct PartitionLaw {
    pub partitions: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl PartitionLaw {
    pub fn expected_clusters(&self) -> f64 {
        self.partitions
            .iter()
            .zip(&self.probs)
            .map(|(p, w)| w * block_sizes(p).len() as f64)
            .sum()
    }

    /// Distribution of the number of clusters, index `k` for `k` clusters.
    pub fn cluster_count_distribution(&self) -> Vec<f64> {
        let n = self.partitions.first().map_or(0, |p| p.len());
        let mut out = vec![0.0; n + 1];
        for (p, w) in self.partitions.iter().zip(&self.probs) {
            out[block_sizes(p).len()] += w;
        }
        out
    }
}

pub fn crp_partition_law(n: usize, alpha: f64) -> Result<PartitionLaw> {
    if n > 10 {
        return Err(Error::InvalidArgument(format!("partition enumeration limited to n <= 10, got {n}")));
    }
    let partitions = set_partitions(n);
    let probs = partitions.iter().map(|p| crp_log_prob(&block_sizes(p), alpha).exp()).collect();
    Ok(PartitionLaw { partitions, probs })
}

/// `E[k | n] = sum_{i=1}^n alpha / (alpha + i - 1)`.
pub fn crp_expected_clusters(n: usize, alpha: f64) -> f64 {
    (1..=n).map(|i| alpha / (alpha + i as f64 - 1.0)).sum()
}

/// Monte Carlo prior mean of the number of clusters in one level when the level
/// receives `Binomial(n, delta)` items with `delta ~ Beta(lambda, lambda)`.
pub fn prior_expected_clusters_mc<R: Rng + ?Sized>(n: usize, lambda: f64, alpha: f64, draws: usize, rng: &mut R) -> f64 {
    let beta = Beta::new(lambda, lambda).expect("valid beta");
    // cumulative harmonic table avoids an O(n) sum per draw
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for i in 1..=n {
        cum.push(cum[i - 1] + alpha / (alpha + i as f64 - 1.0));
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let delta = beta.sample(rng);
        let ns = Binomial::new(n as u64, delta).expect("valid binomial").sample(rng) as usize;
        total += cum[ns];
    }
    total / draws as f64
}

/// One level of a micro mixture: finitely many parameter atoms, each a
/// piecewise-constant density over the cells.
#[derive(Debug, Clone)]
pub struct MicroGroup {
    pub alpha: f64,
    /// Prior mass of each atom (sums to one).
    pub prior: Vec<f64>,
    /// `density[a][c]`: density of cell `c` under atom `a`.
    pub density: Vec<Vec<f64>>,
}

impl MicroGroup {
    fn log_marginal(&self, cells: &[usize]) -> f64 {
        let v: f64 = self
            .prior
            .iter()
            .zip(&self.density)
            .map(|(w, d)| w * cells.iter().map(|&c| d[c]).product::<f64>())
            .sum();
        v.ln()
    }
}

/// Two-level mixture on a handful of events living in discrete cells.
#[derive(Debug, Clone)]
pub struct MicroModel {
    pub lambda: f64,
    pub groups: [MicroGroup; 2],
    /// Cell index of each event.
    pub events: Vec<usize>,
}

/// Canonical encoding of a level-1 labelling plus the within-level partitions:
/// entry `i` is `group * 16 + block`, blocks numbered by first appearance.
pub type MicroKey = Vec<u8>;

/// Build the canonical key from per-event `(group, cluster id)` pairs.
pub fn canonical_key(labels: &[(usize, usize)]) -> MicroKey {
    let mut seen: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    labels
        .iter()
        .map(|&(g, c)| {
            let pos = match seen[g].iter().position(|&x| x == c) {
                Some(p) => p,
                None => {
                    seen[g].push(c);
                    seen[g].len() - 1
                }
            };
            (g * 16 + pos) as u8
        })
        .collect()
}

/// Exact posterior over (labelling, partitions) for a micro model with at most 8 events.
pub fn enumerate_exact_posterior(model: &MicroModel) -> Result<Vec<(MicroKey, f64)>> {
    let n = model.events.len();
    if n > 8 {
        return Err(Error::InvalidArgument(format!("exact enumeration refused for n = {n} > 8")));
    }
    let lambda = model.lambda;
    let mut out: Vec<(MicroKey, f64)> = Vec::new();
    let mut logs = Vec::new();
    for mask in 0u32..(1 << n) {
        let members: [Vec<usize>; 2] = [
            (0..n).filter(|i| mask & (1 << i) == 0).collect(),
            (0..n).filter(|i| mask & (1 << i) != 0).collect(),
        ];
        let mut lz = ln_gamma(2.0 * lambda) - ln_gamma(n as f64 + 2.0 * lambda);
        for m in &members {
            lz += ln_gamma(m.len() as f64 + lambda) - ln_gamma(lambda);
        }
        let parts0 = set_partitions(members[0].len());
        let parts1 = set_partitions(members[1].len());
        for p0 in &parts0 {
            let l0 = partition_log_weight(&model.groups[0], &members[0], p0, &model.events);
            for p1 in &parts1 {
                let l1 = partition_log_weight(&model.groups[1], &members[1], p1, &model.events);
                let mut labels = vec![(0usize, 0usize); n];
                for (k, &i) in members[0].iter().enumerate() {
                    labels[i] = (0, p0[k]);
                }
                for (k, &i) in members[1].iter().enumerate() {
                    labels[i] = (1, p1[k]);
                }
                out.push((canonical_key(&labels), 0.0));
                logs.push(lz + l0 + l1);
            }
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    for (entry, l) in out.iter_mut().zip(&logs) {
        entry.1 = (l - max).exp() / total;
    }
    Ok(out)
}

fn partition_log_weight(group: &MicroGroup, members: &[usize], rgs: &[usize], cells: &[usize]) -> f64 {
    let sizes = block_sizes(rgs);
    let mut lw = crp_log_prob(&sizes, group.alpha);
    for b in 0..sizes.len() {
        let block: Vec<usize> = members.iter().zip(rgs).filter(|(_, &r)| r == b).map(|(&i, _)| cells[i]).collect();
        lw += group.log_marginal(&block);
    }
    lw
}

/// Total-variation distance between an exact law and empirical counts over the same keys.
pub fn total_variation(exact: &[(MicroKey, f64)], counts: &std::collections::BTreeMap<MicroKey, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    let mut tv = 0.0;
    let mut covered = 0u64;
    for (k, p) in exact {
        let c = counts.get(k).copied().unwrap_or(0);
        covered += c;
        tv += (p - c as f64 / total as f64).abs();
    }
    // mass on keys the enumeration never produced
    tv += (total - covered) as f64 / total as f64;
    0.5 * tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadrature_basics() {
        let r = Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        assert_eq!(quadrature(|_, _| 1.0, r, 17), 1.0);
        assert!((quadrature_1d(|x| x * x, 0.0, 1.0, 1000) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (n, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(n).len(), b);
        }
    }

    #[test]
    fn crp_law_is_normalized_and_matches_harmonic_sum() {
        assert_eq!(crp_partition_law(1, 2.0).unwrap().partitions.len(), 1);
        assert!((crp_partition_law(1, 2.0).unwrap().expected_clusters() - 1.0).abs() < 1e-12);
        for n in 1..=7 {
            let law = crp_partition_law(n, 2.0).unwrap();
            let total: f64 = law.probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((law.expected_clusters() - crp_expected_clusters(n, 2.0)).abs() < 1e-12);
        }
        assert!(crp_partition_law(11, 1.0).is_err());
    }

    #[test]
    fn prior_expected_sources_near_sixteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = prior_expected_clusters_mc(10_000, 1.0, 2.0, 20_000, &mut rng);
        assert!((e - 16.0).abs() < 1.5, "{e}");
    }

    fn flat_model(n: usize) -> MicroModel {
        let g = |alpha| MicroGroup { alpha, prior: vec![1.0], density: vec![vec![0.25; 4]] };
        MicroModel { lambda: 1.0, groups: [g(1.3), g(0.7)], events: vec![0; n] }
    }

    #[test]
    fn single_event_split_follows_likelihood() {
        // lambda = 1, one atom per group: P(group 0) is proportional to its cell density
        let model = MicroModel {
            lambda: 1.0,
            groups: [
                MicroGroup { alpha: 1.0, prior: vec![1.0], density: vec![vec![0.7, 0.1, 0.1, 0.1]] },
                MicroGroup { alpha: 1.0, prior: vec![1.0], density: vec![vec![0.25; 4]] },
            ],
            events: vec![0],
        };
        let post = enumerate_exact_posterior(&model).unwrap();
        let p0: f64 = post.iter().filter(|(k, _)| k[0] < 16).map(|(_, p)| p).sum();
        assert!((p0 - 0.7 / 0.95).abs() < 1e-12);
    }

    #[test]
    fn flat_kernels_give_crp_partitions() {
        let model = flat_model(5);
        let post = enumerate_exact_posterior(&model).unwrap();
        // condition on all events in group 0 and compare with the CRP law
        let in0: Vec<_> = post.iter().filter(|(k, _)| k.iter().all(|&v| v < 16)).collect();
        let mass: f64 = in0.iter().map(|(_, p)| p).sum();
        let law = crp_partition_law(5, 1.3).unwrap();
        for (part, p) in law.partitions.iter().zip(&law.probs) {
            let key: MicroKey = part.iter().map(|&b| b as u8).collect();
            let q = in0.iter().find(|(k, _)| *k == key).unwrap().1 / mass;
            assert!((q - p).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_events_symmetric_under_swap() {
        let model = MicroModel {
            lambda: 1.0,
            groups: [
                MicroGroup { alpha: 1.0, prior: vec![0.5, 0.5], density: vec![vec![0.4, 0.4, 0.1, 0.1], vec![0.1, 0.1, 0.4, 0.4]] },
                MicroGroup { alpha: 1.0, prior: vec![1.0], density: vec![vec![0.25; 4]] },
            ],
            events: vec![1, 1],
        };
        let post = enumerate_exact_posterior(&model).unwrap();
        let get = |k: [u8; 2]| post.iter().find(|(key, _)| key.as_slice() == k).unwrap().1;
        assert!((get([0, 16]) - get([16, 0])).abs() < 1e-15);
    }

    #[test]
    fn refuses_large_instances() {
        assert!(enumerate_exact_posterior(&flat_model(9)).is_err());
    }

    #[test]
    fn canonical_keys_ignore_cluster_ids() {
        assert_eq!(canonical_key(&[(0, 7), (1, 3), (0, 7), (0, 2)]), vec![0, 16, 0, 1]);
    }
}
