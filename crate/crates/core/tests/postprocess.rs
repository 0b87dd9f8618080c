use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skymix::bspline::{BackgroundComponent, KnotVector};
use skymix::geometry::{GridSpec, MapBounds};
use skymix::postprocess::{
    analyse, pool_draws, posterior_background_map, region_presence_probability, relabel, window, PooledDraws,
    PostprocessConfig,
};
use skymix::sampler::{BackgroundDraw, SourceDraw, TraceRecord};

fn spec() -> GridSpec {
    GridSpec::new(MapBounds::square(1.0, 1.0, 316.0).unwrap(), 0.1).unwrap()
}

fn record(iter: u64, points: &[(f64, f64)]) -> TraceRecord {
    TraceRecord {
        iter,
        k_s: points.len(),
        k_b: 0,
        eta_s: f64::NAN,
        eta_b: f64::NAN,
        n_src: points.len(),
        sources: points.iter().map(|&(x, y)| SourceDraw { x, y, count: 1, weight: None }).collect(),
        background: Vec::new(),
        delta: None,
    }
}

/// Two blurry "sources" plus scattered noise draws.
fn noisy_trace(seed: u64, n: usize) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|t| {
            let mut pts = Vec::new();
            for c in [(-0.45, -0.45), (0.35, 0.55)] {
                if rng.random::<f64>() < 0.97 {
                    pts.push((c.0 + rng.random_range(-0.12..0.12), c.1 + rng.random_range(-0.12..0.12)));
                }
            }
            if rng.random::<f64>() < 0.3 {
                pts.push((rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
            record(t, &pts)
        })
        .collect()
}

fn connected(spec: &GridSpec, pixels: &[usize]) -> bool {
    let set: HashSet<usize> = pixels.iter().copied().collect();
    let mut seen = HashSet::from([pixels[0]]);
    let mut stack = vec![pixels[0]];
    while let Some(p) = stack.pop() {
        for q in spec.neighbours(p) {
            if set.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == set.len()
}

#[test]
fn regions_are_connected_disjoint_and_windowed() {
    for seed in 0..5 {
        let tr = noisy_trace(seed, 400);
        let draws = PooledDraws::new(&[&tr[..200], &tr[200..]], spec()).unwrap();
        let cfg = PostprocessConfig { pixel_size: 0.1, ..Default::default() };
        let report = analyse(&draws, &cfg).unwrap();
        assert_eq!(report.k_star, 2);
        let mut all = HashSet::new();
        for r in &report.regions {
            assert!(connected(&draws.spec, &r.pixels));
            let win: HashSet<usize> = window(&draws.spec, r.seed, cfg.d_r).into_iter().collect();
            assert!(r.pixels.iter().all(|p| win.contains(p)));
            assert!(r.pixels.iter().all(|p| all.insert(*p)), "regions overlap");
            assert!((0.0..=1.0).contains(&r.presence_prob));
            assert!((r.count_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let loc: f64 = r.location_posterior.iter().map(|e| e.1).sum();
            assert!((loc - 1.0).abs() < 1e-12);
        }
        assert!(report.regions.iter().any(|r| r.contains(&draws.spec, -0.45, -0.45)));
        assert!(report.regions.iter().any(|r| r.contains(&draws.spec, 0.35, 0.55)));
    }
}

#[test]
fn pooled_total_is_conserved() {
    let tr = noisy_trace(7, 300);
    let draws = PooledDraws::new(&[&tr], spec()).unwrap();
    let grid = pool_draws(&draws);
    assert_eq!(grid.total() as usize, tr.iter().map(|r| r.k_s).sum::<usize>());
}

#[test]
fn presence_grows_with_the_region() {
    let tr = noisy_trace(8, 300);
    let draws = PooledDraws::new(&[&tr], spec()).unwrap();
    let mut region = Vec::new();
    let mut last = region_presence_probability(&region, &draws);
    assert_eq!(last, 0.0);
    for p in 0..draws.spec.len() {
        region.push(p);
        let now = region_presence_probability(&region, &draws);
        assert!(now >= last);
        last = now;
    }
    let nonempty = tr.iter().filter(|r| r.k_s > 0).count() as f64 / tr.len() as f64;
    assert!((last - nonempty).abs() < 1e-12);
}

#[test]
fn background_map_conserves_photons() {
    let comp = BackgroundComponent::new(KnotVector([-0.9, -0.5, 0.0, 0.5, 0.9]), KnotVector([-0.8, -0.4, 0.1, 0.4, 0.8]));
    let mut r = record(0, &[]);
    r.k_b = 1;
    r.background = vec![BackgroundDraw { comp, count: 500, weight: None }];
    let recs = [r.clone(), r];
    let refs: Vec<&TraceRecord> = recs.iter().collect();
    let map = posterior_background_map(&refs, spec(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!((map.values.iter().sum::<f64>() - 500.0).abs() < 1e-9);
    // corner pixels lie outside the knot support
    assert_eq!(map.values[0], 0.0);
    let centre = spec().cell(0.0, 0.0);
    assert!(map.values[centre] > 0.0);
}

proptest! {
    #[test]
    fn labels_follow_region_membership(
        pts in prop::collection::vec(prop::collection::vec((-0.99f64..0.99, -0.99f64..0.99), 0..6), 1..20),
        split in 1usize..399,
    ) {
        let tr: Vec<TraceRecord> = pts.iter().enumerate().map(|(t, p)| record(t as u64, p)).collect();
        let draws = PooledDraws::new(&[&tr], spec()).unwrap();
        let a: Vec<usize> = (0..split).collect();
        let b: Vec<usize> = (split..400).step_by(3).collect();
        let labels = relabel(&draws, &[a.clone(), b.clone()]).unwrap();
        for (px, l) in draws.pixels.iter().zip(&labels) {
            prop_assert_eq!(px.len(), l.len());
            for (p, &m) in px.iter().zip(l) {
                let want = if a.contains(p) { 1 } else if b.contains(p) { 2 } else { 0 };
                prop_assert_eq!(m, want);
            }
        }
        prop_assert!(relabel(&draws, &[a.clone(), a]).is_err());
    }
}
