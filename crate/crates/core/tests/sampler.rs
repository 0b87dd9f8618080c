use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use skymix::geometry::{MapBounds, PhotonEvent};
use skymix::oracle::{canonical_key, crp_partition_law, enumerate_exact_posterior, total_variation, MicroGroup, MicroModel};
use skymix::psf::{psf_sample, PsfModel};
use skymix::sampler::{
    run_chain, AuxRefresh, Chain, ChainRng, DiscreteKernel, FitConfig, Gibbs, Level, ModelKind, Snapshot, SourceBirth,
};
use skymix::spectral::pareto_sample;
use skymix::Error;

fn micro_model() -> MicroModel {
    MicroModel {
        lambda: 1.0,
        groups: [
            MicroGroup {
                alpha: 1.0,
                prior: vec![0.5, 0.3, 0.2],
                density: vec![vec![2.4, 0.3, 0.3], vec![0.3, 2.4, 0.3], vec![0.3, 0.3, 2.4]],
            },
            MicroGroup { alpha: 1.5, prior: vec![0.6, 0.4], density: vec![vec![1.0, 1.0, 1.0], vec![1.6, 0.8, 0.6]] },
        ],
        events: vec![0, 0, 1, 2, 1],
    }
}

fn micro_gibbs(model: &MicroModel, aux: AuxRefresh, seed: u64) -> Gibbs {
    let n = model.events.len();
    let mut src = Level::new(DiscreteKernel::new(model.groups[0].clone(), model.events.clone()), model.groups[0].alpha, 3, n);
    let bg = Level::new(DiscreteKernel::new(model.groups[1].clone(), model.events.clone()), model.groups[1].alpha, 3, n);
    src.seed_cluster(0, &(0..n).collect::<Vec<_>>());
    let mut g = Gibbs::new(vec![Box::new(src), Box::new(bg)], model.lambda, None, ChainRng::seed_from_u64(seed)).unwrap();
    g.aux_refresh = aux;
    g
}

fn micro_tv(aux: AuxRefresh, sweeps: usize, seed: u64) -> f64 {
    let model = micro_model();
    let exact = enumerate_exact_posterior(&model).unwrap();
    let mut g = micro_gibbs(&model, aux, seed);
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for t in 0..sweeps {
        g.sweep().unwrap();
        if t >= 1000 {
            *counts.entry(canonical_key(&g.assignments())).or_default() += 1;
        }
    }
    total_variation(&exact, &counts)
}

#[test]
fn micro_posterior_matches_enumeration_per_event_aux() {
    let tv = micro_tv(AuxRefresh::PerEvent, 40_000, 3);
    assert!(tv < 0.05, "TV {tv}");
}

#[test]
fn flat_kernels_give_crp_partitions() {
    // one level effectively: identical flat kernels in both groups, so the
    // within-level partition law must be CRP whatever the labelling
    let flat = MicroGroup { alpha: 2.0, prior: vec![1.0], density: vec![vec![1.0]] };
    let model = MicroModel { lambda: 1.0, groups: [flat.clone(), flat], events: vec![0; 5] };
    let mut g = micro_gibbs(&model, AuxRefresh::PerSweep, 11);
    let law = crp_partition_law(5, 2.0).unwrap();
    let mut k_hist = [0.0; 6];
    let sweeps = 40_000;
    for _ in 0..sweeps {
        g.sweep().unwrap();
        let a = g.assignments();
        // partition of the source-level events only
        let src: Vec<usize> = a.iter().filter(|x| x.0 == 0).map(|x| x.1).collect();
        if src.len() == 5 {
            let mut ids = src.clone();
            ids.sort_unstable();
            ids.dedup();
            k_hist[ids.len()] += 1.0;
        }
    }
    let total: f64 = k_hist.iter().sum();
    assert!(total > 1000.0);
    let exact = law.cluster_count_distribution();
    for k in 1..=5 {
        let emp = k_hist[k] / total;
        assert!((emp - exact[k]).abs() < 0.03, "k={k}: {emp} vs {}", exact[k]);
    }
}

fn small_sky(seed: u64, n_bg: usize, n_src: usize) -> (MapBounds<f64>, Vec<PhotonEvent<f64>>) {
    let b = MapBounds::square(3.0, 1.0, 316.0).unwrap();
    let mut rng = ChainRng::seed_from_u64(seed);
    let psf = PsfModel::default();
    let mut ev = Vec::new();
    for _ in 0..n_bg {
        ev.push(PhotonEvent::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), pareto_sample(1.0, 0.5, &mut rng)));
    }
    for _ in 0..n_src {
        let e = pareto_sample(1.0, 1.0, &mut rng);
        let (x, y) = psf_sample((0.5, -0.5), e, &psf, &b, &mut rng).unwrap();
        ev.push(PhotonEvent::new(x, y, e));
    }
    (b, ev)
}

fn small_config(b: MapBounds<f64>) -> FitConfig {
    let mut cfg = FitConfig::new(b);
    cfg.hyper.c_ell = 0.5;
    cfg.hyper.c_b = 0.5;
    cfg
}

#[test]
fn invariants_hold_after_sweeps() {
    let (b, ev) = small_sky(1, 200, 80);
    for model in [ModelKind::Spatial, ModelKind::Joint] {
        for birth in [SourceBirth::PosteriorDraw, SourceBirth::AuxValue] {
            let mut cfg = small_config(b);
            cfg.model = model;
            cfg.options.source_birth = birth;
            cfg.options.random_scan = true;
            let mut chain = Chain::new(&ev, &cfg).unwrap();
            for _ in 0..30 {
                chain.step().unwrap();
                chain.gibbs().check_invariants().unwrap();
                let st = chain.state();
                st.check_invariants().unwrap();
                assert_eq!(st.z.len(), ev.len());
                assert!(st.mus.iter().all(|&(x, y)| b.contains(x, y)));
            }
        }
    }
}

#[test]
fn bright_source_is_found() {
    let (b, ev) = small_sky(2, 150, 150);
    let mut cfg = small_config(b);
    cfg.iterations = 300;
    let tr = run_chain(&ev, &cfg).unwrap();
    let last = &tr.records[200..];
    let near = last.iter().filter(|r| r.sources.iter().any(|s| (s.x - 0.5).hypot(s.y + 0.5) < 0.2)).count();
    assert!(near as f64 > 0.95 * last.len() as f64, "{near} of {}", last.len());
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (b, ev) = small_sky(3, 100, 40);
    let mut cfg = small_config(b);
    cfg.iterations = 25;
    cfg.model = ModelKind::Joint;
    cfg.options.record_weights = true;
    let a = run_chain(&ev, &cfg).unwrap();
    let c = run_chain(&ev, &cfg).unwrap();
    assert_eq!(format!("{:?}", a.records), format!("{:?}", c.records));
    cfg.seed = 1;
    let d = run_chain(&ev, &cfg).unwrap();
    assert_ne!(format!("{:?}", a.records), format!("{:?}", d.records));
}

#[test]
fn snapshot_resume_continues_exactly() {
    let (b, ev) = small_sky(4, 100, 40);
    let mut cfg = small_config(b);
    cfg.iterations = 20;
    cfg.options.record_weights = true;
    let full = run_chain(&ev, &cfg).unwrap();
    let mut chain = Chain::new(&ev, &cfg).unwrap();
    chain.run_to(10, |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.state");
    chain.snapshot().save(&p).unwrap();
    let mut resumed = Chain::resume(&ev, &cfg, &Snapshot::load(&p).unwrap()).unwrap();
    let mut rest = Vec::new();
    resumed
        .run_to(20, |r| {
            rest.push(r.clone());
            Ok(())
        })
        .unwrap();
    assert_eq!(format!("{:?}", &full.records[10..]), format!("{rest:?}"));
}

#[test]
fn joint_model_recovers_spectral_shape() {
    let (b, ev) = small_sky(5, 150, 400);
    let mut cfg = small_config(b);
    cfg.model = ModelKind::Joint;
    cfg.iterations = 400;
    let tr = run_chain(&ev, &cfg).unwrap();
    let tail = &tr.records[200..];
    let eta_s = tail.iter().map(|r| r.eta_s).sum::<f64>() / tail.len() as f64;
    let eta_b = tail.iter().map(|r| r.eta_b).sum::<f64>() / tail.len() as f64;
    assert!((eta_s - 1.0).abs() < 0.2, "eta_s {eta_s}");
    assert!((eta_b - 0.5).abs() < 0.2, "eta_b {eta_b}");
}

#[test]
fn rejects_bad_input() {
    let b = MapBounds::square(3.0, 1.0, 316.0).unwrap();
    let cfg = small_config(b);
    assert!(matches!(Chain::new(&[], &cfg), Err(Error::InvalidArgument(_))));
    let off = [PhotonEvent::new(0.0, 0.0, 2.0), PhotonEvent::new(4.0, 0.0, 2.0)];
    assert!(matches!(Chain::new(&off, &cfg), Err(Error::OutOfBounds { index: 1, .. })));
    let low = [PhotonEvent::new(0.0, 0.0, 0.5)];
    assert!(matches!(Chain::new(&low, &cfg), Err(Error::OutOfBounds { index: 0, .. })));
    let mut wide = cfg.clone();
    wide.hyper.c_ell = 5.0;
    assert!(Chain::new(&[PhotonEvent::new(0.0, 0.0, 2.0)], &wide).is_err());
}
