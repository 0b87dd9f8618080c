use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skymix::geometry::{Grid, GridSpec, MapBounds};
use skymix::io::write_grid;
use skymix::simulator::{
    parse_scenario, read_truth, simulate, simulate_counts, thin_events, write_truth, Background, Exposure, SimScenario,
    SimSource, Truth,
};

fn expected_total(sc: &SimScenario) -> f64 {
    (0..sc.n_components()).map(|c| sc.component_expectations(c).unwrap().iter().sum::<f64>()).sum()
}

#[test]
fn poisson_total_over_replicates() {
    let src = vec![SimSource { x: 1.0, y: -1.0, f0: 1e-9, rho: 2.0 }];
    let sc = SimScenario::new(src, Background::Flat { total: 400.0, rho: 2.5 }, Exposure::Constant(1e11)).unwrap();
    let mu = expected_total(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 100;
    let sum: u64 = (0..reps).map(|_| simulate_counts(&sc, &mut rng).unwrap().total()).sum();
    let sd = (reps as f64 * mu).sqrt();
    assert!((sum as f64 - reps as f64 * mu).abs() < 4.0 * sd, "sum {sum}, expected {}", reps as f64 * mu);
}

#[test]
fn nine_source_calibration() {
    let mut sources = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            sources.push(SimSource { x: -3.0 + 3.0 * i as f64, y: -3.0 + 3.0 * j as f64, f0: 1e-9, rho: 2.0 });
        }
    }
    let exposure = Exposure::Constant(3e11);
    let probe = SimScenario::new(sources.clone(), Background::None, exposure.clone()).unwrap();
    let from_sources = expected_total(&probe);
    assert!(from_sources < 25_000.0);
    let sc = SimScenario::new(sources, Background::Flat { total: 25_000.0 - from_sources, rho: 2.4 }, exposure).unwrap();
    let mu = expected_total(&sc);
    assert!((mu - 25_000.0).abs() < 1e-6 * 25_000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sim = simulate(&sc, &mut rng).unwrap();
    let n = sim.events.len() as f64;
    assert!((n - mu).abs() < 3.0 * mu.sqrt(), "{n} photons vs {mu}");
    let bright = sim.truth.iter().filter(|t| **t != Truth::Background).count() as f64;
    assert!((bright - from_sources).abs() < 4.0 * from_sources.sqrt());
}

#[test]
fn thinning_keeps_proportions() {
    // 30% "source" items; 100 thinnings to 200 should average 60 sources
    let items: Vec<bool> = (0..1000).map(|i| i % 10 < 3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reps = 100;
    let mut total = 0usize;
    for _ in 0..reps {
        let kept = thin_events(&items, 200, &mut rng).unwrap();
        assert_eq!(kept.len(), 200);
        total += kept.iter().filter(|&&s| s).count();
    }
    let mean = total as f64 / reps as f64;
    // hypergeometric sd with finite-population correction
    let sd = (200.0 * 0.3 * 0.7 * 800.0 / 999.0 / reps as f64).sqrt();
    assert!((mean - 60.0).abs() < 4.0 * sd, "mean {mean}");
    assert!(thin_events(&items, 1001, &mut rng).is_err());
    assert!(thin_events(&items, 0, &mut rng).unwrap().is_empty());
    let mut all = thin_events(&items, 1000, &mut rng).unwrap();
    all.sort();
    let mut orig = items.clone();
    orig.sort();
    assert_eq!(all, orig);
}

#[test]
fn simulation_is_reproducible_and_labelled() {
    let src = vec![SimSource { x: 0.0, y: 0.0, f0: 1e-9, rho: 2.0 }];
    let mut sc = SimScenario::new(src, Background::Flat { total: 300.0, rho: 2.0 }, Exposure::Constant(1e11)).unwrap();
    sc.thin_to = Some(100);
    let a = simulate(&sc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = simulate(&sc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.events.len(), 100);
    assert_eq!(a.truth.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("truth.csv");
    write_truth(&p, &a.truth).unwrap();
    assert_eq!(read_truth(&p).unwrap(), a.truth);
}

#[test]
fn scenario_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let bounds = MapBounds::square(5.0, 1.0, 10f64.powf(2.5)).unwrap();
    let spec = GridSpec::new(bounds, 0.5).unwrap();
    let mut grid = Grid::<f64>::zeros(spec);
    grid.values.iter_mut().for_each(|v| *v = 1.0);
    write_grid(dir.path().join("flat.grid"), &grid).unwrap();
    let text = r#"
seed = 4
pixel_size = 0.5
exposure = 2e11
exposure_per_gev = true

[background]
kind = "template"
path = "flat.grid"
rho = 2.2

[[source]]
x = 1.0
y = 2.0
f0 = 1e-9
rho = 2.0
"#;
    let sc = parse_scenario(text, dir.path()).unwrap();
    assert_eq!(sc.seed, 4);
    assert_eq!(sc.sources.len(), 1);
    assert_eq!(sc.exposure, Exposure::PerGeV(2e11));
    assert!(matches!(sc.background, Background::Map { rho, .. } if rho == 2.2));
    let bg: f64 = sc.component_expectations(1).unwrap().iter().sum();
    assert!((bg - 400.0).abs() < 1e-6, "{bg}");

    let missing = text.replace("flat.grid", "nope.grid");
    let err = parse_scenario(&missing, dir.path()).unwrap_err().to_string();
    assert!(err.contains("nope.grid"), "{err}");
    let unknown = format!("{text}\n[extra]\nfoo = 1\n");
    assert!(parse_scenario(&unknown, Path::new(".")).is_err());
}
