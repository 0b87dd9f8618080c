//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass substrings (e.g. `c4 c7`) to run a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use skymix::bspline::{axis_smooth, EnvelopeConfig, KnotConditional, KnotVector};
use skymix::geometry::GridSpec;
use skymix::oracle::{canonical_key, enumerate_exact_posterior, total_variation, MicroGroup, MicroModel};
use skymix::postprocess::{analyse, discard_burn_in, hpd_interval, PooledDraws, PostprocessConfig};
use skymix::sampler::{
    run_chain, AuxRefresh, ChainRng, Diagnostics, DiscreteKernel, FitConfig, Gibbs, Level, ModelKind, Trace,
    TraceRecord,
};
use skymix::simulator::{simulate, Background, Exposure, SimScenario, SimSource};
use skymix::verify;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn from_check(c: verify::Check) -> Outcome {
    outcome(c.passed(), format!("error {:.3e}, tolerance {:.1e}", c.error, c.tolerance))
}

fn c1_variance() -> Outcome {
    from_check(verify::variance_check(1))
}

fn c2_normalization() -> Outcome {
    from_check(verify::normalization_check(2, 20))
}

fn c3_conjugacy() -> Outcome {
    from_check(verify::conjugacy_check())
}

fn chi_square_p(draws: &[f64], edges: &[f64]) -> f64 {
    let bins = edges.len() - 1;
    let mut obs = vec![0usize; bins];
    for &d in draws {
        let k = edges.partition_point(|&e| e <= d).clamp(1, bins) - 1;
        obs[k] += 1;
    }
    let exp = draws.len() as f64 / bins as f64;
    let stat: f64 = obs.iter().map(|&o| (o as f64 - exp).powi(2) / exp).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

fn c4_knot_sampler() -> Outcome {
    let mut rng = ChainRng::seed_from_u64(4);
    let xs: Vec<f64> = (0..20).map(|_| rng.random_range(-1.4..1.6)).collect();
    // the floor excludes |k2| < 0.707, so the support has two pieces
    let kv = KnotVector([-3.5, -1.5, 0.0, 1.5, 3.5]);
    let (axis, floor, knot) = ((-5.0, 5.0), 0.99, 2);
    let cond = KnotConditional::new(axis, floor, &xs);
    // equal-probability bins from the quadrature CDF on (k1, k3)
    let n = 40_000;
    let (lo, hi) = (kv.0[1], kv.0[3]);
    let h = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..n)
        .map(|i| {
            let t = lo + (i as f64 + 0.5) * h;
            let mut c = kv;
            c.0[knot] = t;
            if axis_smooth(&c, floor) { cond.log_density(&kv, knot, t) } else { f64::NEG_INFINITY }
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    for l in &logs {
        cdf.push(cdf.last().unwrap() + (l - top).exp());
    }
    let total = *cdf.last().unwrap();
    let bins = 20;
    let mut edges = vec![lo];
    for j in 1..bins {
        let target = total * j as f64 / bins as f64;
        let i = cdf.partition_point(|&c| c < target);
        let frac = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
        edges.push(lo + (i as f64 - 1.0 + frac) * h);
    }
    edges.push(hi);
    let mut ps = Vec::new();
    for (name, env) in [("fast", EnvelopeConfig::fast()), ("uniform", EnvelopeConfig::default())] {
        let draws: Vec<f64> = (0..10_000).map(|_| cond.sample(&kv, knot, &env, &mut rng).unwrap().0).collect();
        ps.push((name, chi_square_p(&draws, &edges)));
    }
    let detail = ps.iter().map(|(n, p)| format!("{n} envelope p = {p:.3}")).collect::<Vec<_>>().join(", ");
    outcome(ps.iter().all(|&(_, p)| p > 0.01), format!("{detail} (need > 0.01)"))
}

fn micro_tv(aux: AuxRefresh) -> f64 {
    let model = MicroModel {
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
    };
    let exact = enumerate_exact_posterior(&model).unwrap();
    let n = model.events.len();
    let mut src = Level::new(DiscreteKernel::new(model.groups[0].clone(), model.events.clone()), 1.0, 3, n);
    let bg = Level::new(DiscreteKernel::new(model.groups[1].clone(), model.events.clone()), 1.5, 3, n);
    src.seed_cluster(0, &(0..n).collect::<Vec<_>>());
    let mut g = Gibbs::new(vec![Box::new(src), Box::new(bg)], 1.0, None, ChainRng::seed_from_u64(5)).unwrap();
    g.aux_refresh = aux;
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for t in 0..200_000 + 1000 {
        g.sweep().unwrap();
        if t >= 1000 {
            *counts.entry(canonical_key(&g.assignments())).or_default() += 1;
        }
    }
    total_variation(&exact, &counts)
}

fn c5_micro_exactness() -> Outcome {
    let sweep = micro_tv(AuxRefresh::PerSweep);
    let event = micro_tv(AuxRefresh::PerEvent);
    outcome(
        sweep < 0.05 && event < 0.05,
        format!("TV {sweep:.4} (aux per sweep), {event:.4} (aux per event), need < 0.05"),
    )
}

fn c6_prior_sources() -> Outcome {
    let c = verify::prior_sources_check(6);
    outcome(c.passed(), format!("|E[k_s] - 16| = {:.3}, tolerance {}", c.error, c.tolerance))
}

const TRUTH: [(f64, f64); 3] = [(-2.025, -1.975), (1.525, 2.475), (2.025, -0.975)];

fn scenario(bg_rho: f64) -> SimScenario {
    SimScenario::new(
        TRUTH.iter().map(|&(x, y)| SimSource { x, y, f0: 1e-9, rho: 2.0 }).collect(),
        Background::Flat { total: 2000.0, rho: bg_rho },
        Exposure::PerGeV(3.0e11),
    )
    .unwrap()
}

/// Simulate replicate `rep` and run four chains of 4000 iterations.
fn fit_replicate(sc: &SimScenario, rep: u64, model: ModelKind) -> Vec<Trace> {
    let sim = simulate(sc, &mut ChainRng::seed_from_u64(rep)).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|c| {
                let ev = &sim.events;
                let mut cfg = FitConfig::new(sc.bounds());
                cfg.seed = rep * 100 + c;
                cfg.iterations = 4000;
                cfg.model = model;
                cfg.options.record_background = false;
                s.spawn(move || run_chain(ev, &cfg).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn retained(traces: &[Trace]) -> Vec<&[TraceRecord]> {
    traces.iter().map(|t| discard_burn_in(&t.records, 0.75)).collect()
}

/// Detection on five simulated skies; also returns the pooled Metropolis counters.
fn c7_end_to_end() -> (Outcome, Diagnostics) {
    let sc = scenario(2.0);
    let spec = GridSpec::new(sc.bounds(), 0.05).unwrap();
    let mut diag = Diagnostics::default();
    let mut good = 0;
    let mut notes = Vec::new();
    for rep in 1..=5 {
        let t0 = Instant::now();
        let traces = fit_replicate(&sc, rep, ModelKind::Spatial);
        for t in &traces {
            diag.mh_proposals += t.diagnostics.mh_proposals;
            diag.mh_accepts += t.diagnostics.mh_accepts;
            diag.mh_major_proposals += t.diagnostics.mh_major_proposals;
            diag.mh_major_accepts += t.diagnostics.mh_major_accepts;
        }
        let kept = retained(&traces);
        let min_k = kept.iter().flat_map(|c| c.iter()).map(|r| r.k_s).min().unwrap();
        let draws = PooledDraws::new(&kept, spec).unwrap();
        let report = analyse(&draws, &PostprocessConfig::default()).unwrap();
        let strong: Vec<_> = report.regions.iter().filter(|r| r.presence_prob >= 0.95).collect();
        let found = TRUTH.iter().filter(|&&(x, y)| strong.iter().any(|r| r.contains(&spec, x, y))).count();
        let spurious =
            report.regions.iter().filter(|r| r.presence_prob < 0.95).map(|r| r.presence_prob).fold(0.0, f64::max);
        let ok = strong.len() == 3 && found == 3 && spurious < 0.5 && min_k >= 3;
        good += usize::from(ok);
        let presence: Vec<String> = strong.iter().map(|r| format!("{:.3}", r.presence_prob)).collect();
        println!(
            "  c7 replicate {rep}: {} strong regions [{}], {found}/3 truths covered, max spurious {spurious:.3}, min k_s {min_k}, {:.0}s",
            strong.len(),
            presence.join(", "),
            t0.elapsed().as_secs_f64()
        );
        notes.push(if ok { "ok" } else { "miss" });
    }
    (outcome(good >= 4, format!("{good}/5 replicates meet every condition ({}), need >= 4", notes.join(" "))), diag)
}

fn c8_spectral() -> Outcome {
    // background photon index 2.2, i.e. Pareto shape 1.2 under the per-GeV exposure
    let sc = scenario(2.2);
    let mut good = 0;
    let mut notes = Vec::new();
    for rep in 1..=5 {
        let traces = fit_replicate(&sc, 10 + rep, ModelKind::Joint);
        let eta: Vec<f64> = retained(&traces).iter().flat_map(|c| c.iter()).map(|r| r.eta_s).collect();
        let (lo, hi) = hpd_interval(&eta, 0.95).unwrap();
        let mean = eta.iter().sum::<f64>() / eta.len() as f64;
        let ok = lo <= 1.0 && 1.0 <= hi;
        good += usize::from(ok);
        println!("  c8 replicate {rep}: eta_s mean {mean:.3}, 95% HPD ({lo:.3}, {hi:.3})");
        notes.push(if ok { "ok" } else { "miss" });
    }
    outcome(good >= 4, format!("{good}/5 HPD intervals contain 1.0 ({}), need >= 4", notes.join(" ")))
}

fn c9_acceptance(diag: &Diagnostics) -> Outcome {
    let major = diag.major_acceptance_rate();
    outcome(
        (0.2..=0.6).contains(&major),
        format!(
            "acceptance {major:.3} for sources holding >= 100 photons (all sources {:.3}), need [0.2, 0.6]",
            diag.acceptance_rate()
        ),
    )
}

fn run(bin: &str, args: &[&str]) {
    let out = Command::new(bin).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn c10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_skymix");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("scenario.toml"),
        "exposure = 3e11\nexposure_per_gev = true\n[background]\nkind = \"flat\"\ntotal = 300\nrho = 2\n\
         [[source]]\nx = 0.5\ny = 0.5\nf0 = 1e-9\nrho = 2\n",
    )
    .unwrap();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();
    run(bin, &["simulate", "--scenario", &p("scenario.toml"), "--seed", "3", "--out", &p("")]);
    for name in ["a", "b"] {
        run(bin, &["fit", "--events", &p("events.csv"), "--seed", "9", "--iterations", "200", "--chains", "2", "--out", &p(name)]);
    }
    let same = |f: &str| std::fs::read(Path::new(&p("a")).join(f)).unwrap() == std::fs::read(Path::new(&p("b")).join(f)).unwrap();
    let ok = ["chain_0.trace", "chain_1.trace", "chain_0.state", "chain_1.state"].iter().all(|f| same(f));
    outcome(ok, format!("two fits of 2 chains x 200 iterations {} byte for byte", if ok { "match" } else { "differ" }))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |tag: &str| filters.is_empty() || filters.iter().any(|f| tag.contains(f.as_str()));
    let mut failed = 0;
    let mut report = |tag: &str, title: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(tag) {
            return;
        }
        let t0 = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {tag} {title}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    };
    report("c1", "knot variance formula", &mut c1_variance);
    report("c2", "density normalization", &mut c2_normalization);
    report("c3", "Gamma-Pareto conjugacy", &mut c3_conjugacy);
    report("c4", "knot rejection sampler", &mut c4_knot_sampler);
    report("c5", "micro-instance exactness", &mut c5_micro_exactness);
    report("c6", "prior number of sources", &mut c6_prior_sources);
    let mut diag = None;
    if wanted("c7") || wanted("c9") {
        report("c7", "end-to-end source detection", &mut || {
            let (o, d) = c7_end_to_end();
            diag = Some(d);
            o
        });
    }
    report("c8", "spectral shape recovery", &mut c8_spectral);
    if let Some(d) = diag {
        report("c9", "Metropolis acceptance", &mut || c9_acceptance(&d));
    }
    report("c10", "fit determinism", &mut c10_determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
