use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;

use skymix::config::{parse_model, RunConfig};
use skymix::geometry::GridSpec;
use skymix::io::{read_event_list, read_grid, write_event_list, write_grid};
use skymix::postprocess::{analyse, discard_burn_in, posterior_background_map, write_regions, PooledDraws};
use skymix::psf::containment_radius;
use skymix::sampler::{read_trace, tune_smoothness, Chain, ChainRng, Snapshot, TraceRecord, TraceWriter};
use skymix::simulator::{read_scenario, simulate, write_truth, Background, EnergyBins, Exposure, SimScenario};

#[derive(Parser)]
#[command(name = "skymix", version, about = "Separate point sources from diffuse background in photon event lists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an event list with ground-truth labels from a TOML scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for events.csv and truth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run independent chains on an event list.
    Fit {
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long, value_parser = ["spatial", "joint"])]
        model: Option<String>,
        /// Run directory, e.g. run/<name>.
        #[arg(long)]
        out: PathBuf,
        /// Continue every chain from its saved state up to --iterations.
        #[arg(long)]
        resume: bool,
    },
    /// Find source regions and the background map from a fitted run.
    Postprocess {
        /// Run directory written by `fit`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        flags: PostFlags,
        /// Output directory (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle checks; exits non-zero if any fails.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Multiply every tolerance by this factor.
        #[arg(long, default_value_t = 1.0, hide = true)]
        tolerance_scale: f64,
    },
    /// Recommend smoothness floors for the background kernels.
    TuneSmoothness {
        /// Expected-count grid to simulate and fit.
        #[arg(long, required_unless_present = "psf")]
        template: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        /// Floor applied during the tuning fit itself.
        #[arg(long, default_value_t = 0.1)]
        floor: f64,
        /// Use the PSF 68% containment radius at the lowest energy instead.
        #[arg(long)]
        psf: bool,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PostFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of each chain discarded.
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    pixel_size: Option<f64>,
    #[arg(long)]
    p_star: Option<f64>,
    #[arg(long)]
    d_r: Option<usize>,
    /// Seed for the background map simulation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::read(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn trace_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("chain_{k}.trace"))
}

fn state_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("chain_{k}.state"))
}

fn cmd_simulate(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut sc = read_scenario(scenario).with_context(|| format!("reading scenario {}", scenario.display()))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let mut rng = ChainRng::seed_from_u64(sc.seed);
    let sim = simulate(&sc, &mut rng)?;
    write_event_list(out.join("events.csv"), &sim.events)?;
    write_truth(out.join("truth.csv"), &sim.truth)?;
    println!("simulated {} events into {}", sim.events.len(), out.display());
    Ok(())
}

fn cmd_fit(events: &Path, cfg: RunConfig, out: &Path, resume: bool) -> Result<()> {
    cfg.validate()?;
    let events = read_event_list(events, &cfg.fit.bounds).with_context(|| format!("reading events {}", events.display()))?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.snapshot"), cfg.to_text())?;
    info!("{} events, {} chains x {} iterations", events.len(), cfg.chains, cfg.fit.iterations);
    let results: Vec<Result<String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|k| {
                let (events, cfg) = (&events, &cfg);
                s.spawn(move || -> Result<String> {
                    let mut fit = cfg.fit.clone();
                    fit.seed = cfg.chain_seed(k);
                    let (mut chain, mut writer) = if resume {
                        let snap = Snapshot::load(state_path(out, k))?;
                        let writer = TraceWriter::resume(trace_path(out, k), snap.state.iteration)?;
                        (Chain::resume(events, &fit, &snap)?, writer)
                    } else {
                        (Chain::new(events, &fit)?, TraceWriter::create(trace_path(out, k))?)
                    };
                    chain.run_to(fit.iterations as u64, |r| writer.write(r))?;
                    writer.flush()?;
                    chain.snapshot().save(state_path(out, k))?;
                    let d = chain.diagnostics();
                    Ok(format!(
                        "chain {k}: {} iterations, source moves accepted {:.3} (bright sources {:.3})",
                        chain.iteration(),
                        d.acceptance_rate(),
                        d.major_acceptance_rate()
                    ))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    for r in results {
        println!("{}", r?);
    }
    Ok(())
}

fn cmd_postprocess(run: &Path, flags: &PostFlags, out: &Path) -> Result<()> {
    let mut cfg = match &flags.config {
        Some(p) => load_config(Some(p))?,
        None => {
            let snap = run.join("config.snapshot");
            RunConfig::read(&snap).with_context(|| format!("reading {}", snap.display()))?
        }
    };
    if let Some(v) = flags.burn_in {
        cfg.post.burn_in_fraction = v;
    }
    if let Some(v) = flags.pixel_size {
        cfg.post.pixel_size = v;
    }
    if let Some(v) = flags.p_star {
        cfg.post.p_star = v;
    }
    if let Some(v) = flags.d_r {
        cfg.post.d_r = v;
    }
    cfg.post.validate()?;
    let mut traces = Vec::new();
    for k in 0.. {
        let p = trace_path(run, k);
        if !p.exists() {
            break;
        }
        traces.push(read_trace(&p)?);
    }
    if traces.is_empty() {
        bail!("no chain_<k>.trace files in {}", run.display());
    }
    let kept: Vec<&[TraceRecord]> = traces.iter().map(|t| discard_burn_in(t, cfg.post.burn_in_fraction)).collect();
    if kept.iter().all(|t| t.is_empty()) {
        bail!("traces in {} hold no iterations after burn-in", run.display());
    }
    let spec = GridSpec::new(cfg.fit.bounds, cfg.post.pixel_size)?;
    let draws = PooledDraws::new(&kept, spec)?;
    let report = analyse(&draws, &cfg.post)?;
    if report.shortfall {
        println!("warning: fewer local maxima than the most probable source count {}", report.k_star);
    }
    write_regions(out.join("regions.csv"), &report.regions)?;
    let mut rng = ChainRng::seed_from_u64(flags.seed);
    let bg = posterior_background_map(&draws.iterations, spec, &mut rng)?;
    write_grid(out.join("background.grid"), &bg)?;
    println!("{} iterations pooled, {} regions (k* = {})", draws.len(), report.regions.len(), report.k_star);
    for r in &report.regions {
        println!(
            "region {}: {} pixels, presence {:.3}, centroid ({:.3}, {:.3})",
            r.id,
            r.pixels.len(),
            r.presence_prob,
            r.centroid.0,
            r.centroid.1
        );
    }
    Ok(())
}

fn cmd_verify(seed: u64, tolerance_scale: f64) -> Result<bool> {
    let checks = skymix::verify::run_checks(seed, tolerance_scale);
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed()))
}

fn cmd_tune(template: Option<&Path>, mut cfg: RunConfig, iterations: usize, floor: f64, psf: bool) -> Result<()> {
    if psf {
        let r = containment_radius(cfg.fit.bounds.e_min, &cfg.fit.psf, 0.68)?;
        println!("c_ell = {r}\nc_b = {r}");
        return Ok(());
    }
    let template = template.expect("clap requires a template without --psf");
    let bins = EnergyBins::default();
    let e_max = *bins.edges.last().unwrap();
    let grid = read_grid::<f64>(template, bins.edges[0], e_max).with_context(|| format!("reading template {}", template.display()))?;
    let spec = grid.spec;
    let sc = SimScenario {
        sources: Vec::new(),
        background: Background::Map { grid, rho: 2.0 },
        exposure: Exposure::Constant(1.0),
        bins,
        grid: spec,
        psf: cfg.fit.psf.clone(),
        thin_to: None,
        seed: cfg.fit.seed,
    };
    let mut rng = ChainRng::seed_from_u64(cfg.fit.seed);
    let sim = simulate(&sc, &mut rng)?;
    cfg.fit.bounds = spec.bounds;
    cfg.fit.iterations = iterations;
    cfg.fit.hyper.c_ell = floor;
    cfg.fit.hyper.c_b = floor;
    info!("fitting background-only model to {} simulated events", sim.events.len());
    let floors = tune_smoothness(&sim.events, &cfg.fit, cfg.post.burn_in_fraction)?;
    println!("c_ell = {}\nc_b = {}", floors.c_ell, floors.c_b);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { scenario, seed, out } => cmd_simulate(&scenario, seed, &out),
        Command::Fit { events, run, iterations, chains, model, out, resume } => {
            let mut cfg = load_config(run.config.as_deref())?;
            if let Some(s) = run.seed {
                cfg.fit.seed = s;
            }
            if let Some(n) = iterations {
                cfg.fit.iterations = n;
            }
            if let Some(c) = chains {
                cfg.chains = c;
            }
            if let Some(m) = model {
                cfg.fit.model = parse_model(&m)?;
            }
            cmd_fit(&events, cfg, &out, resume)
        }
        Command::Postprocess { run, flags, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            cmd_postprocess(&run, &flags, &out)
        }
        Command::Verify { seed, tolerance_scale } => {
            if !cmd_verify(seed, tolerance_scale)? {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::TuneSmoothness { template, run, iterations, floor, psf } => {
            let mut cfg = load_config(run.config.as_deref())?;
            if let Some(s) = run.seed {
                cfg.fit.seed = s;
            }
            cmd_tune(template.as_deref(), cfg, iterations, floor, psf)
        }
    }
}
