use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nlslab::config::{RunConfig, SweepMode};
use nlslab::criteria::{
    check_appendix_b, check_blow0, check_blow1, check_blow2, check_ge, kappa, regime, theta, Theorem,
};
use nlslab::damping::{
    abar, aunder, classify_monotonicity, h_alpha_moment, spike_moment_constant, wam, CumulativeDamping, DampingSpec,
};
use nlslab::experiments::{bisect_threshold, blow_r_agreement, grid_sweep, verify_identities, SweepResult};
use nlslab::solver::{simulate, Classification};
use nlslab::Error;
use serde_json::json;

const EXIT_BLOWUP: u8 = 10;
const EXIT_RESOLUTION_LOST: u8 = 11;
const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(name = "nlslab", version, about = "Damped NLS laboratory: simulate, check criteria, verify identities, sweep damping")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write diagnostics, summary and snapshots.
    Simulate(RunArgs),
    /// Print theorem verdicts for the configured datum and damping.
    Criteria(RunArgs),
    /// Check the balance laws along a run and under step halving.
    Verify(RunArgs),
    /// Bisect or grid-sweep constant damping strength.
    Sweep(RunArgs),
    /// Tabulate the damping function and its averages.
    DampingInfo(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of uniformly spaced diagnostic frames; overrides `integrator.frames`.
    #[arg(long, value_name = "INT")]
    frames: Option<usize>,
}

struct Loaded {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

fn load(args: &RunArgs) -> nlslab::Result<Loaded> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(frames) = args.frames {
        cfg.integrator.frames = frames;
        cfg.validate()?;
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok(Loaded { cfg, base, out })
}

/// Configuration and precondition problems exit with 2; runtime failures with 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_) | Error::Numerical { .. }) | None => EXIT_FAILURE,
        Some(_) => EXIT_CONFIG,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, base, out } = load(args)?;
    let spec = cfg.problem_spec(&base)?;
    let run = simulate(&spec)?;
    run.write_outputs(&out, &spec.initial, cfg.echo()).with_context(|| format!("writing outputs to {}", out.display()))?;
    match &run.blowup {
        Some(b) => println!(
            "{}: t_detect = {:.6}, estimate {:.6} in [{:.6}, {:.6}]",
            run.classification, b.t_detect, b.estimate, b.lower, b.upper
        ),
        None => println!("{}: t_final = {:.6}", run.classification, run.t_final()),
    }
    log::info!("{} steps, dt in [{:.3e}, {:.3e}], outputs in {}", run.stats.steps, run.stats.min_dt, run.stats.max_dt, out.display());
    Ok(match run.classification {
        Classification::Completed => 0,
        Classification::BlowupDetected => EXIT_BLOWUP,
        Classification::ResolutionLost => EXIT_RESOLUTION_LOST,
    })
}

fn cmd_criteria(args: &RunArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, base, out } = load(args)?;
    let u0 = cfg.initial_field(&base)?;
    let damping = cfg.damping.resolve(&base)?;
    let (dim, p, horizon) = (cfg.problem.dim, cfg.problem.p, cfg.criteria.horizon);
    let mut verdicts = Vec::new();
    for theorem in &cfg.criteria.theorems {
        let v = match theorem {
            Theorem::Blow0 => check_blow0(&u0, &damping, p, horizon)?,
            Theorem::Blow1 => check_blow1(&u0, p)?,
            Theorem::Blow2 => check_blow2(&u0, p)?,
            Theorem::GE => check_ge(&u0, &damping, p, cfg.calibration.c, horizon)?,
            Theorem::AppendixB => check_appendix_b(&u0, &damping, p, cfg.problem.mu, cfg.calibration.c0, horizon)?,
        };
        verdicts.push(v.to_json());
    }
    let finite_or_null = |r: nlslab::Result<f64>| match r {
        Ok(x) if x.is_finite() => json!(x),
        Ok(x) => json!(x.to_string()),
        Err(_) => serde_json::Value::Null,
    };
    let doc = json!({
        "dim": dim,
        "p": p,
        "regime": regime(dim, p),
        "kappa": finite_or_null(kappa(dim, p)),
        "theta": finite_or_null(theta(dim, p)),
        "verdicts": verdicts,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if args.out.is_some() {
        std::fs::create_dir_all(&out)?;
        write_json(&out.join("criteria.json"), &doc)?;
    }
    Ok(0)
}

fn cmd_verify(args: &RunArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, base, out } = load(args)?;
    let spec = cfg.problem_spec(&base)?;
    let v = &cfg.verify;
    let report = verify_identities(&spec, v.dt)?;
    let c = &report.coarse;
    let rows = [
        ("mass", c.mass, v.mass_tolerance, None),
        ("energy", c.energy, v.tolerance, Some(report.ratios.energy)),
        ("variance", c.variance, v.tolerance, Some(report.ratios.variance)),
        ("virial", c.virial, v.tolerance, Some(report.ratios.virial)),
        ("hamiltonian-rate", c.hamiltonian, v.tolerance, Some(report.ratios.hamiltonian)),
        ("second-virial", c.second_virial, v.second_virial_tolerance, None),
    ];
    let mut ok = true;
    if c.truncated {
        println!("run classified {}: residuals use the {} frames before detection", c.classification, c.frames_used);
    }
    for (name, value, tol, ratio) in rows {
        let pass = value <= tol;
        ok &= pass;
        let ratio = ratio.map(|r| format!(", halving ratio {r:.2}")).unwrap_or_default();
        println!("{:<17} {value:.3e} (tol {tol:.0e}{ratio}) {}", name, if pass { "ok" } else { "FAIL" });
    }
    let agreement = if cfg.seeds.triple_count > 0 {
        let a = blow_r_agreement(cfg.seeds.triples, cfg.seeds.triple_count, 1e4, 100_000)?;
        ok &= a.disagreements.is_empty();
        println!("blow-r decision   {} disagreements on {} seeded triples (seed {})", a.disagreements.len(), a.triples, a.seed);
        Some(a)
    } else {
        None
    };
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("verify.json"), &json!({ "identities": report, "blow_r_agreement": agreement, "config": cfg.echo() }))?;
    Ok(if ok { 0 } else { EXIT_FAILURE })
}

fn cmd_sweep(args: &RunArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, base, out } = load(args)?;
    let sweep = cfg.sweep.clone().ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let spec = cfg.problem_spec(&base)?;
    let result: SweepResult = match sweep.mode {
        SweepMode::Bisect => {
            let t_probe = sweep.t_probe.unwrap_or(cfg.integrator.t_end);
            bisect_threshold(&spec, sweep.a_lo, sweep.a_hi, sweep.tol, sweep.rel_tol, t_probe, sweep.max_probes)?
        }
        SweepMode::Grid => {
            let mut spec = spec;
            if let Some(t) = sweep.t_probe {
                spec.t_end = t;
            }
            grid_sweep(&spec, &sweep.values)?
        }
    };
    for p in &result.probes {
        println!("a = {:<12} {:<16} t = {:.6}", p.param, p.classification.to_string(), p.t_detect);
    }
    match result.bracket {
        Some([lo, hi]) => println!("bracket [{lo}, {hi}], width {:.3e}, consistent: {}", result.width, result.consistent),
        None => println!("no bracket; consistent: {}", result.consistent),
    }
    std::fs::create_dir_all(&out)?;
    result.write_csv(BufWriter::new(File::create(out.join("sweep.csv"))?))?;
    write_json(&out.join("sweep.json"), &json!({ "result": result, "config": cfg.echo() }))?;
    Ok(0)
}

fn cmd_damping_info(args: &RunArgs) -> anyhow::Result<u8> {
    let Loaded { cfg, base, out } = load(args)?;
    let info = &cfg.damping_info;
    let spec = cfg.damping.resolve(&base)?;
    let cd = CumulativeDamping::new(spec.clone())?;
    println!("{:>10} {:>14} {:>14}", "t", "a(t)", "A(t)");
    let mut table = Vec::new();
    for &t in &info.times {
        let (a, big_a) = (spec.evaluate(t)?, cd.cumulative(t)?);
        println!("{t:>10.4} {a:>14.8} {big_a:>14.8}");
        table.push(json!({ "t": t, "a": a, "A": big_a }));
    }
    let sup = abar(&cd, info.horizon, info.points)?;
    let inf = aunder(&cd, info.horizon, info.points)?;
    let mono = classify_monotonicity(&spec, info.horizon, info.points)?;
    println!("abar   = {:.8} (at t = {:.4e}, horizon {})", sup.value, sup.at, info.horizon);
    println!("aunder = {:.8} (at t = {:.4e})", inf.value, inf.at);
    println!("monotonicity: {}", serde_json::to_value(mono)?.as_str().unwrap_or_default());
    let wam_est = match &info.wam {
        Some(params) => {
            let w = wam(&cd, params, info.horizon, info.points)?;
            println!("WAM    = {:.8} (at t = {:.4e})", w.value, w.at);
            Some(w)
        }
        None => None,
    };
    let mut moments = Vec::new();
    if let DampingSpec::AppendixSpike { alpha } = spec {
        println!("{:>4} {:>4} {:>18} {:>18} {:>10}", "n", "q", "moment", "C_q n^(q-alpha-1)", "rel err");
        for &q in &info.moment_orders {
            for n in 1..=info.moment_n_max {
                let m = h_alpha_moment(alpha, n, q)?;
                let expected = spike_moment_constant(q) * (n as f64).powf(q - alpha - 1.0);
                let rel = (m - expected).abs() / expected;
                println!("{n:>4} {q:>4} {m:>18.10e} {expected:>18.10e} {rel:>10.1e}");
                moments.push(json!({ "n": n, "q": q, "moment": m, "expected": expected, "relative_error": rel }));
            }
        }
    }
    if args.out.is_some() {
        std::fs::create_dir_all(&out)?;
        let doc = json!({ "samples": table, "abar": sup, "aunder": inf, "wam": wam_est, "monotonicity": mono, "moments": moments });
        write_json(&out.join("damping_info.json"), &doc)?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Criteria(a) => cmd_criteria(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::DampingInfo(a) => cmd_damping_info(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
