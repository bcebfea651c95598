//! `predcache`: sweeps, certificates and the exhaustive oracle from the
//! command line. Exit status is 0 when everything ran and every bound
//! check passed, 1 when a bound check failed and 2 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use predcache_core::analysis::certify;
use predcache_core::engine::render_eviction_log;
use predcache_core::harness::{
    curve_summary, oracle_compare, prepare_trace, render_csv, render_curve_csv,
    render_summary_table, run_sweep, write_outputs, ExperimentConfig,
};
use predcache_core::trace::{
    generate_predictions, read_trace_file, render_trace_text, NoiseKind, NoiseModel,
    PredictionTrace,
};
use predcache_core::workload::WorkloadKind;
use predcache_core::PolicySpec;

#[derive(Parser)]
#[command(
    name = "predcache",
    version,
    about = "Learning-augmented paging experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured grid and write one CSV row per cell.
    Simulate(SweepArgs),
    /// Run the grid and report ratio against prediction error per noise level.
    SweepEta(SweepArgs),
    /// Certify a single run and print its bound report.
    Verify(VerifyArgs),
    /// Print the exhaustive optimum next to Belady's misses.
    Oracle(OracleArgs),
    /// Write a generated trace in the trace-file format.
    GenTrace(GenTraceArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// TOML experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// Master seed; overrides the config and the environment.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds per workload.
    #[arg(long)]
    seeds: Option<usize>,
    /// Build an eviction-graph certificate for every run.
    #[arg(long)]
    verify: bool,
    /// Fill the runtime_ms column.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Curve table path (sweep-eta).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct Source {
    /// Trace file (`page` or `page,prediction` per line).
    #[arg(long, conflicts_with = "workload")]
    trace: Option<PathBuf>,
    /// Workload spec, e.g. `zipf(100,1.0)`.
    #[arg(long)]
    workload: Option<WorkloadKind>,
    #[arg(long, default_value_t = 1000)]
    length: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, short)]
    k: usize,
    #[arg(long, short)]
    policy: PolicySpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise model for the predictions; file predictions take precedence.
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the eviction log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, short)]
    k: usize,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    workload: WorkloadKind,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append predictions drawn from this noise model.
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// Output path; standard output when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, false),
        Command::SweepEta(a) => simulate(a, true),
        Command::Verify(a) => verify(a),
        Command::Oracle(a) => oracle(a),
        Command::GenTrace(a) => gen_trace(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(a: &SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.apply_seed_env()?;
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = a.seeds {
        cfg.seeds = n;
    }
    cfg.verify |= a.verify;
    cfg.timing |= a.timing;
    for (slot, flag) in [
        (&mut cfg.output.csv, &a.csv),
        (&mut cfg.output.summary, &a.summary),
        (&mut cfg.output.curve, &a.curve),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: SweepArgs, eta_curve: bool) -> Result<bool> {
    let cfg = load_config(&a)?;
    let out = run_sweep(&cfg)?;
    let csv = render_csv(&out.rows);
    let mut files: Vec<(&Path, String)> = Vec::new();
    if let Some(p) = &cfg.output.csv {
        files.push((p, csv));
    }
    if eta_curve {
        let curve = curve_summary(&cfg, &out.rows);
        let table = render_curve_csv(&curve.points);
        print!("{table}");
        for (policy, fit) in &curve.fits {
            match fit {
                Some(f) => println!(
                    "fit {policy}: ratio = {:.4} * sqrt(eta/(k OPT)) + {:.4}, R^2 = {:.4}",
                    f.slope, f.intercept, f.r_squared
                ),
                None => println!("fit {policy}: not enough distinct points"),
            }
        }
        if let Some(p) = &cfg.output.curve {
            files.push((p, table));
        }
        if let Some(p) = &cfg.output.summary {
            files.push((p, serde_json::to_string_pretty(&curve)?));
        }
    } else {
        print!("{}", render_summary_table(&out.summary));
        if let Some(p) = &cfg.output.summary {
            files.push((p, serde_json::to_string_pretty(&out.summary)?));
        }
    }
    let refs: Vec<(&Path, &str)> = files.iter().map(|(p, c)| (*p, c.as_str())).collect();
    write_outputs(&refs)?;
    if !out.all_passed() {
        eprintln!("{} cells failed a bound check", out.summary.bound_failures);
    }
    Ok(out.all_passed())
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let (trace, nu, file_omega) = match (&a.source.trace, &a.source.workload) {
        (Some(path), _) => prepare_trace(&WorkloadKind::File { path: path.clone() }, 0, 0)?,
        (None, Some(kind)) => prepare_trace(kind, a.source.length, a.seed)?,
        (None, None) => bail!("give either --trace or --workload"),
    };
    let omega: Option<PredictionTrace> = match (file_omega, a.noise) {
        (Some(w), _) => Some(w),
        (None, Some(kind)) => Some(generate_predictions(&nu, &NoiseModel::new(kind, a.seed))?),
        (None, None) if a.policy.uses_predictions() => {
            bail!(
                "policy `{}` uses predictions; pass --noise or a trace with predictions",
                a.policy
            )
        }
        (None, None) => None,
    };
    let cert = certify(&trace, &nu, omega.as_ref(), &a.policy, a.k, a.seed)?;
    if let Some(path) = &a.log {
        let text = render_eviction_log(&cert.run.eviction_log, &trace);
        write_outputs(&[(path, &text)])?;
    }
    if a.json {
        println!("{}", cert.report.to_json());
    } else {
        println!("policy {} k={} T={}", a.policy, a.k, trace.len());
        println!(
            "OBJ={} OPT={} |E|={}",
            cert.run.misses,
            cert.graph.opt,
            cert.graph.edge_count()
        );
        if let Some(l) = &cert.losses {
            println!("eta={} inversions={}", l.eta_total, l.inversions_total);
        }
        print!("{}", cert.report.render_text());
    }
    Ok(cert.report.all_passed())
}

fn oracle(a: OracleArgs) -> Result<bool> {
    let parsed = read_trace_file(&a.trace)?;
    let (brute, belady) = oracle_compare(&parsed.trace, a.k)?;
    println!("exhaustive belady");
    println!("{brute} {belady}");
    Ok(true)
}

fn gen_trace(a: GenTraceArgs) -> Result<bool> {
    let (trace, nu, file_omega) = prepare_trace(&a.workload, a.length, a.seed)?;
    let omega = match a.noise {
        Some(kind) => Some(
            generate_predictions(&nu, &NoiseModel::new(kind, a.seed))
                .with_context(|| format!("noise model {kind}"))?,
        ),
        None => file_omega,
    };
    let text = render_trace_text(&trace, omega.as_ref());
    match &a.out {
        Some(path) => write_outputs(&[(path, &text)])?,
        None => print!("{text}"),
    }
    Ok(true)
}
