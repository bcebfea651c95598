//! Experiment harness: validated sweep configs, the parallel
//! workload x seed x k x noise x policy grid, CSV/JSON output and the
//! eta-sweep curve with its least-squares fit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{build_eviction_graph, check_bounds, check_outcome_bounds, BoundReport};
use crate::engine::{brute_force_opt, run, EngineError};
use crate::policy::PolicySpec;
use crate::rng::derive_seed;
use crate::trace::{
    compute_losses, compute_next_occurrence, generate_predictions, LossSummary, NextOccurrence,
    NoiseKind, NoiseModel, PredictionTrace, RequestTrace,
};
use crate::workload::{load, WorkloadKind, WorkloadSpec};

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV: &str = "PREDCACHE_SEED";

pub const CSV_HEADER: [&str; 11] = [
    "trace_id",
    "policy",
    "k",
    "noise",
    "seed",
    "misses",
    "opt",
    "eta",
    "ratio",
    "bounds_passed",
    "runtime_ms",
];

pub const CURVE_HEADER: [&str; 8] = [
    "policy",
    "k",
    "noise",
    "cells",
    "eta_over_opt",
    "mean_ratio",
    "max_ratio",
    "sqrt_eta_over_k_opt",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cell {cell}: {msg}")]
    Cell { cell: String, msg: String },
}

fn config_err(path: impl Into<String>, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    master_seed: Option<u64>,
    seeds: Option<usize>,
    cache_sizes: Vec<usize>,
    policies: Vec<String>,
    noise: Vec<String>,
    workloads: Vec<RawWorkload>,
    verify: bool,
    timing: bool,
    output: OutputPaths,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawWorkload {
    spec: String,
    length: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadEntry {
    pub kind: WorkloadKind,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub workloads: Vec<WorkloadEntry>,
    pub cache_sizes: Vec<usize>,
    pub policies: Vec<PolicySpec>,
    /// Noise levels; empty means the runs see no predictions.
    pub noise: Vec<NoiseKind>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Build an eviction-graph certificate for every run.
    pub verify: bool,
    /// Fill the runtime column (makes the CSV run-dependent).
    pub timing: bool,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    /// Parses a TOML document. Relative `file(...)` workloads and output
    /// paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, HarnessError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| config_err("config", e.message().to_string()))?;
        let resolve = |p: PathBuf| match base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        };

        let mut workloads = Vec::with_capacity(raw.workloads.len());
        for (i, w) in raw.workloads.into_iter().enumerate() {
            let path = format!("workloads[{i}]");
            let mut kind: WorkloadKind = w
                .spec
                .parse()
                .map_err(|e: String| config_err(format!("{path}.spec"), e))?;
            if let WorkloadKind::File { path: p } = kind {
                kind = WorkloadKind::File { path: resolve(p) };
            }
            let length = match (&kind, w.length) {
                (WorkloadKind::File { .. }, l) => l.unwrap_or(0),
                (_, Some(l)) => l,
                (_, None) => return Err(config_err(format!("{path}.length"), "required")),
            };
            workloads.push(WorkloadEntry { kind, length });
        }
        let policies = raw
            .policies
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.parse()
                    .map_err(|e: String| config_err(format!("policies[{i}]"), e))
            })
            .collect::<Result<Vec<PolicySpec>, _>>()?;
        let noise = raw
            .noise
            .iter()
            .enumerate()
            .map(|(i, n)| {
                n.parse()
                    .map_err(|e: String| config_err(format!("noise[{i}]"), e))
            })
            .collect::<Result<Vec<NoiseKind>, _>>()?;
        let output = OutputPaths {
            csv: raw.output.csv.map(resolve),
            summary: raw.output.summary.map(resolve),
            curve: raw.output.curve.map(resolve),
        };
        let cfg = ExperimentConfig {
            workloads,
            cache_sizes: raw.cache_sizes,
            policies,
            noise,
            seeds: raw.seeds.unwrap_or(1),
            master_seed: raw.master_seed.unwrap_or(0),
            verify: raw.verify,
            timing: raw.timing,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent())
    }

    /// Applies [`SEED_ENV`] when it is set.
    pub fn apply_seed_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.master_seed = v
                .trim()
                .parse()
                .map_err(|_| config_err(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.workloads.is_empty() {
            return Err(config_err("workloads", "at least one workload is required"));
        }
        for (i, w) in self.workloads.iter().enumerate() {
            w.kind
                .validate()
                .map_err(|e| config_err(format!("workloads[{i}].spec"), e))?;
        }
        if self.cache_sizes.is_empty() {
            return Err(config_err(
                "cache_sizes",
                "at least one cache size is required",
            ));
        }
        if let Some(i) = self.cache_sizes.iter().position(|&k| k == 0) {
            return Err(config_err(
                format!("cache_sizes[{i}]"),
                "must be at least 1",
            ));
        }
        if self.policies.is_empty() {
            return Err(config_err("policies", "at least one policy is required"));
        }
        if self.seeds == 0 {
            return Err(config_err("seeds", "must be at least 1"));
        }
        if self.noise.is_empty() {
            let needs = self
                .workloads
                .iter()
                .all(|w| !matches!(w.kind, WorkloadKind::File { .. }));
            if let Some(p) = self.policies.iter().find(|p| p.uses_predictions()) {
                if needs {
                    return Err(config_err(
                        "noise",
                        format!("policy `{p}` uses predictions but no noise model is listed"),
                    ));
                }
            }
        }
        for (i, n) in self.noise.iter().enumerate() {
            NoiseModel::new(*n, 0)
                .validate(usize::MAX)
                .map_err(|e| config_err(format!("noise[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub trace_id: String,
    pub policy: String,
    pub k: usize,
    pub noise: String,
    pub seed: u64,
    pub misses: u64,
    pub opt: u64,
    pub eta: f64,
    pub ratio: f64,
    pub bounds_passed: bool,
    pub runtime_ms: Option<f64>,
    #[serde(skip)]
    pub inversions: u64,
    #[serde(skip)]
    pub leg_misses: Option<[u64; 2]>,
    #[serde(skip)]
    pub edges: Option<usize>,
    #[serde(skip)]
    pub report: BoundReport,
}

impl ResultRow {
    fn csv_record(&self) -> [String; 11] {
        [
            self.trace_id.clone(),
            self.policy.clone(),
            self.k.to_string(),
            self.noise.clone(),
            self.seed.to_string(),
            self.misses.to_string(),
            self.opt.to_string(),
            self.eta.to_string(),
            format!("{:.6}", self.ratio),
            self.bounds_passed.to_string(),
            self.runtime_ms
                .map(|ms| format!("{ms:.3}"))
                .unwrap_or_default(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub cells: usize,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    pub bound_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub master_seed: u64,
    pub cells: usize,
    pub bound_failures: usize,
    /// Failed checks by bound name.
    pub failed_checks: BTreeMap<String, usize>,
    pub policies: Vec<PolicySummary>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub summary: RunSummary,
}

impl SweepOutput {
    pub fn all_passed(&self) -> bool {
        self.summary.bound_failures == 0
    }
}

struct NoiseSlot {
    label: String,
    omega: Option<PredictionTrace>,
    losses: Option<LossSummary>,
}

/// Runs every cell of the grid. Units of (workload, seed) run in
/// parallel; rows come back in grid order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, HarnessError> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = (0..cfg.workloads.len())
        .flat_map(|w| (0..cfg.seeds).map(move |s| (w, s)))
        .collect();
    let rows: Vec<Vec<ResultRow>> = units
        .par_iter()
        .map(|&(w, s)| run_unit(cfg, w, s))
        .collect::<Result<_, _>>()?;
    let rows: Vec<ResultRow> = rows.into_iter().flatten().collect();
    let summary = summarize(cfg.master_seed, &rows);
    Ok(SweepOutput { rows, summary })
}

fn run_unit(cfg: &ExperimentConfig, w: usize, s: usize) -> Result<Vec<ResultRow>, HarnessError> {
    let entry = &cfg.workloads[w];
    let master = cfg.master_seed;
    let trace_seed = derive_seed(master, &[0, w as u64, s as u64]);
    let trace_id = format!("w{w}:{}:{}#{s}", entry.kind, entry.length);
    let cell_err = |msg: String| HarnessError::Cell {
        cell: trace_id.clone(),
        msg,
    };
    let parsed = load(&WorkloadSpec::new(
        entry.kind.clone(),
        entry.length,
        trace_seed,
    ))
    .map_err(|e| cell_err(e.to_string()))?;
    let trace = parsed.trace;
    let nu = compute_next_occurrence(&trace);

    let mut slots = Vec::new();
    if let Some(omega) = parsed.predictions {
        let losses = compute_losses(&nu, &omega).map_err(|e| cell_err(e.to_string()))?;
        slots.push(NoiseSlot {
            label: "file".into(),
            omega: Some(omega),
            losses: Some(losses),
        });
    } else if cfg.noise.is_empty() {
        slots.push(NoiseSlot {
            label: "none".into(),
            omega: None,
            losses: None,
        });
    } else {
        for (n, kind) in cfg.noise.iter().enumerate() {
            let model = NoiseModel::new(
                *kind,
                derive_seed(master, &[1, w as u64, s as u64, n as u64]),
            );
            let omega = generate_predictions(&nu, &model).map_err(|e| cell_err(e.to_string()))?;
            let losses = compute_losses(&nu, &omega).map_err(|e| cell_err(e.to_string()))?;
            slots.push(NoiseSlot {
                label: kind.to_string(),
                omega: Some(omega),
                losses: Some(losses),
            });
        }
    }

    let mut rows = Vec::new();
    for (ki, &k) in cfg.cache_sizes.iter().enumerate() {
        let opt = run(&trace, &nu, None, &PolicySpec::Belady, k, 0)
            .map_err(|e| cell_err(e.to_string()))?
            .misses;
        for (n, slot) in slots.iter().enumerate() {
            for (p, policy) in cfg.policies.iter().enumerate() {
                let seed = derive_seed(
                    master,
                    &[2, w as u64, s as u64, ki as u64, n as u64, p as u64],
                );
                let row = run_cell(cfg, &trace, &nu, slot, policy, k, seed, opt).map_err(|e| {
                    HarnessError::Cell {
                        cell: format!("{trace_id} k={k} noise={} policy={policy}", slot.label),
                        msg: e,
                    }
                })?;
                rows.push(ResultRow {
                    trace_id: trace_id.clone(),
                    ..row
                });
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    trace: &RequestTrace,
    nu: &NextOccurrence,
    slot: &NoiseSlot,
    policy: &PolicySpec,
    k: usize,
    seed: u64,
    opt: u64,
) -> Result<ResultRow, String> {
    let omega = slot.omega.as_ref();
    if omega.is_none() && policy.uses_predictions() {
        return Err(EngineError::MissingPredictions {
            policy: policy.to_string(),
        }
        .to_string());
    }
    let started = Instant::now();
    let result = run(trace, nu, omega, policy, k, seed).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let losses = slot.losses.as_ref();
    let (report, edges) = if cfg.verify {
        let graph = build_eviction_graph(trace, nu, &result, k).map_err(|e| e.to_string())?;
        if graph.opt != opt {
            return Err(format!(
                "certificate OPT {} differs from Belady {opt}",
                graph.opt
            ));
        }
        (
            check_bounds(policy, &result, &graph, losses, k),
            Some(graph.edge_count()),
        )
    } else {
        let mut r = BoundReport::default();
        check_outcome_bounds(policy, &result, opt, losses, k, &mut r);
        (r, None)
    };
    Ok(ResultRow {
        trace_id: String::new(),
        policy: policy.to_string(),
        k,
        noise: slot.label.clone(),
        seed,
        misses: result.misses,
        opt,
        eta: losses.map_or(0.0, |l| l.eta_total),
        ratio: result.misses as f64 / opt.max(1) as f64,
        bounds_passed: report.all_passed(),
        runtime_ms: cfg.timing.then_some(elapsed.as_secs_f64() * 1e3),
        inversions: losses.map_or(0, |l| l.inversions_total),
        leg_misses: result.leg_misses,
        edges,
        report,
    })
}

pub fn summarize(master_seed: u64, rows: &[ResultRow]) -> RunSummary {
    let mut order: Vec<String> = Vec::new();
    let mut by_policy: BTreeMap<String, (usize, f64, f64, usize)> = BTreeMap::new();
    let mut failed_checks = BTreeMap::new();
    for r in rows {
        let e = by_policy.entry(r.policy.clone()).or_insert_with(|| {
            order.push(r.policy.clone());
            (0, 0.0, 0.0, 0)
        });
        e.0 += 1;
        e.1 += r.ratio;
        e.2 = e.2.max(r.ratio);
        e.3 += usize::from(!r.bounds_passed);
        for f in r.report.failures() {
            *failed_checks.entry(f.name.clone()).or_insert(0) += 1;
        }
    }
    let policies = order
        .into_iter()
        .map(|p| {
            let (cells, sum, max, fails) = by_policy[&p];
            PolicySummary {
                policy: p,
                cells,
                mean_ratio: sum / cells as f64,
                max_ratio: max,
                bound_failures: fails,
            }
        })
        .collect();
    RunSummary {
        master_seed,
        cells: rows.len(),
        bound_failures: rows.iter().filter(|r| !r.bounds_passed).count(),
        failed_checks,
        policies,
    }
}

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.csv_record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Human-readable per-policy table.
pub fn render_summary_table(summary: &RunSummary) -> String {
    let w = summary
        .policies
        .iter()
        .map(|p| p.policy.len())
        .max()
        .unwrap_or(0)
        .max("policy".len());
    let mut out = format!(
        "{:<w$} {:>7} {:>10} {:>10} {:>8}\n",
        "policy", "cells", "mean", "max", "failed"
    );
    for p in &summary.policies {
        out.push_str(&format!(
            "{:<w$} {:>7} {:>10.4} {:>10.4} {:>8}\n",
            p.policy, p.cells, p.mean_ratio, p.max_ratio, p.bound_failures
        ));
    }
    for (name, n) in &summary.failed_checks {
        out.push_str(&format!("failed check {name}: {n} cells\n"));
    }
    out
}

/// Mean behaviour of one (policy, k, noise) group over workloads and seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub policy: String,
    pub k: usize,
    pub noise: String,
    pub cells: usize,
    pub eta_over_opt: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    /// Mean of `sqrt(eta / (k * OPT))`.
    pub abscissa: f64,
}

/// Groups rows by (policy, k, noise), in order of first appearance.
pub fn curve(rows: &[ResultRow]) -> Vec<CurvePoint> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut index: BTreeMap<(String, usize, String), usize> = BTreeMap::new();
    for r in rows {
        let key = (r.policy.clone(), r.k, r.noise.clone());
        let i = *index.entry(key).or_insert_with(|| {
            points.push(CurvePoint {
                policy: r.policy.clone(),
                k: r.k,
                noise: r.noise.clone(),
                cells: 0,
                eta_over_opt: 0.0,
                mean_ratio: 0.0,
                max_ratio: 0.0,
                abscissa: 0.0,
            });
            points.len() - 1
        });
        let p = &mut points[i];
        let opt = r.opt.max(1) as f64;
        p.cells += 1;
        p.eta_over_opt += r.eta / opt;
        p.mean_ratio += r.ratio;
        p.max_ratio = p.max_ratio.max(r.ratio);
        p.abscissa += (r.eta / (r.k as f64 * opt)).sqrt();
    }
    for p in &mut points {
        let n = p.cells as f64;
        p.eta_over_opt /= n;
        p.mean_ratio /= n;
        p.abscissa /= n;
    }
    points
}

pub fn render_curve_csv(points: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER).expect("in-memory write");
    for p in points {
        w.write_record([
            p.policy.clone(),
            p.k.to_string(),
            p.noise.clone(),
            p.cells.to_string(),
            format!("{:.6}", p.eta_over_opt),
            format!("{:.6}", p.mean_ratio),
            format!("{:.6}", p.max_ratio),
            format!("{:.6}", p.abscissa),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

/// Fits mean ratio against the abscissa over all points of `policy`.
pub fn fit_policy(points: &[CurvePoint], policy: &str) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.policy == policy)
        .map(|p| (p.abscissa, p.mean_ratio))
        .unzip();
    fit_line(&xs, &ys)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveSummary {
    pub master_seed: u64,
    pub points: Vec<CurvePoint>,
    /// Fit per policy, in config order.
    pub fits: Vec<(String, Option<LinearFit>)>,
}

pub fn curve_summary(cfg: &ExperimentConfig, rows: &[ResultRow]) -> CurveSummary {
    let points = curve(rows);
    let fits = cfg
        .policies
        .iter()
        .map(|p| {
            let name = p.to_string();
            let fit = fit_policy(&points, &name);
            (name, fit)
        })
        .collect();
    CurveSummary {
        master_seed: cfg.master_seed,
        points,
        fits,
    }
}

/// Writes `(path, contents)` pairs; on any failure removes every file
/// this call created or overwrote.
pub fn write_outputs(files: &[(&Path, &str)]) -> Result<(), HarnessError> {
    let mut written: Vec<&Path> = Vec::new();
    for &(path, contents) in files {
        let res = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| fs::write(path, contents));
        if let Err(source) = res {
            for p in written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(path);
            return Err(HarnessError::Io {
                path: path.to_path_buf(),
                source,
            });
        }
        written.push(path);
    }
    Ok(())
}

/// Trace, next occurrences and inline predictions for a single workload.
pub fn prepare_trace(
    kind: &WorkloadKind,
    length: usize,
    seed: u64,
) -> Result<(RequestTrace, NextOccurrence, Option<PredictionTrace>), HarnessError> {
    let parsed =
        load(&WorkloadSpec::new(kind.clone(), length, seed)).map_err(|e| HarnessError::Cell {
            cell: kind.to_string(),
            msg: e.to_string(),
        })?;
    let nu = compute_next_occurrence(&parsed.trace);
    Ok((parsed.trace, nu, parsed.predictions))
}

/// Exhaustive optimum and Belady's misses, side by side.
pub fn oracle_compare(trace: &RequestTrace, k: usize) -> Result<(u64, u64), EngineError> {
    let brute = brute_force_opt(trace, k)?;
    let nu = compute_next_occurrence(trace);
    let belady = run(trace, &nu, None, &PolicySpec::Belady, k, 0)?.misses;
    Ok((brute, belady))
}
