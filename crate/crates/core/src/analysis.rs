//! Eviction-graph certificates and per-run bound checks.
//!
//! [`build_eviction_graph`] replays a finished run next to Belady and
//! maintains a matching between the two index sets. Whenever the run
//! evicts an index that was matched and no isolated index can take its
//! place, the run made a mistake and an edge is added to the graph. The
//! construction certifies `OBJ(t) + Phi(t) <= OPT(t) + |E(t)|` at every
//! prefix, hence `OBJ <= OPT + |E|`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, SimulationResult, StepOutcome, Stepper};
use crate::policy::{CacheState, PolicySpec, StrategyTag, Time};
use crate::trace::{LossSummary, NextOccurrence, PredictionTrace, RequestTrace};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("run does not match the trace at t={time}: {msg}")]
    Inconsistent { time: Time, msg: String },
    #[error("certificate invariant violated at t={time}: {msg}")]
    Invariant { time: Time, msg: String },
    #[error("graph edge evicted at t={time} has no eviction record")]
    MissingProvenance { time: Time },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which step of the construction produced an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MistakeKind {
    /// The requested page was cached by Belady only.
    OptHit,
    /// Both missed.
    BothMiss,
}

/// Edge `(from, to)`: at `mistake_time` the run evicted index `to` while
/// index `from`, requested later, was cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphEdge {
    pub from: Time,
    pub to: Time,
    pub nu_from: Time,
    pub nu_to: Time,
    pub mistake_time: Time,
    pub kind: MistakeKind,
}

/// Both sides of the certified inequality after processing `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrefixState {
    pub time: Time,
    pub obj: u64,
    pub opt: u64,
    pub phi: usize,
    pub edges: usize,
}

impl PrefixState {
    pub fn holds(&self) -> bool {
        self.obj + self.phi as u64 <= self.opt + self.edges as u64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvictionGraph {
    /// Trace length; vertices are `1..=horizon`.
    pub horizon: usize,
    pub edges: Vec<GraphEdge>,
    pub obj: u64,
    pub opt: u64,
    pub prefixes: Vec<PrefixState>,
}

impl EvictionGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn first_prefix_violation(&self) -> Option<&PrefixState> {
        self.prefixes.iter().find(|p| !p.holds())
    }

    pub fn max_in_degree(&self) -> usize {
        let mut deg: HashMap<Time, usize> = HashMap::new();
        for e in &self.edges {
            *deg.entry(e.to).or_default() += 1;
        }
        deg.into_values().max().unwrap_or(0)
    }

    /// Edges that break `nu(from) > nu(to)` (the acyclicity witness).
    pub fn non_decreasing_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.nu_from <= e.nu_to).count()
    }

    /// Edges whose target is a last occurrence.
    pub fn edges_beyond_horizon(&self) -> usize {
        self.edges.iter().filter(|e| e.nu_to > self.horizon).count()
    }

    /// Mistake times that produced more than one edge.
    pub fn repeated_mistakes(&self) -> usize {
        let times: BTreeSet<Time> = self.edges.iter().map(|e| e.mistake_time).collect();
        self.edges.len() - times.len()
    }

    /// Acyclicity checked directly by walking parent pointers.
    pub fn is_acyclic(&self) -> bool {
        let parent: HashMap<Time, Time> = self.edges.iter().map(|e| (e.to, e.from)).collect();
        for &start in parent.keys() {
            let mut cur = start;
            for _ in 0..=parent.len() {
                match parent.get(&cur) {
                    Some(&p) if p == start => return false,
                    Some(&p) => cur = p,
                    None => break,
                }
            }
        }
        true
    }
}

/// The bipartite matching `X(t)` between Belady's indices and the run's.
#[derive(Default)]
struct Matching {
    opt_to_run: HashMap<Time, Time>,
    run_to_opt: HashMap<Time, Time>,
    isolated_run: BTreeSet<Time>,
}

impl Matching {
    fn remove_opt(&mut self, x: Time) {
        if let Some(y) = self.opt_to_run.remove(&x) {
            self.run_to_opt.remove(&y);
            self.isolated_run.insert(y);
        }
    }

    fn remove_run(&mut self, y: Time) {
        if let Some(x) = self.run_to_opt.remove(&y) {
            self.opt_to_run.remove(&x);
        }
        self.isolated_run.remove(&y);
    }

    fn add_fresh(&mut self, t: Time) {
        self.opt_to_run.insert(t, t);
        self.run_to_opt.insert(t, t);
    }

    fn pair(&mut self, x: Time, y: Time, nu: &NextOccurrence) -> Result<(), String> {
        if nu.at(x) < nu.at(y) {
            return Err(format!(
                "matching {x} to {y} would break nu({x}) >= nu({y})"
            ));
        }
        if self.opt_to_run.contains_key(&x) || !self.isolated_run.remove(&y) {
            return Err(format!("matching {x} to {y}: endpoint already matched"));
        }
        self.opt_to_run.insert(x, y);
        self.run_to_opt.insert(y, x);
        Ok(())
    }

    /// Smallest isolated run index with `nu <= bound`.
    fn isolated_at_most(&self, bound: Time, nu: &NextOccurrence) -> Option<Time> {
        self.isolated_run
            .iter()
            .copied()
            .find(|&y| nu.at(y) <= bound)
    }

    fn smallest_isolated(&self) -> Option<Time> {
        self.isolated_run.first().copied()
    }
}

/// Replays `run` (a finished simulation on `trace` with capacity `k`)
/// against Belady and builds its eviction graph.
pub fn build_eviction_graph(
    trace: &RequestTrace,
    nu: &NextOccurrence,
    run: &SimulationResult,
    k: usize,
) -> Result<EvictionGraph, AnalysisError> {
    let inconsistent = |time: Time, msg: String| AnalysisError::Inconsistent { time, msg };
    let broken = |time: Time, msg: String| AnalysisError::Invariant { time, msg };
    if nu.len() != trace.len() {
        return Err(inconsistent(
            0,
            "next-occurrence array length differs".into(),
        ));
    }
    if run.k != k {
        return Err(inconsistent(
            0,
            format!("run used k={}, asked for k={k}", run.k),
        ));
    }

    let mut opt = Stepper::new(PolicySpec::Belady.build(k, 0)?, k, 0)?;
    let mut cache = CacheState::new(k);
    let mut x = Matching::default();
    let mut edges = Vec::new();
    let mut prefixes = Vec::with_capacity(trace.len());
    let mut obj = 0u64;
    let mut replayed = 0usize;

    for (idx, &page) in trace.requests().iter().enumerate() {
        let t = idx + 1;
        if opt.cache().len() != cache.len() {
            return Err(broken(
                t,
                "Belady and the run filled their caches differently".into(),
            ));
        }
        let opt_prev = opt.cache().entry(page).map(|e| e.last_request);
        let run_prev = cache.entry(page).map(|e| e.last_request);
        let record = run.record_at(t);

        // Belady's step; `a` is its victim.
        let a = match opt.step(t, page, &[], Some(nu))? {
            StepOutcome::Miss(Some(pos)) => Some(opt.log()[pos].victim_index),
            _ => None,
        };

        // The run's step, replayed from its log; `b` is its victim.
        let b = if cache.touch(page, t) {
            if record.is_some() {
                return Err(inconsistent(t, "eviction recorded on a hit".into()));
            }
            None
        } else {
            obj += 1;
            let b = if cache.is_full() {
                let r = record.ok_or_else(|| {
                    inconsistent(t, "miss on a full cache without an eviction record".into())
                })?;
                let gone = cache
                    .evict_index(r.victim_index)
                    .map_err(|e| inconsistent(t, e.to_string()))?;
                if gone.page != r.victim_page {
                    return Err(inconsistent(
                        t,
                        format!(
                            "record names page {} but index {} holds page {}",
                            r.victim_page, r.victim_index, gone.page
                        ),
                    ));
                }
                replayed += 1;
                Some(r.victim_index)
            } else {
                if record.is_some() {
                    return Err(inconsistent(
                        t,
                        "eviction recorded while the cache had room".into(),
                    ));
                }
                None
            };
            cache
                .insert(page, t)
                .map_err(|e| inconsistent(t, e.to_string()))?;
            b
        };

        match (opt_prev, run_prev) {
            // Requested page cached by both: j can only be matched to itself.
            (Some(j), Some(j2)) => {
                debug_assert_eq!(j, j2);
                if let Some(&y) = x.opt_to_run.get(&j) {
                    if y != j {
                        return Err(broken(t, format!("index {j} of Belady matched to {y}")));
                    }
                }
                x.remove_opt(j);
                x.remove_run(j);
            }
            // Cached by the run only; Belady evicted a.
            (None, Some(j)) => {
                let a = a.ok_or_else(|| broken(t, "Belady missed without evicting".into()))?;
                x.remove_opt(a);
                x.remove_run(j);
            }
            // Cached by Belady only; the run evicted b.
            (Some(j), None) => {
                let b = b.ok_or_else(|| broken(t, "the run missed without evicting".into()))?;
                if x.opt_to_run.contains_key(&j) {
                    return Err(broken(
                        t,
                        format!("Belady index {j} is matched although the run lacks it"),
                    ));
                }
                match x.run_to_opt.get(&b).copied() {
                    None => x.remove_run(b),
                    Some(a) => {
                        if let Some(b2) = x.isolated_at_most(nu.at(b), nu) {
                            x.remove_run(b);
                            x.pair(a, b2, nu).map_err(|m| broken(t, m))?;
                        } else {
                            let from = x.smallest_isolated().ok_or_else(|| {
                                broken(t, "no isolated run index for a mistake edge".into())
                            })?;
                            edges.push(edge(from, b, t, MistakeKind::OptHit, nu));
                            x.remove_run(b);
                        }
                    }
                }
                x.remove_opt(j);
            }
            // Missed by both.
            (None, None) => match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    let pa = x.opt_to_run.get(&a).copied();
                    let pb = x.run_to_opt.get(&b).copied();
                    match (pa, pb) {
                        (Some(_), Some(a2)) if a2 != a => {
                            x.remove_opt(a);
                            x.remove_run(b);
                            if let Some(b2) = x.isolated_at_most(nu.at(b), nu) {
                                x.pair(a2, b2, nu).map_err(|m| broken(t, m))?;
                            } else {
                                let from = x.smallest_isolated().ok_or_else(|| {
                                    broken(t, "no isolated run index for a mistake edge".into())
                                })?;
                                edges.push(edge(from, b, t, MistakeKind::BothMiss, nu));
                            }
                        }
                        _ => {
                            x.remove_opt(a);
                            x.remove_run(b);
                        }
                    }
                }
                _ => return Err(broken(t, "only one of Belady and the run evicted".into())),
            },
        }
        x.add_fresh(t);

        prefixes.push(PrefixState {
            time: t,
            obj,
            opt: opt.misses(),
            phi: x.isolated_run.len(),
            edges: edges.len(),
        });
    }

    if obj != run.misses {
        return Err(inconsistent(
            trace.len(),
            format!("replayed {obj} misses, run reports {}", run.misses),
        ));
    }
    if replayed != run.eviction_log.len() {
        return Err(inconsistent(
            trace.len(),
            format!(
                "replayed {replayed} evictions, log has {}",
                run.eviction_log.len()
            ),
        ));
    }
    Ok(EvictionGraph {
        horizon: trace.len(),
        edges,
        obj,
        opt: opt.misses(),
        prefixes,
    })
}

fn edge(from: Time, to: Time, t: Time, kind: MistakeKind, nu: &NextOccurrence) -> GraphEdge {
    GraphEdge {
        from,
        to,
        nu_from: nu.at(from),
        nu_to: nu.at(to),
        mistake_time: t,
        kind,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundReport {
    pub entries: Vec<BoundCheck>,
}

impl BoundReport {
    /// Records `lhs <= rhs` under `name`.
    pub fn push(&mut self, name: &str, lhs: f64, rhs: f64) {
        self.entries.push(BoundCheck {
            name: name.to_string(),
            lhs,
            rhs,
            passed: lhs <= rhs,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.entries.iter().filter(|e| !e.passed)
    }

    /// One line per bound: name, lhs, rhs, verdict.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let verdict = if e.passed { "pass" } else { "FAIL" };
            let (l, r) = (fmt_num(e.lhs), fmt_num(e.rhs));
            let _ = writeln!(out, "{:<24} {l:>14} <= {r:<14} {verdict}", e.name);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Integers print exactly, everything else to three decimals.
fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

/// Checks every bound that applies to `policy` on this run. `losses` are
/// those of the predictions the run saw, if any.
pub fn check_bounds(
    policy: &PolicySpec,
    run: &SimulationResult,
    graph: &EvictionGraph,
    losses: Option<&LossSummary>,
    k: usize,
) -> BoundReport {
    let mut r = BoundReport::default();
    let obj = run.misses as f64;
    let opt = graph.opt as f64;
    let edges = graph.edge_count() as f64;

    r.push("obj_le_opt_plus_edges", obj, opt + edges);
    let worst = graph
        .prefixes
        .iter()
        .max_by_key(|p| (p.obj + p.phi as u64) as i64 - (p.opt + p.edges as u64) as i64);
    match worst {
        Some(p) => r.push(
            "prefix_potential",
            (p.obj + p.phi as u64) as f64,
            (p.opt + p.edges as u64) as f64,
        ),
        None => r.push("prefix_potential", 0.0, 0.0),
    }
    r.push("forest_in_degree", graph.max_in_degree() as f64, 1.0);
    r.push(
        "forest_acyclic",
        f64::from(u8::from(!graph.is_acyclic())),
        0.0,
    );
    r.push(
        "edge_nu_decreasing",
        graph.non_decreasing_edges() as f64,
        0.0,
    );
    r.push(
        "edge_nu_within_horizon",
        graph.edges_beyond_horizon() as f64,
        0.0,
    );
    r.push("edge_per_mistake", graph.repeated_mistakes() as f64, 0.0);

    if let (Some(l), PolicySpec::BlindOracle) = (losses, policy) {
        r.push("edges_vs_eta", edges, l.eta_total);
    }
    check_outcome_bounds(policy, run, graph.opt, losses, k, &mut r);
    r
}

/// The bounds that need only the run's outcome, OPT and the prediction
/// losses, not a certificate.
pub fn check_outcome_bounds(
    policy: &PolicySpec,
    run: &SimulationResult,
    opt: u64,
    losses: Option<&LossSummary>,
    k: usize,
    r: &mut BoundReport,
) {
    let obj = run.misses as f64;
    let opt = opt as f64;
    let kf = k as f64;
    if let Some(l) = losses {
        let eta = l.eta_total;
        r.push("inversions", l.inversions_total as f64, 2.0 * eta);
        match policy {
            PolicySpec::BlindOracle => {
                r.push("opt_plus_eta", obj, opt + eta);
                r.push("three_opt_eta_over_k", obj, 3.0 * opt + 3.0 * eta / kf);
            }
            PolicySpec::AlternatingOracle => {
                r.push("three_opt_three_eta", obj, 3.0 * opt + 3.0 * eta)
            }
            _ => {}
        }
    }
    match policy {
        PolicySpec::Lru => r.push("lru_envelope", obj, kf * opt + kf),
        PolicySpec::CombineDet(..) => {
            if let Some(legs) = run.leg_misses {
                let best = legs[0].min(legs[1]) as f64;
                r.push("combiner_envelope", obj, 2.0 * best + 4.0 * kf);
            }
        }
        _ => {}
    }
}

/// The left/right loss inequality for an edge `(i, j)`:
/// `eta-(i) + eta+(j) >= nu(i) - nu(j)`.
pub fn witness_holds(nu_i: Time, nu_j: Time, omega_i: f64, omega_j: f64) -> bool {
    let minus_i = (nu_i as f64 - omega_i).max(0.0);
    let plus_j = (omega_j - nu_j as f64).max(0.0);
    minus_i + plus_j >= nu_i as f64 - nu_j as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WitnessReport {
    /// Edges whose mistake was a BlindOracle choice.
    pub checked_edges: usize,
    /// Human-readable description of each failed check.
    pub violations: Vec<String>,
    /// `sum_i s(i)` over sources whose out-edges are all BlindOracle choices.
    pub witness_sum: f64,
    /// Out-edges of those sources.
    pub covered_edges: usize,
    pub eta: f64,
}

impl WitnessReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
            && self.witness_sum >= self.covered_edges as f64
            && self.witness_sum <= self.eta
    }
}

/// For every edge produced by a BlindOracle eviction, checks that the
/// evicted index had the larger prediction and the loss inequality, then
/// the per-source witness sums `s(i) >= d_i` and `sum s(i) <= eta`.
pub fn verify_witnesses(
    graph: &EvictionGraph,
    nu: &NextOccurrence,
    omega: &PredictionTrace,
    run: &SimulationResult,
) -> Result<WitnessReport, AnalysisError> {
    let plus = |t: Time| (omega.at(t) - nu.at(t) as f64).max(0.0);
    let minus = |t: Time| (nu.at(t) as f64 - omega.at(t)).max(0.0);
    let mut report = WitnessReport {
        eta: (1..=nu.len()).map(|t| plus(t) + minus(t)).sum(),
        ..Default::default()
    };
    let mut by_source: HashMap<Time, (bool, Vec<Time>)> = HashMap::new();
    for e in &graph.edges {
        let rec = run
            .record_at(e.mistake_time)
            .ok_or(AnalysisError::MissingProvenance {
                time: e.mistake_time,
            })?;
        if rec.victim_index != e.to {
            return Err(AnalysisError::Inconsistent {
                time: e.mistake_time,
                msg: format!(
                    "edge targets {} but the run evicted {}",
                    e.to, rec.victim_index
                ),
            });
        }
        let blind = rec.strategy_tag == StrategyTag::BlindOracle;
        let slot = by_source.entry(e.from).or_insert((true, Vec::new()));
        slot.0 &= blind;
        slot.1.push(e.to);
        if !blind {
            continue;
        }
        report.checked_edges += 1;
        let (wi, wj) = (omega.at(e.from), omega.at(e.to));
        if wj < wi {
            report.violations.push(format!(
                "t={}: evicted {} with omega {wj} while {} had omega {wi}",
                e.mistake_time, e.to, e.from
            ));
        }
        if !witness_holds(e.nu_from, e.nu_to, wi, wj) {
            report.violations.push(format!(
                "t={}: loss inequality fails on edge ({}, {})",
                e.mistake_time, e.from, e.to
            ));
        }
    }
    let mut sources: Vec<_> = by_source.into_iter().filter(|(_, (all, _))| *all).collect();
    sources.sort_by_key(|(i, _)| *i);
    for (i, (_, targets)) in sources {
        let s = minus(i) + targets.iter().map(|&j| plus(j)).sum::<f64>();
        if s < targets.len() as f64 {
            report.violations.push(format!(
                "source {i}: witness {s} below out-degree {}",
                targets.len()
            ));
        }
        report.witness_sum += s;
        report.covered_edges += targets.len();
    }
    Ok(report)
}

/// A run together with its certificate and bound report.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub run: SimulationResult,
    pub graph: EvictionGraph,
    pub losses: Option<LossSummary>,
    pub witnesses: Option<WitnessReport>,
    pub report: BoundReport,
}

/// Runs `policy`, builds its eviction graph and checks all bounds. Edge
/// loss witnesses are checked whenever the run produced BlindOracle evictions.
pub fn certify(
    trace: &RequestTrace,
    nu: &NextOccurrence,
    omega: Option<&PredictionTrace>,
    policy: &PolicySpec,
    k: usize,
    seed: u64,
) -> Result<Certificate, AnalysisError> {
    let run = crate::engine::run(trace, nu, omega, policy, k, seed)?;
    let graph = build_eviction_graph(trace, nu, &run, k)?;
    let losses =
        match omega {
            Some(w) => Some(crate::trace::compute_losses(nu, w).map_err(|e| {
                AnalysisError::Inconsistent {
                    time: 0,
                    msg: e.to_string(),
                }
            })?),
            None => None,
        };
    let mut report = check_bounds(policy, &run, &graph, losses.as_ref(), k);
    let witnesses = match omega {
        Some(w) if run.evictions_by_tag.contains_key(&StrategyTag::BlindOracle) => {
            let wr = verify_witnesses(&graph, nu, w, &run)?;
            push_witness_checks(&mut report, &wr, policy);
            Some(wr)
        }
        _ => None,
    };
    Ok(Certificate {
        run,
        graph,
        losses,
        witnesses,
        report,
    })
}

fn push_witness_checks(report: &mut BoundReport, wr: &WitnessReport, policy: &PolicySpec) {
    report.push("witness_violations", wr.violations.len() as f64, 0.0);
    if matches!(policy, PolicySpec::BlindOracle) {
        report.push("witness_cover", wr.covered_edges as f64, wr.witness_sum);
        report.push("witness_sum", wr.witness_sum, wr.eta);
    }
}
