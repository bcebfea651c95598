//! Drives a policy over a trace: hit/miss accounting, cache updates,
//! trigger tracking and the eviction log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::policy::{
    CacheState, DecisionContext, EvictionHistory, EvictionPolicy, PolicyError, PolicySpec, Request,
    StrategyTag, Time,
};
use crate::rng::{sim_rng, SimRng};
use crate::trace::{NextOccurrence, PageId, PredictionTrace, RequestTrace};

/// Instance limits for [`brute_force_opt`].
pub const BRUTE_FORCE_MAX_LEN: usize = 16;
pub const BRUTE_FORCE_MAX_PAGES: usize = 7;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cache capacity must be at least 1")]
    InvalidCapacity,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("policy {policy} requires predictions")]
    MissingPredictions { policy: String },
    #[error("{what} has length {actual}, trace has length {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("gamma must lie in (0, 1/4), got {0}")]
    InvalidGamma(f64),
    #[error("trigger bookkeeping broken at t={time}: {msg}")]
    Trigger { time: Time, msg: String },
    #[error(
        "instance too large for exhaustive search: T={len} (max {BRUTE_FORCE_MAX_LEN}), \
         {pages} distinct pages (max {BRUTE_FORCE_MAX_PAGES})"
    )]
    GuardExceeded { len: usize, pages: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvictionRecord {
    pub time: Time,
    pub victim_index: Time,
    pub victim_page: PageId,
    pub strategy_tag: StrategyTag,
    /// Position in the log of the eviction that triggered this one.
    pub triggered_by: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationResult {
    pub policy: String,
    pub k: usize,
    pub seed: u64,
    /// OBJ: total misses.
    pub misses: u64,
    pub hits: u64,
    /// Misses served without an eviction while the cache was filling.
    pub fill_misses: u64,
    pub eviction_log: Vec<EvictionRecord>,
    pub evictions_by_tag: BTreeMap<StrategyTag, u64>,
    pub leg_misses: Option<[u64; 2]>,
    pub future_reads: usize,
    pub wall_time: Duration,
}

impl SimulationResult {
    /// The eviction performed at `time`, if any.
    pub fn record_at(&self, time: Time) -> Option<&EvictionRecord> {
        self.eviction_log
            .binary_search_by_key(&time, |r| r.time)
            .ok()
            .map(|pos| &self.eviction_log[pos])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Hit,
    /// Miss; carries the eviction-log position if something was evicted.
    Miss(Option<usize>),
}

/// One policy's simulation state, advanced a request at a time.
pub struct Stepper {
    cache: CacheState,
    history: EvictionHistory,
    rng: SimRng,
    policy: Box<dyn EvictionPolicy>,
    log: Vec<EvictionRecord>,
    evictions_by_tag: BTreeMap<StrategyTag, u64>,
    misses: u64,
    hits: u64,
    fill_misses: u64,
    future_reads: usize,
    seed: u64,
}

impl Stepper {
    pub fn new(policy: Box<dyn EvictionPolicy>, k: usize, seed: u64) -> Result<Self, EngineError> {
        if k < 1 {
            return Err(EngineError::InvalidCapacity);
        }
        Ok(Self {
            cache: CacheState::new(k),
            history: EvictionHistory::default(),
            rng: sim_rng(seed),
            policy,
            log: Vec::new(),
            evictions_by_tag: BTreeMap::new(),
            misses: 0,
            hits: 0,
            fill_misses: 0,
            future_reads: 0,
            seed,
        })
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn policy(&self) -> &dyn EvictionPolicy {
        self.policy.as_ref()
    }

    pub fn log(&self) -> &[EvictionRecord] {
        &self.log
    }

    /// Processes the request for `page` at time `t`. `nu`, when given, is
    /// used to cross-check trigger links and is forwarded to policies that
    /// declare they need it.
    pub fn step(
        &mut self,
        t: Time,
        page: PageId,
        predictions: &[f64],
        nu: Option<&NextOccurrence>,
    ) -> Result<StepOutcome, EngineError> {
        let needs_future = self.policy.needs_future();
        let future = if needs_future { nu } else { None };
        self.policy.observe(&Request {
            time: t,
            page,
            predictions,
            future,
        })?;

        if self.cache.touch(page, t) {
            self.hits += 1;
            self.policy.on_hit(page, t);
            self.history.mark_requested(page);
            return Ok(StepOutcome::Hit);
        }

        self.misses += 1;
        let mut evicted = None;
        if self.cache.is_full() {
            let decision = {
                let mut ctx = DecisionContext::new(
                    t,
                    page,
                    &self.cache,
                    &self.history,
                    &mut self.rng,
                    predictions,
                );
                if let Some(nu) = future {
                    ctx = ctx.with_future(nu);
                }
                let d = self.policy.choose_victim(&mut ctx)?;
                self.future_reads += ctx.future_reads();
                d
            };
            let triggered_by = self.trigger_of(t, page, nu)?;
            let gone = self.cache.evict_index(decision.victim_index)?;
            self.policy.on_evict(gone.page);
            let pos = self.log.len();
            self.log.push(EvictionRecord {
                time: t,
                victim_index: gone.last_request,
                victim_page: gone.page,
                strategy_tag: decision.tag,
                triggered_by,
            });
            self.history.record_eviction(gone.page, decision.tag, pos);
            *self.evictions_by_tag.entry(decision.tag).or_default() += 1;
            evicted = Some(pos);
        } else {
            self.fill_misses += 1;
        }
        self.cache.insert(page, t)?;
        self.policy.on_insert(page, t);
        self.history.mark_requested(page);
        Ok(StepOutcome::Miss(evicted))
    }

    /// A miss on a page that was requested before can only happen after
    /// that page was evicted, and its latest eviction is the trigger.
    fn trigger_of(
        &self,
        t: Time,
        page: PageId,
        nu: Option<&NextOccurrence>,
    ) -> Result<Option<usize>, EngineError> {
        if !self.history.was_requested(page) {
            return Ok(None);
        }
        let (_, pos) =
            self.history
                .last_eviction_record(page)
                .ok_or_else(|| EngineError::Trigger {
                    time: t,
                    msg: format!("page {page} missed without an eviction record"),
                })?;
        if let Some(nu) = nu {
            let parent = &self.log[pos];
            if nu.at(parent.victim_index) != t {
                return Err(EngineError::Trigger {
                    time: t,
                    msg: format!(
                        "parent eviction at t={} has next request {}",
                        parent.time,
                        nu.at(parent.victim_index)
                    ),
                });
            }
        }
        Ok(Some(pos))
    }

    pub fn finish(self, wall_time: Duration) -> SimulationResult {
        SimulationResult {
            policy: self.policy.name(),
            k: self.cache.capacity(),
            seed: self.seed,
            misses: self.misses,
            hits: self.hits,
            fill_misses: self.fill_misses,
            leg_misses: self.policy.leg_misses(),
            eviction_log: self.log,
            evictions_by_tag: self.evictions_by_tag,
            future_reads: self.future_reads,
            wall_time,
        }
    }
}

/// Runs `policy` (built with `seed`) over the whole trace.
pub fn run(
    trace: &RequestTrace,
    nu: &NextOccurrence,
    omega: Option<&PredictionTrace>,
    policy: &PolicySpec,
    k: usize,
    seed: u64,
) -> Result<SimulationResult, EngineError> {
    run_policy(trace, nu, omega, policy.build(k, seed)?, k, seed)
}

pub fn run_policy(
    trace: &RequestTrace,
    nu: &NextOccurrence,
    omega: Option<&PredictionTrace>,
    policy: Box<dyn EvictionPolicy>,
    k: usize,
    seed: u64,
) -> Result<SimulationResult, EngineError> {
    if nu.len() != trace.len() {
        return Err(EngineError::LengthMismatch {
            what: "next-occurrence array",
            expected: trace.len(),
            actual: nu.len(),
        });
    }
    if let Some(w) = omega {
        if w.len() != trace.len() {
            return Err(EngineError::LengthMismatch {
                what: "prediction trace",
                expected: trace.len(),
                actual: w.len(),
            });
        }
    } else if policy.uses_predictions() {
        return Err(EngineError::MissingPredictions {
            policy: policy.name(),
        });
    }
    let predictions = omega.map(|w| w.as_slice()).unwrap_or(&[]);
    let started = Instant::now();
    let mut stepper = Stepper::new(policy, k, seed)?;
    for (idx, &page) in trace.requests().iter().enumerate() {
        stepper.step(idx + 1, page, predictions, Some(nu))?;
    }
    Ok(stepper.finish(started.elapsed()))
}

/// Minimum possible misses over all eviction sequences, by memoized
/// exhaustive search over (time, cache contents).
pub fn brute_force_opt(trace: &RequestTrace, k: usize) -> Result<u64, EngineError> {
    if k < 1 {
        return Err(EngineError::InvalidCapacity);
    }
    let len = trace.len();
    let pages = trace.distinct_pages();
    if len > BRUTE_FORCE_MAX_LEN || pages > BRUTE_FORCE_MAX_PAGES {
        return Err(EngineError::GuardExceeded { len, pages });
    }
    let mut memo = vec![[u8::MAX; 1 << BRUTE_FORCE_MAX_PAGES]; len + 1];
    Ok(opt_from(trace.requests(), k, 0, 0, &mut memo) as u64)
}

fn opt_from(
    reqs: &[PageId],
    k: usize,
    t: usize,
    cache: u8,
    memo: &mut [[u8; 1 << BRUTE_FORCE_MAX_PAGES]],
) -> u8 {
    if t == reqs.len() {
        return 0;
    }
    if memo[t][cache as usize] != u8::MAX {
        return memo[t][cache as usize];
    }
    let bit = 1u8 << reqs[t];
    let best = if cache & bit != 0 {
        opt_from(reqs, k, t + 1, cache, memo)
    } else if (cache.count_ones() as usize) < k {
        1 + opt_from(reqs, k, t + 1, cache | bit, memo)
    } else {
        1 + (0..BRUTE_FORCE_MAX_PAGES)
            .map(|p| 1u8 << p)
            .filter(|&victim| cache & victim != 0)
            .map(|victim| opt_from(reqs, k, t + 1, (cache & !victim) | bit, memo))
            .min()
            .expect("full cache has a victim")
    };
    memo[t][cache as usize] = best;
    best
}

/// A maximal sequence of evictions, each triggering the next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    /// Positions in the eviction log, in time order.
    pub records: Vec<usize>,
    pub victim_indices: Vec<Time>,
    pub tags: Vec<StrategyTag>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Splits the trigger forest into its maximal paths. Each eviction has at
/// most one successor (the unique miss at its victim's next request), so
/// the forest is a disjoint union of paths.
pub fn extract_chains(log: &[EvictionRecord]) -> Vec<Chain> {
    let mut successor: Vec<Option<usize>> = vec![None; log.len()];
    for (pos, rec) in log.iter().enumerate() {
        if let Some(parent) = rec.triggered_by {
            debug_assert!(successor[parent].is_none(), "eviction with two successors");
            successor[parent] = Some(pos);
        }
    }
    log.iter()
        .enumerate()
        .filter(|(_, r)| r.triggered_by.is_none())
        .map(|(root, _)| {
            let mut records = vec![root];
            while let Some(next) = successor[*records.last().unwrap()] {
                records.push(next);
            }
            Chain {
                victim_indices: records.iter().map(|&p| log[p].victim_index).collect(),
                tags: records.iter().map(|&p| log[p].strategy_tag).collect(),
                records,
            }
        })
        .collect()
}

pub const EVICTION_LOG_HEADER: &str =
    "time,victim_page,victim_index,strategy_tag,triggered_by_time";

/// Renders the log as `time,victim_page,victim_index,strategy_tag,triggered_by_time`
/// lines under a header; the last field is empty for untriggered evictions.
pub fn render_eviction_log(log: &[EvictionRecord], trace: &RequestTrace) -> String {
    let mut out = String::new();
    out.push_str(EVICTION_LOG_HEADER);
    out.push('\n');
    for r in log {
        let parent = r
            .triggered_by
            .map(|p| log[p].time.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.time,
            trace.token(r.victim_page),
            r.victim_index,
            r.strategy_tag,
            parent
        );
    }
    out
}

/// Parses the output of [`render_eviction_log`] back into records.
pub fn parse_eviction_log(text: &str, trace: &RequestTrace) -> Result<Vec<EvictionRecord>, String> {
    let mut log: Vec<EvictionRecord> = Vec::new();
    let mut by_time: BTreeMap<Time, usize> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == EVICTION_LOG_HEADER {
            continue;
        }
        let err = |msg: &str| format!("line {}: {msg}", lineno + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err("expected 5 fields"));
        }
        let time: Time = f[0].parse().map_err(|_| err("bad time"))?;
        let victim_page = trace.id_of(f[1]).ok_or_else(|| err("unknown page token"))?;
        let victim_index: Time = f[2].parse().map_err(|_| err("bad victim index"))?;
        let strategy_tag: StrategyTag = f[3].parse().map_err(|e: String| err(&e))?;
        let triggered_by = if f[4].is_empty() {
            None
        } else {
            let pt: Time = f[4].parse().map_err(|_| err("bad trigger time"))?;
            Some(
                *by_time
                    .get(&pt)
                    .ok_or_else(|| err("trigger refers to unknown eviction"))?,
            )
        };
        by_time.insert(time, log.len());
        log.push(EvictionRecord {
            time,
            victim_index,
            victim_page,
            strategy_tag,
            triggered_by,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::compute_next_occurrence;
    use proptest::prelude::*;

    fn abcac() -> (RequestTrace, NextOccurrence) {
        let t = RequestTrace::from_tokens(["a", "b", "c", "a", "c"]);
        let nu = compute_next_occurrence(&t);
        (t, nu)
    }

    #[test]
    fn belady_and_lru_on_small_trace() {
        let (t, nu) = abcac();
        let b = run(&t, &nu, None, &PolicySpec::Belady, 2, 0).unwrap();
        assert_eq!(b.misses, 3);
        assert_eq!(b.misses + b.hits, 5);

        let l = run(&t, &nu, None, &PolicySpec::Lru, 2, 0).unwrap();
        assert_eq!(l.misses, 4);
        assert_eq!(l.eviction_log.len(), 2);
        assert_eq!(l.eviction_log[0].time, 3);
        assert_eq!(l.eviction_log[0].victim_index, 1);
        assert_eq!(l.eviction_log[1].time, 4);
        assert_eq!(l.eviction_log[1].victim_index, 2);
        assert_eq!(l.eviction_log[1].triggered_by, Some(0));
        assert_eq!(l.future_reads, 0);
    }

    #[test]
    fn compulsory_only_when_everything_fits() {
        let t = RequestTrace::from_tokens(["a", "b", "a", "c", "b", "a"]);
        let nu = compute_next_occurrence(&t);
        for k in 3..6 {
            let r = run(&t, &nu, None, &PolicySpec::Lru, k, 0).unwrap();
            assert_eq!(r.misses, 3);
            assert!(r.eviction_log.is_empty());
        }
    }

    #[test]
    fn capacity_zero_rejected() {
        let (t, nu) = abcac();
        assert!(matches!(
            run(&t, &nu, None, &PolicySpec::Lru, 0, 0),
            Err(EngineError::InvalidCapacity)
        ));
    }

    #[test]
    fn predictions_required() {
        let (t, nu) = abcac();
        assert!(matches!(
            run(&t, &nu, None, &PolicySpec::BlindOracle, 2, 0),
            Err(EngineError::MissingPredictions { .. })
        ));
        let short = PredictionTrace::new(vec![1.0]).unwrap();
        assert!(matches!(
            run(&t, &nu, Some(&short), &PolicySpec::BlindOracle, 2, 0),
            Err(EngineError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn blind_oracle_with_wrong_prediction() {
        let (t, nu) = abcac();
        let omega = PredictionTrace::new(vec![4.0, 3.0, 5.0, 6.0, 6.0]).unwrap();
        let r = run(&t, &nu, Some(&omega), &PolicySpec::BlindOracle, 2, 0).unwrap();
        assert_eq!(r.misses, 5);
        let victims: Vec<_> = r
            .eviction_log
            .iter()
            .map(|e| (e.time, e.victim_index))
            .collect();
        assert_eq!(victims, vec![(3, 1), (4, 3), (5, 4)]);
        let exact = PredictionTrace::exact(&nu);
        let r = run(&t, &nu, Some(&exact), &PolicySpec::BlindOracle, 2, 0).unwrap();
        assert_eq!(r.misses, 3);
    }

    #[test]
    fn marker_on_three_distinct_pages() {
        let t = RequestTrace::from_tokens(["a", "b", "c"]);
        let nu = compute_next_occurrence(&t);
        for seed in 0..8 {
            let r = run(&t, &nu, None, &PolicySpec::Marker, 2, seed).unwrap();
            assert_eq!(r.misses, 3);
            assert_eq!(r.eviction_log.len(), 1);
        }
    }

    #[test]
    fn alternating_oracle_tags_follow_trigger_chains() {
        let next = |tag| match tag {
            StrategyTag::BlindOracle => StrategyTag::RandomAlg,
            StrategyTag::RandomAlg => StrategyTag::Corrector,
            _ => StrategyTag::BlindOracle,
        };
        // Constant predictions make the blind oracle evict the least recently
        // used page, which on a 3-cycle with k=2 is always requested next.
        let t = RequestTrace::from_tokens(["a", "b", "c"].repeat(40));
        let nu = compute_next_occurrence(&t);
        let omega = PredictionTrace::new(vec![1e6; t.len()]).unwrap();
        let mut longest = 0;
        for seed in 0..16 {
            let r = run(
                &t,
                &nu,
                Some(&omega),
                &PolicySpec::AlternatingOracle,
                2,
                seed,
            )
            .unwrap();
            let mut depth = vec![0usize; r.eviction_log.len()];
            for (i, e) in r.eviction_log.iter().enumerate() {
                match e.triggered_by {
                    None => assert_eq!(e.strategy_tag, StrategyTag::BlindOracle),
                    Some(p) => {
                        assert!(p < i);
                        assert_eq!(e.strategy_tag, next(r.eviction_log[p].strategy_tag));
                        depth[i] = depth[p] + 1;
                    }
                }
            }
            longest = longest.max(depth.into_iter().max().unwrap_or(0) + 1);
        }
        assert!(longest >= 6, "longest chain {longest}");
    }

    struct BadVictim;
    impl EvictionPolicy for BadVictim {
        fn name(&self) -> String {
            "bad".into()
        }
        fn choose_victim(
            &mut self,
            _ctx: &mut DecisionContext<'_>,
        ) -> Result<crate::policy::Decision, PolicyError> {
            Ok(crate::policy::Decision {
                victim_index: 99,
                tag: StrategyTag::Lru,
            })
        }
    }

    #[test]
    fn victim_outside_cache_rejected() {
        let (t, nu) = abcac();
        let err = run_policy(&t, &nu, None, Box::new(BadVictim), 2, 0).unwrap_err();
        assert!(matches!(
            err,
            EngineError::Policy(PolicyError::VictimNotCached { index: 99 })
        ));
    }

    #[test]
    fn brute_force_examples_and_guard() {
        let (t, _) = abcac();
        assert_eq!(brute_force_opt(&t, 2).unwrap(), 3);
        assert_eq!(brute_force_opt(&RequestTrace::default(), 2).unwrap(), 0);
        let few = RequestTrace::from_tokens(["x", "y", "x", "y", "x"]);
        assert_eq!(brute_force_opt(&few, 2).unwrap(), 2);
        let long = RequestTrace::from_numbers((0..20).map(|i| i % 3));
        assert!(matches!(
            brute_force_opt(&long, 2),
            Err(EngineError::GuardExceeded { len: 20, .. })
        ));
        let wide = RequestTrace::from_numbers(0..8);
        assert!(brute_force_opt(&wide, 2).is_err());
    }

    #[test]
    fn chains_from_lru_run() {
        let (t, nu) = abcac();
        let r = run(&t, &nu, None, &PolicySpec::Lru, 2, 0).unwrap();
        let chains = extract_chains(&r.eviction_log);
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].records, vec![0, 1]);
        assert_eq!(chains[0].victim_indices, vec![1, 2]);
    }

    #[test]
    fn chains_without_triggers_are_singletons() {
        // Cyclic-free trace where no evicted page is ever re-requested.
        let t = RequestTrace::from_numbers(0..10);
        let nu = compute_next_occurrence(&t);
        let r = run(&t, &nu, None, &PolicySpec::Lru, 3, 0).unwrap();
        let chains = extract_chains(&r.eviction_log);
        assert_eq!(chains.len(), r.eviction_log.len());
        assert!(chains.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn eviction_log_text_round_trip() {
        let (t, nu) = abcac();
        let r = run(&t, &nu, None, &PolicySpec::Lru, 2, 0).unwrap();
        let text = render_eviction_log(&r.eviction_log, &t);
        assert_eq!(
            text,
            "time,victim_page,victim_index,strategy_tag,triggered_by_time\n3,a,1,LRU,\n4,b,2,LRU,3\n"
        );
        assert_eq!(parse_eviction_log(&text, &t).unwrap(), r.eviction_log);
        assert!(parse_eviction_log("3,zz,1,LRU,\n", &t).is_err());
    }

    fn small_instance() -> impl Strategy<Value = (Vec<u8>, usize, u64)> {
        (
            prop::collection::vec(0u8..6, 0..14),
            1usize..5,
            any::<u64>(),
        )
    }

    proptest! {
        #[test]
        fn every_policy_respects_accounting((pages, k, seed) in small_instance()) {
            let t = RequestTrace::from_numbers(pages.iter().map(|&p| p as u64));
            let nu = compute_next_occurrence(&t);
            let omega = crate::trace::generate_predictions(
                &nu,
                &crate::trace::NoiseModel::new(crate::trace::NoiseKind::AdditiveUniform { width: 3 }, seed),
            ).unwrap();
            let opt = brute_force_opt(&t, k).unwrap();
            for name in ["belady", "lru", "lfu", "marker", "marker-predictive", "blind-oracle",
                         "corrector", "random", "alternating-oracle",
                         "combine-det(blind-oracle,lru)", "combine-stoch(lru,marker,0.2)"] {
                let spec: PolicySpec = name.parse().unwrap();
                let r = run(&t, &nu, Some(&omega), &spec, k, seed).unwrap();
                prop_assert_eq!(r.misses + r.hits, t.len() as u64);
                prop_assert!(r.misses >= opt, "{} beat the optimum", name);
                prop_assert_eq!(r.eviction_log.len() as u64, r.misses - r.fill_misses);
                prop_assert!(r.fill_misses <= k as u64);
                for rec in &r.eviction_log {
                    if let Some(p) = rec.triggered_by {
                        let parent = &r.eviction_log[p];
                        prop_assert_eq!(nu.at(parent.victim_index), rec.time);
                        prop_assert_eq!(parent.victim_page, t.page_at(rec.time));
                    }
                }
                if !spec.needs_future() {
                    prop_assert_eq!(r.future_reads, 0);
                }
                let again = run(&t, &nu, Some(&omega), &spec, k, seed).unwrap();
                prop_assert_eq!(&again.eviction_log, &r.eviction_log);
                let chained: usize = extract_chains(&r.eviction_log).iter().map(Chain::len).sum();
                prop_assert_eq!(chained, r.eviction_log.len());
            }
            let b = run(&t, &nu, None, &PolicySpec::Belady, k, seed).unwrap();
            prop_assert_eq!(b.misses, opt);
        }

        #[test]
        fn blind_oracle_with_exact_predictions_is_belady((pages, k, _seed) in small_instance()) {
            let t = RequestTrace::from_numbers(pages.iter().map(|&p| p as u64));
            let nu = compute_next_occurrence(&t);
            let exact = PredictionTrace::exact(&nu);
            let b = run(&t, &nu, None, &PolicySpec::Belady, k, 0).unwrap();
            let o = run(&t, &nu, Some(&exact), &PolicySpec::BlindOracle, k, 0).unwrap();
            prop_assert_eq!(o.misses, b.misses);
            // Same tie rule on equal keys, so the logs coincide too.
            let victims = |r: &SimulationResult| r.eviction_log.iter().map(|e| e.victim_index).collect::<Vec<_>>();
            prop_assert_eq!(victims(&o), victims(&b));
        }
    }
}
