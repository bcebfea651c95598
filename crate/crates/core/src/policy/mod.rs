//! Eviction policies and the interface the engine drives them through.
//!
//! A policy only ever sees a [`DecisionContext`]: the current request, the
//! cache, the predictions of the requests that are visible so far, the
//! per-page eviction history and a seeded random stream. True
//! next-occurrence times are handed out only to policies that declare
//! [`EvictionPolicy::needs_future`] (Belady).

mod classic;
mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combiner::{DeterministicCombiner, StochasticCombiner};
use crate::engine::EngineError;
use crate::rng::SimRng;
use crate::syntax::{expect_args, parse_call, parse_num};
use crate::trace::{NextOccurrence, PageId};

pub use classic::{
    belady_evict, lfu_evict, lru_evict, marker_evict, marker_predictive_evict, random_evict,
    Belady, Lfu, Lru, MarkState, Marker, MarkerPredictive, RandomAlg,
};
pub use oracle::{
    alternating_oracle_evict, blind_oracle_evict, corrector_evict, AlternatingOracle, BlindOracle,
    Corrector,
};

/// 1-based request time.
pub type Time = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("eviction requested at t={time} but the cache holds {len} of {capacity} pages")]
    CacheNotFull {
        time: Time,
        len: usize,
        capacity: usize,
    },
    #[error("eviction requested at t={time} for page {page}, which is cached")]
    RequestIsHit { time: Time, page: PageId },
    #[error("{policy} needs next-occurrence times but none were provided")]
    MissingFuture { policy: &'static str },
    #[error("page {page} was requested before t={time} but has no eviction record")]
    MissingEvictionRecord { time: Time, page: PageId },
    #[error(
        "page {page} was last evicted by {tag}, which the alternating dispatch does not handle"
    )]
    UnexpectedTag { page: PageId, tag: StrategyTag },
    #[error("victim index {index} is not in the cache")]
    VictimNotCached { index: Time },
    #[error("page {page} is already cached")]
    AlreadyCached { page: PageId },
    #[error("insert into a full cache")]
    CacheFull,
    #[error("combiner desynchronized at t={time}: {msg}")]
    CombinerDesync { time: Time, msg: String },
    #[error("combiner leg failed at t={time}: {msg}")]
    Leg { time: Time, msg: String },
}

/// Which rule produced an eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyTag {
    Belady,
    Lru,
    Lfu,
    Marker,
    MarkerPredictive,
    BlindOracle,
    RandomAlg,
    Corrector,
    CombinerDet,
    CombinerStoch,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 10] = [
        StrategyTag::Belady,
        StrategyTag::Lru,
        StrategyTag::Lfu,
        StrategyTag::Marker,
        StrategyTag::MarkerPredictive,
        StrategyTag::BlindOracle,
        StrategyTag::RandomAlg,
        StrategyTag::Corrector,
        StrategyTag::CombinerDet,
        StrategyTag::CombinerStoch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyTag::Belady => "Belady",
            StrategyTag::Lru => "LRU",
            StrategyTag::Lfu => "LFU",
            StrategyTag::Marker => "Marker",
            StrategyTag::MarkerPredictive => "MarkerPredictive",
            StrategyTag::BlindOracle => "BlindOracle",
            StrategyTag::RandomAlg => "RandomAlg",
            StrategyTag::Corrector => "Corrector",
            StrategyTag::CombinerDet => "CombinerDet",
            StrategyTag::CombinerStoch => "CombinerStoch",
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown strategy tag `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub page: PageId,
    /// Time of the most recent request of `page` (its element of `I_Q`).
    pub last_request: Time,
}

/// A capacity-`k` set of pages together with their last-request indices.
#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: usize,
    entries: Vec<CacheEntry>,
    slots: Vec<Option<u32>>,
}

impl CacheState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            slots: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    fn slot(&self, page: PageId) -> Option<usize> {
        self.slots
            .get(page as usize)
            .copied()
            .flatten()
            .map(|s| s as usize)
    }

    pub fn contains(&self, page: PageId) -> bool {
        self.slot(page).is_some()
    }

    pub fn entry(&self, page: PageId) -> Option<&CacheEntry> {
        self.slot(page).map(|s| &self.entries[s])
    }

    pub fn contains_index(&self, index: Time) -> bool {
        self.entries.iter().any(|e| e.last_request == index)
    }

    /// The index set `I_Q`, in no particular order.
    pub fn indices(&self) -> impl Iterator<Item = Time> + '_ {
        self.entries.iter().map(|e| e.last_request)
    }

    pub fn insert(&mut self, page: PageId, time: Time) -> Result<(), PolicyError> {
        if self.contains(page) {
            return Err(PolicyError::AlreadyCached { page });
        }
        if self.is_full() {
            return Err(PolicyError::CacheFull);
        }
        let p = page as usize;
        if self.slots.len() <= p {
            self.slots.resize(p + 1, None);
        }
        self.slots[p] = Some(self.entries.len() as u32);
        self.entries.push(CacheEntry {
            page,
            last_request: time,
        });
        Ok(())
    }

    /// Records a hit: the page's last-request index moves to `time`.
    pub fn touch(&mut self, page: PageId, time: Time) -> bool {
        match self.slot(page) {
            Some(s) => {
                self.entries[s].last_request = time;
                true
            }
            None => false,
        }
    }

    pub fn evict_index(&mut self, index: Time) -> Result<CacheEntry, PolicyError> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.last_request == index)
            .ok_or(PolicyError::VictimNotCached { index })?;
        let gone = self.entries.swap_remove(pos);
        self.slots[gone.page as usize] = None;
        if let Some(moved) = self.entries.get(pos) {
            self.slots[moved.page as usize] = Some(pos as u32);
        }
        Ok(gone)
    }
}

/// Per-page memory the engine keeps on behalf of policies.
#[derive(Debug, Clone, Default)]
pub struct EvictionHistory {
    requested: Vec<bool>,
    last_eviction: Vec<Option<(StrategyTag, usize)>>,
}

impl EvictionHistory {
    fn grow(&mut self, page: PageId) {
        let p = page as usize + 1;
        if self.requested.len() < p {
            self.requested.resize(p, false);
            self.last_eviction.resize(p, None);
        }
    }

    /// True if `page` was requested strictly before the current request.
    pub fn was_requested(&self, page: PageId) -> bool {
        self.requested.get(page as usize).copied().unwrap_or(false)
    }

    pub fn last_evicted_by(&self, page: PageId) -> Option<StrategyTag> {
        self.last_eviction_record(page).map(|(tag, _)| tag)
    }

    /// Tag and eviction-log position of the most recent eviction of `page`.
    pub fn last_eviction_record(&self, page: PageId) -> Option<(StrategyTag, usize)> {
        self.last_eviction.get(page as usize).copied().flatten()
    }

    pub fn mark_requested(&mut self, page: PageId) {
        self.grow(page);
        self.requested[page as usize] = true;
    }

    pub fn record_eviction(&mut self, page: PageId, tag: StrategyTag, log_pos: usize) {
        self.grow(page);
        self.last_eviction[page as usize] = Some((tag, log_pos));
    }
}

/// What a policy may observe when asked to pick a victim.
pub struct DecisionContext<'a> {
    pub time: Time,
    pub page: PageId,
    pub cache: &'a CacheState,
    pub history: &'a EvictionHistory,
    pub rng: &'a mut SimRng,
    predictions: &'a [f64],
    future: Option<&'a NextOccurrence>,
    future_reads: usize,
}

impl<'a> DecisionContext<'a> {
    pub fn new(
        time: Time,
        page: PageId,
        cache: &'a CacheState,
        history: &'a EvictionHistory,
        rng: &'a mut SimRng,
        predictions: &'a [f64],
    ) -> Self {
        Self {
            time,
            page,
            cache,
            history,
            rng,
            predictions,
            future: None,
            future_reads: 0,
        }
    }

    /// Grants access to true next-occurrence times (offline policies only).
    pub fn with_future(mut self, nu: &'a NextOccurrence) -> Self {
        self.future = Some(nu);
        self
    }

    /// Prediction issued with the request at time `index <= time`.
    pub fn omega(&self, index: Time) -> f64 {
        debug_assert!(index <= self.time, "prediction from the future");
        self.predictions[index - 1]
    }

    pub fn future(&mut self) -> Option<&'a NextOccurrence> {
        self.future_reads += 1;
        self.future
    }

    /// How many times any policy asked for next-occurrence data.
    pub fn future_reads(&self) -> usize {
        self.future_reads
    }

    pub fn ensure_miss_on_full(&self) -> Result<(), PolicyError> {
        if !self.cache.is_full() || self.cache.is_empty() {
            return Err(PolicyError::CacheNotFull {
                time: self.time,
                len: self.cache.len(),
                capacity: self.cache.capacity(),
            });
        }
        if self.cache.contains(self.page) {
            return Err(PolicyError::RequestIsHit {
                time: self.time,
                page: self.page,
            });
        }
        Ok(())
    }
}

/// Victim chosen for an eviction and the rule that chose it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub victim_index: Time,
    pub tag: StrategyTag,
}

/// One request as seen by [`EvictionPolicy::observe`].
pub struct Request<'a> {
    pub time: Time,
    pub page: PageId,
    pub predictions: &'a [f64],
    pub future: Option<&'a NextOccurrence>,
}

pub trait EvictionPolicy: Send {
    /// Canonical name, as accepted by [`PolicySpec::from_str`].
    fn name(&self) -> String;

    fn uses_predictions(&self) -> bool {
        false
    }

    fn needs_future(&self) -> bool {
        false
    }

    /// Called at the start of every request, before hit/miss handling.
    fn observe(&mut self, _req: &Request<'_>) -> Result<(), PolicyError> {
        Ok(())
    }

    fn on_hit(&mut self, _page: PageId, _time: Time) {}

    fn on_insert(&mut self, _page: PageId, _time: Time) {}

    fn on_evict(&mut self, _page: PageId) {}

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError>;

    /// Simulated miss counts of the two legs, for combiners.
    fn leg_misses(&self) -> Option<[u64; 2]> {
        None
    }
}

/// Entry maximizing `key`; ties go to the smallest last-request index.
pub(crate) fn max_by_key<F: Fn(&CacheEntry) -> f64>(
    entries: &[CacheEntry],
    key: F,
) -> Option<&CacheEntry> {
    entries.iter().min_by(|a, b| {
        key(b)
            .total_cmp(&key(a))
            .then(a.last_request.cmp(&b.last_request))
    })
}

/// Entry minimizing `key`; ties go to the smallest last-request index.
pub(crate) fn min_by_key<F: Fn(&CacheEntry) -> f64>(
    entries: &[CacheEntry],
    key: F,
) -> Option<&CacheEntry> {
    entries.iter().min_by(|a, b| {
        key(a)
            .total_cmp(&key(b))
            .then(a.last_request.cmp(&b.last_request))
    })
}

/// A policy by name, possibly a combiner over two other policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Belady,
    Lru,
    Lfu,
    Marker,
    MarkerPredictive,
    BlindOracle,
    Corrector,
    Random,
    AlternatingOracle,
    CombineDet(Box<PolicySpec>, Box<PolicySpec>),
    CombineStoch(Box<PolicySpec>, Box<PolicySpec>, f64),
}

impl PolicySpec {
    pub fn uses_predictions(&self) -> bool {
        match self {
            PolicySpec::MarkerPredictive
            | PolicySpec::BlindOracle
            | PolicySpec::Corrector
            | PolicySpec::AlternatingOracle => true,
            PolicySpec::CombineDet(a, b) | PolicySpec::CombineStoch(a, b, _) => {
                a.uses_predictions() || b.uses_predictions()
            }
            _ => false,
        }
    }

    pub fn needs_future(&self) -> bool {
        match self {
            PolicySpec::Belady => true,
            PolicySpec::CombineDet(a, b) | PolicySpec::CombineStoch(a, b, _) => {
                a.needs_future() || b.needs_future()
            }
            _ => false,
        }
    }

    /// True if the policy never consumes randomness.
    pub fn is_deterministic(&self) -> bool {
        match self {
            PolicySpec::Marker
            | PolicySpec::MarkerPredictive
            | PolicySpec::Random
            | PolicySpec::AlternatingOracle
            | PolicySpec::CombineStoch(..) => false,
            PolicySpec::CombineDet(a, b) => a.is_deterministic() && b.is_deterministic(),
            _ => true,
        }
    }

    /// Instantiates the policy for a cache of size `k`; `seed` only matters
    /// to combiners, whose legs replay the stream a standalone run would see.
    pub fn build(&self, k: usize, seed: u64) -> Result<Box<dyn EvictionPolicy>, EngineError> {
        Ok(match self {
            PolicySpec::Belady => Box::new(Belady),
            PolicySpec::Lru => Box::new(Lru),
            PolicySpec::Lfu => Box::new(Lfu::default()),
            PolicySpec::Marker => Box::new(Marker::default()),
            PolicySpec::MarkerPredictive => Box::new(MarkerPredictive::default()),
            PolicySpec::BlindOracle => Box::new(BlindOracle),
            PolicySpec::Corrector => Box::new(Corrector),
            PolicySpec::Random => Box::new(RandomAlg),
            PolicySpec::AlternatingOracle => Box::new(AlternatingOracle),
            PolicySpec::CombineDet(a, b) => Box::new(DeterministicCombiner::new(
                (**a).clone(),
                (**b).clone(),
                k,
                seed,
            )?),
            PolicySpec::CombineStoch(a, b, gamma) => Box::new(StochasticCombiner::new(
                (**a).clone(),
                (**b).clone(),
                *gamma,
                k,
                seed,
            )?),
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Belady => f.write_str("belady"),
            PolicySpec::Lru => f.write_str("lru"),
            PolicySpec::Lfu => f.write_str("lfu"),
            PolicySpec::Marker => f.write_str("marker"),
            PolicySpec::MarkerPredictive => f.write_str("marker-predictive"),
            PolicySpec::BlindOracle => f.write_str("blind-oracle"),
            PolicySpec::Corrector => f.write_str("corrector"),
            PolicySpec::Random => f.write_str("random"),
            PolicySpec::AlternatingOracle => f.write_str("alternating-oracle"),
            PolicySpec::CombineDet(a, b) => write!(f, "combine-det({a},{b})"),
            PolicySpec::CombineStoch(a, b, g) => write!(f, "combine-stoch({a},{b},{g})"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, args) = parse_call(s)?;
        let simple = match name.as_str() {
            "belady" => Some(PolicySpec::Belady),
            "lru" => Some(PolicySpec::Lru),
            "lfu" => Some(PolicySpec::Lfu),
            "marker" => Some(PolicySpec::Marker),
            "marker-predictive" => Some(PolicySpec::MarkerPredictive),
            "blind-oracle" => Some(PolicySpec::BlindOracle),
            "corrector" => Some(PolicySpec::Corrector),
            "random" => Some(PolicySpec::Random),
            "alternating-oracle" => Some(PolicySpec::AlternatingOracle),
            _ => None,
        };
        if let Some(spec) = simple {
            expect_args(&name, &args, 0)?;
            return Ok(spec);
        }
        match name.as_str() {
            "combine-det" => {
                expect_args(&name, &args, 2)?;
                Ok(PolicySpec::CombineDet(
                    Box::new(args[0].parse()?),
                    Box::new(args[1].parse()?),
                ))
            }
            "combine-stoch" => {
                expect_args(&name, &args, 3)?;
                let gamma: f64 = parse_num("gamma", &args[2])?;
                if !(gamma > 0.0 && gamma < 0.25) {
                    return Err(format!("gamma must lie in (0, 1/4), got {gamma}"));
                }
                Ok(PolicySpec::CombineStoch(
                    Box::new(args[0].parse()?),
                    Box::new(args[1].parse()?),
                    gamma,
                ))
            }
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> Self {
        p.to_string()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::rng::sim_rng;

    /// A full cache built from `(page, last_request)` pairs.
    pub fn cache_of(entries: &[(PageId, Time)]) -> CacheState {
        let mut c = CacheState::new(entries.len());
        for &(p, t) in entries {
            c.insert(p, t).unwrap();
        }
        c
    }

    pub struct Fixture {
        pub cache: CacheState,
        pub history: EvictionHistory,
        pub rng: SimRng,
        pub omega: Vec<f64>,
    }

    impl Fixture {
        /// Cache entries `(page, index)` with predictions assigned per index.
        pub fn new(
            entries: &[(PageId, Time)],
            omega_by_index: &[(Time, f64)],
            horizon: Time,
        ) -> Self {
            let mut omega = vec![0.0; horizon];
            for &(i, w) in omega_by_index {
                omega[i - 1] = w;
            }
            Self {
                cache: cache_of(entries),
                history: EvictionHistory::default(),
                rng: sim_rng(1),
                omega,
            }
        }

        pub fn ctx(&mut self, time: Time, page: PageId) -> DecisionContext<'_> {
            DecisionContext::new(
                time,
                page,
                &self.cache,
                &self.history,
                &mut self.rng,
                &self.omega,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn cache_state_bookkeeping() {
        let mut c = CacheState::new(2);
        c.insert(3, 1).unwrap();
        c.insert(5, 2).unwrap();
        assert!(c.is_full());
        assert_eq!(c.insert(7, 3), Err(PolicyError::CacheFull));
        assert!(c.touch(3, 4));
        assert_eq!(c.entry(3).unwrap().last_request, 4);
        assert_eq!(
            c.evict_index(1),
            Err(PolicyError::VictimNotCached { index: 1 })
        );
        let gone = c.evict_index(4).unwrap();
        assert_eq!(gone.page, 3);
        assert!(!c.contains(3));
        assert!(c.contains(5));
        assert_eq!(c.entry(5).unwrap().last_request, 2);
        c.insert(3, 6).unwrap();
        assert_eq!(c.insert(3, 7), Err(PolicyError::AlreadyCached { page: 3 }));
    }

    #[test]
    fn tie_rules_prefer_oldest_index() {
        let c = cache_of(&[(0, 5), (1, 2), (2, 9)]);
        assert_eq!(max_by_key(c.entries(), |_| 1.0).unwrap().last_request, 2);
        assert_eq!(min_by_key(c.entries(), |_| 1.0).unwrap().last_request, 2);
        assert_eq!(
            max_by_key(c.entries(), |e| e.last_request as f64)
                .unwrap()
                .last_request,
            9
        );
    }

    #[test]
    fn precondition_checks() {
        let mut fx = Fixture::new(&[(0, 1), (1, 2)], &[], 4);
        assert!(matches!(
            fx.ctx(3, 0).ensure_miss_on_full(),
            Err(PolicyError::RequestIsHit { .. })
        ));
        assert!(fx.ctx(3, 2).ensure_miss_on_full().is_ok());
        fx.cache.evict_index(1).unwrap();
        assert!(matches!(
            fx.ctx(3, 2).ensure_miss_on_full(),
            Err(PolicyError::CacheNotFull { .. })
        ));
    }

    #[test]
    fn policy_names_round_trip() {
        for name in [
            "belady",
            "lru",
            "lfu",
            "marker",
            "marker-predictive",
            "blind-oracle",
            "corrector",
            "random",
            "alternating-oracle",
            "combine-det(blind-oracle,lru)",
            "combine-stoch(blind-oracle,marker,0.1)",
        ] {
            let spec: PolicySpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
            assert_eq!(spec.build(2, 0).unwrap().name(), name);
        }
        assert!("fifo".parse::<PolicySpec>().is_err());
        assert!("lru(2)".parse::<PolicySpec>().is_err());
        assert!("combine-stoch(lru,lfu,0.25)".parse::<PolicySpec>().is_err());
        assert!("combine-stoch(lru,lfu,0)".parse::<PolicySpec>().is_err());
        assert!("combine-det(lru)".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn spec_capabilities() {
        let p: PolicySpec = "combine-det(belady,lru)".parse().unwrap();
        assert!(p.needs_future());
        assert!(!p.uses_predictions());
        assert!(p.is_deterministic());
        assert!(PolicySpec::AlternatingOracle.uses_predictions());
        assert!(!PolicySpec::AlternatingOracle.is_deterministic());
        assert!(!PolicySpec::Lru.needs_future());
    }

    #[test]
    fn strategy_tag_strings() {
        for tag in StrategyTag::ALL {
            assert_eq!(tag.as_str().parse::<StrategyTag>().unwrap(), tag);
        }
    }
}
