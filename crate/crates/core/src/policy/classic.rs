use rand::Rng;

use super::{
    max_by_key, min_by_key, CacheEntry, Decision, DecisionContext, EvictionPolicy, PolicyError,
    StrategyTag, Time,
};
use crate::trace::{NextOccurrence, PageId};

/// Evicts the cached index with the farthest next request.
pub fn belady_evict(ctx: &mut DecisionContext<'_>) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let nu = ctx
        .future()
        .ok_or(PolicyError::MissingFuture { policy: "belady" })?;
    Ok(belady_choice(ctx.cache.entries(), nu))
}

pub(crate) fn belady_choice(entries: &[CacheEntry], nu: &NextOccurrence) -> Time {
    max_by_key(entries, |e| nu.at(e.last_request) as f64)
        .expect("non-empty cache")
        .last_request
}

pub fn lru_evict(ctx: &DecisionContext<'_>) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    Ok(ctx
        .cache
        .entries()
        .iter()
        .map(|e| e.last_request)
        .min()
        .expect("non-empty cache"))
}

/// `counts[page]` is the number of requests of `page` since the trace start.
pub fn lfu_evict(ctx: &DecisionContext<'_>, counts: &[u64]) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let count = |e: &CacheEntry| counts.get(e.page as usize).copied().unwrap_or(0) as f64;
    Ok(min_by_key(ctx.cache.entries(), count)
        .expect("non-empty cache")
        .last_request)
}

/// Marking bits for the Marker family, indexed by page.
#[derive(Debug, Clone, Default)]
pub struct MarkState {
    marked: Vec<bool>,
}

impl MarkState {
    pub fn is_marked(&self, page: PageId) -> bool {
        self.marked.get(page as usize).copied().unwrap_or(false)
    }

    pub fn set(&mut self, page: PageId, on: bool) {
        let p = page as usize;
        if self.marked.len() <= p {
            self.marked.resize(p + 1, false);
        }
        self.marked[p] = on;
    }

    /// Unmarked cached entries; starts a new epoch first if there are none.
    fn candidates(&mut self, entries: &[CacheEntry]) -> Vec<CacheEntry> {
        let mut unmarked: Vec<CacheEntry> = entries
            .iter()
            .filter(|e| !self.is_marked(e.page))
            .copied()
            .collect();
        if unmarked.is_empty() {
            for e in entries {
                self.set(e.page, false);
            }
            unmarked = entries.to_vec();
        }
        unmarked
    }
}

pub fn marker_evict(
    ctx: &mut DecisionContext<'_>,
    marks: &mut MarkState,
) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let mut unmarked = marks.candidates(ctx.cache.entries());
    unmarked.sort_by_key(|e| e.page);
    let pick = ctx.rng.random_range(0..unmarked.len());
    Ok(unmarked[pick].last_request)
}

pub fn marker_predictive_evict(
    ctx: &mut DecisionContext<'_>,
    marks: &mut MarkState,
) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let unmarked = marks.candidates(ctx.cache.entries());
    Ok(max_by_key(&unmarked, |e| ctx.omega(e.last_request))
        .expect("non-empty candidate set")
        .last_request)
}

/// Uniform over the cache, enumerated in ascending page-id order.
pub fn random_evict(ctx: &mut DecisionContext<'_>) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let mut entries = ctx.cache.entries().to_vec();
    entries.sort_by_key(|e| e.page);
    let pick = ctx.rng.random_range(0..entries.len());
    Ok(entries[pick].last_request)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Belady;

impl EvictionPolicy for Belady {
    fn name(&self) -> String {
        "belady".into()
    }

    fn needs_future(&self) -> bool {
        true
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: belady_evict(ctx)?,
            tag: StrategyTag::Belady,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Lru;

impl EvictionPolicy for Lru {
    fn name(&self) -> String {
        "lru".into()
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: lru_evict(ctx)?,
            tag: StrategyTag::Lru,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lfu {
    counts: Vec<u64>,
}

impl EvictionPolicy for Lfu {
    fn name(&self) -> String {
        "lfu".into()
    }

    fn observe(&mut self, req: &super::Request<'_>) -> Result<(), PolicyError> {
        let p = req.page as usize;
        if self.counts.len() <= p {
            self.counts.resize(p + 1, 0);
        }
        self.counts[p] += 1;
        Ok(())
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: lfu_evict(ctx, &self.counts)?,
            tag: StrategyTag::Lfu,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Marker {
    marks: MarkState,
}

impl EvictionPolicy for Marker {
    fn name(&self) -> String {
        "marker".into()
    }

    fn on_hit(&mut self, page: PageId, _time: Time) {
        self.marks.set(page, true);
    }

    fn on_insert(&mut self, page: PageId, _time: Time) {
        self.marks.set(page, true);
    }

    fn on_evict(&mut self, page: PageId) {
        self.marks.set(page, false);
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: marker_evict(ctx, &mut self.marks)?,
            tag: StrategyTag::Marker,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MarkerPredictive {
    marks: MarkState,
}

impl EvictionPolicy for MarkerPredictive {
    fn name(&self) -> String {
        "marker-predictive".into()
    }

    fn uses_predictions(&self) -> bool {
        true
    }

    fn on_hit(&mut self, page: PageId, _time: Time) {
        self.marks.set(page, true);
    }

    fn on_insert(&mut self, page: PageId, _time: Time) {
        self.marks.set(page, true);
    }

    fn on_evict(&mut self, page: PageId) {
        self.marks.set(page, false);
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: marker_predictive_evict(ctx, &mut self.marks)?,
            tag: StrategyTag::MarkerPredictive,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomAlg;

impl EvictionPolicy for RandomAlg {
    fn name(&self) -> String {
        "random".into()
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: random_evict(ctx)?,
            tag: StrategyTag::RandomAlg,
        })
    }
}
