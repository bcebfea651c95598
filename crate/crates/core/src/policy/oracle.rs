//! Prediction-driven policies: BlindOracle, Corrector and the
//! AlternatingOracle that cycles through them along trigger chains.

use super::classic::random_evict;
use super::{
    max_by_key, min_by_key, Decision, DecisionContext, EvictionPolicy, PolicyError, StrategyTag,
    Time,
};

/// Evicts the cached index with the largest prediction.
pub fn blind_oracle_evict(ctx: &DecisionContext<'_>) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    Ok(
        max_by_key(ctx.cache.entries(), |e| ctx.omega(e.last_request))
            .expect("non-empty cache")
            .last_request,
    )
}

/// Among cached indices whose prediction already lies in the past
/// (`omega(i) < t`), evicts the smallest prediction; otherwise behaves as
/// BlindOracle.
pub fn corrector_evict(ctx: &DecisionContext<'_>) -> Result<Time, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let now = ctx.time as f64;
    let expired: Vec<_> = ctx
        .cache
        .entries()
        .iter()
        .filter(|e| ctx.omega(e.last_request) < now)
        .copied()
        .collect();
    match min_by_key(&expired, |e| ctx.omega(e.last_request)) {
        Some(e) => Ok(e.last_request),
        None => blind_oracle_evict(ctx),
    }
}

/// Picks the sub-strategy from how the requested page was last evicted:
/// never seen or Corrector -> BlindOracle, BlindOracle -> RandomAlg,
/// RandomAlg -> Corrector.
pub fn alternating_oracle_evict(ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
    ctx.ensure_miss_on_full()?;
    let tag = if !ctx.history.was_requested(ctx.page) {
        StrategyTag::BlindOracle
    } else {
        match ctx.history.last_evicted_by(ctx.page) {
            Some(prev) => next_strategy(prev).ok_or(PolicyError::UnexpectedTag {
                page: ctx.page,
                tag: prev,
            })?,
            None => {
                return Err(PolicyError::MissingEvictionRecord {
                    time: ctx.time,
                    page: ctx.page,
                })
            }
        }
    };
    let victim_index = match tag {
        StrategyTag::BlindOracle => blind_oracle_evict(ctx)?,
        StrategyTag::RandomAlg => random_evict(ctx)?,
        StrategyTag::Corrector => corrector_evict(ctx)?,
        _ => unreachable!("dispatch yields one of three strategies"),
    };
    Ok(Decision { victim_index, tag })
}

/// The alternating dispatch table.
pub(crate) fn next_strategy(last: StrategyTag) -> Option<StrategyTag> {
    match last {
        StrategyTag::BlindOracle => Some(StrategyTag::RandomAlg),
        StrategyTag::RandomAlg => Some(StrategyTag::Corrector),
        StrategyTag::Corrector => Some(StrategyTag::BlindOracle),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlindOracle;

impl EvictionPolicy for BlindOracle {
    fn name(&self) -> String {
        "blind-oracle".into()
    }

    fn uses_predictions(&self) -> bool {
        true
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: blind_oracle_evict(ctx)?,
            tag: StrategyTag::BlindOracle,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Corrector;

impl EvictionPolicy for Corrector {
    fn name(&self) -> String {
        "corrector".into()
    }

    fn uses_predictions(&self) -> bool {
        true
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        Ok(Decision {
            victim_index: corrector_evict(ctx)?,
            tag: StrategyTag::Corrector,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlternatingOracle;

impl EvictionPolicy for AlternatingOracle {
    fn name(&self) -> String {
        "alternating-oracle".into()
    }

    fn uses_predictions(&self) -> bool {
        true
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        alternating_oracle_evict(ctx)
    }
}
