//! Two-strategy combiners.
//!
//! Both combiners simulate their legs on the full request stream (shadow
//! caches) and, on a live miss, evict a live page that the current leader's
//! shadow cache does not hold. The deterministic combiner follows the leg
//! with fewer simulated misses; the stochastic one keeps multiplicative
//! weights and resamples its leader only when the leader's weight has
//! halved since the last switch.

use rand::Rng;

use crate::engine::{EngineError, StepOutcome, Stepper};
use crate::policy::{
    CacheState, Decision, DecisionContext, EvictionPolicy, PolicyError, PolicySpec, Request,
    StrategyTag, Time,
};
use crate::rng::{derive_seed, sim_rng, SimRng};

/// Weights are rescaled once their sum falls below this.
const WEIGHT_FLOOR: f64 = 1e-200;

/// Live page absent from the leader's shadow cache, oldest index first.
/// `None` only if every live page is also in the leader's cache.
pub fn absent_from_leader(live: &CacheState, leader: &CacheState) -> Option<Time> {
    live.entries()
        .iter()
        .filter(|e| !leader.contains(e.page))
        .map(|e| e.last_request)
        .min()
}

/// Leg with fewer simulated misses; ties go to leg 0.
pub fn leading_leg(misses: [u64; 2]) -> usize {
    usize::from(misses[1] < misses[0])
}

struct Legs {
    specs: [PolicySpec; 2],
    steppers: [Stepper; 2],
}

impl Legs {
    fn new(a: PolicySpec, b: PolicySpec, k: usize, seed: u64) -> Result<Self, EngineError> {
        // Each leg sees exactly the random stream a standalone run would.
        let steppers = [
            Stepper::new(a.build(k, seed)?, k, seed)?,
            Stepper::new(b.build(k, seed)?, k, seed)?,
        ];
        Ok(Self {
            specs: [a, b],
            steppers,
        })
    }

    /// Advances both legs; returns which of them missed.
    fn advance(&mut self, req: &Request<'_>) -> Result<[bool; 2], PolicyError> {
        let mut missed = [false; 2];
        for (i, leg) in self.steppers.iter_mut().enumerate() {
            let out = leg
                .step(req.time, req.page, req.predictions, req.future)
                .map_err(|e| PolicyError::Leg {
                    time: req.time,
                    msg: e.to_string(),
                })?;
            missed[i] = matches!(out, StepOutcome::Miss(_));
        }
        Ok(missed)
    }

    fn misses(&self) -> [u64; 2] {
        [self.steppers[0].misses(), self.steppers[1].misses()]
    }

    fn evict_for(
        &self,
        leader: usize,
        ctx: &DecisionContext<'_>,
        tag: StrategyTag,
    ) -> Result<Decision, PolicyError> {
        ctx.ensure_miss_on_full()?;
        let shadow = self.steppers[leader].cache();
        if !shadow.contains(ctx.page) {
            return Err(PolicyError::CombinerDesync {
                time: ctx.time,
                msg: format!("leg {leader} has not processed the current request"),
            });
        }
        let victim_index =
            absent_from_leader(ctx.cache, shadow).ok_or_else(|| PolicyError::CombinerDesync {
                time: ctx.time,
                msg: "every live page is cached by the leader".into(),
            })?;
        Ok(Decision { victim_index, tag })
    }
}

pub struct DeterministicCombiner {
    legs: Legs,
}

impl DeterministicCombiner {
    pub fn new(a: PolicySpec, b: PolicySpec, k: usize, seed: u64) -> Result<Self, EngineError> {
        Ok(Self {
            legs: Legs::new(a, b, k, seed)?,
        })
    }

    pub fn leader(&self) -> usize {
        leading_leg(self.legs.misses())
    }
}

impl EvictionPolicy for DeterministicCombiner {
    fn name(&self) -> String {
        format!("combine-det({},{})", self.legs.specs[0], self.legs.specs[1])
    }

    fn uses_predictions(&self) -> bool {
        self.legs.specs.iter().any(PolicySpec::uses_predictions)
    }

    fn needs_future(&self) -> bool {
        self.legs.specs.iter().any(PolicySpec::needs_future)
    }

    fn observe(&mut self, req: &Request<'_>) -> Result<(), PolicyError> {
        self.legs.advance(req).map(|_| ())
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        self.legs
            .evict_for(self.leader(), ctx, StrategyTag::CombinerDet)
    }

    fn leg_misses(&self) -> Option<[u64; 2]> {
        Some(self.legs.misses())
    }
}

pub struct StochasticCombiner {
    legs: Legs,
    gamma: f64,
    k: usize,
    weights: [f64; 2],
    leader: usize,
    /// Leader weight right after the last switch.
    anchor: f64,
    switches: u64,
    lead_steps: [u64; 2],
    rng: SimRng,
}

impl StochasticCombiner {
    pub fn new(
        a: PolicySpec,
        b: PolicySpec,
        gamma: f64,
        k: usize,
        seed: u64,
    ) -> Result<Self, EngineError> {
        if !(gamma > 0.0 && gamma < 0.25) {
            return Err(EngineError::InvalidGamma(gamma));
        }
        Ok(Self {
            legs: Legs::new(a, b, k, seed)?,
            gamma,
            k,
            weights: [1.0, 1.0],
            leader: 0,
            anchor: 1.0,
            switches: 0,
            lead_steps: [0, 0],
            rng: sim_rng(derive_seed(seed, &[0x5eed_c0b1])),
        })
    }

    pub fn leader(&self) -> usize {
        self.leader
    }

    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    pub fn switches(&self) -> u64 {
        self.switches
    }

    /// Number of requests during which each leg was the leader.
    pub fn lead_steps(&self) -> [u64; 2] {
        self.lead_steps
    }

    fn update(&mut self, missed: [bool; 2]) {
        let decay = 1.0 - self.gamma / self.k as f64;
        for (w, m) in self.weights.iter_mut().zip(missed) {
            if m {
                *w *= decay;
            }
        }
        let sum = self.weights[0] + self.weights[1];
        if sum < WEIGHT_FLOOR {
            let top = self.weights[0].max(self.weights[1]);
            self.weights = self.weights.map(|w| w / top);
            self.anchor /= top;
        }
        if self.weights[self.leader] <= self.anchor / 2.0 {
            let total = self.weights[0] + self.weights[1];
            let u: f64 = self.rng.random::<f64>() * total;
            let next = usize::from(u >= self.weights[0]);
            if next != self.leader {
                self.switches += 1;
            }
            self.leader = next;
            self.anchor = self.weights[next];
        }
        self.lead_steps[self.leader] += 1;
    }
}

impl EvictionPolicy for StochasticCombiner {
    fn name(&self) -> String {
        format!(
            "combine-stoch({},{},{})",
            self.legs.specs[0], self.legs.specs[1], self.gamma
        )
    }

    fn uses_predictions(&self) -> bool {
        self.legs.specs.iter().any(PolicySpec::uses_predictions)
    }

    fn needs_future(&self) -> bool {
        self.legs.specs.iter().any(PolicySpec::needs_future)
    }

    fn observe(&mut self, req: &Request<'_>) -> Result<(), PolicyError> {
        let missed = self.legs.advance(req)?;
        self.update(missed);
        Ok(())
    }

    fn choose_victim(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        self.legs
            .evict_for(self.leader, ctx, StrategyTag::CombinerStoch)
    }

    fn leg_misses(&self) -> Option<[u64; 2]> {
        Some(self.legs.misses())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::policy::test_support::cache_of;
    use crate::trace::{compute_next_occurrence, RequestTrace};
    use crate::workload::{generate, WorkloadKind, WorkloadSpec};

    fn drive(comb: &mut StochasticCombiner, trace: &RequestTrace) {
        for (i, &page) in trace.requests().iter().enumerate() {
            comb.observe(&Request {
                time: i + 1,
                page,
                predictions: &[],
                future: None,
            })
            .unwrap();
        }
    }

    #[test]
    fn leader_is_the_leg_with_fewer_misses() {
        assert_eq!(leading_leg([3, 5]), 0);
        assert_eq!(leading_leg([5, 3]), 1);
        assert_eq!(leading_leg([4, 4]), 0);
    }

    #[test]
    fn victim_absent_from_leader() {
        let live = cache_of(&[(0, 1), (1, 2), (2, 3)]);
        let leader = cache_of(&[(1, 2), (3, 4), (0, 1)]);
        assert_eq!(absent_from_leader(&live, &leader), Some(3));
        let leader = cache_of(&[(2, 3), (3, 4), (4, 5)]);
        assert_eq!(absent_from_leader(&live, &leader), Some(1));
        // identical contents: nothing absent, caller must fall back
        assert_eq!(
            absent_from_leader(&live, &cache_of(&[(2, 3), (1, 2), (0, 1)])),
            None
        );
    }

    #[test]
    fn gamma_range_enforced() {
        for g in [0.0, 0.25, -1.0, 0.3] {
            assert!(StochasticCombiner::new(PolicySpec::Lru, PolicySpec::Lfu, g, 2, 0).is_err());
        }
        assert!(StochasticCombiner::new(PolicySpec::Lru, PolicySpec::Lfu, 0.1, 2, 0).is_ok());
    }

    #[test]
    fn shadow_legs_match_standalone_runs() {
        let spec = WorkloadSpec::new(
            WorkloadKind::Zipf {
                pages: 30,
                exponent: 0.9,
            },
            800,
            4,
        );
        let t = generate(&spec).unwrap();
        let nu = compute_next_occurrence(&t);
        for k in [2, 5] {
            for seed in 0..3 {
                let combo: PolicySpec = "combine-stoch(marker,random,0.1)".parse().unwrap();
                let r = run(&t, &nu, None, &combo, k, seed).unwrap();
                let m = run(&t, &nu, None, &PolicySpec::Marker, k, seed)
                    .unwrap()
                    .misses;
                let x = run(&t, &nu, None, &PolicySpec::Random, k, seed)
                    .unwrap()
                    .misses;
                assert_eq!(r.leg_misses, Some([m, x]));
                let combo: PolicySpec = "combine-det(lru,marker)".parse().unwrap();
                let r = run(&t, &nu, None, &combo, k, seed).unwrap();
                let l = run(&t, &nu, None, &PolicySpec::Lru, k, seed)
                    .unwrap()
                    .misses;
                assert_eq!(r.leg_misses, Some([l, m]));
                assert!(r.misses <= 2 * l.min(m) + 4 * k as u64);
            }
        }
    }

    #[test]
    fn tiny_gamma_never_switches() {
        let spec = WorkloadSpec::new(WorkloadKind::Cyclic { pages: 5 }, 2000, 0);
        let t = generate(&spec).unwrap();
        // marker beats lru on cyclic(k+1); with gamma -> 0 the weights barely move.
        let mut c =
            StochasticCombiner::new(PolicySpec::Marker, PolicySpec::Lru, 1e-9, 4, 3).unwrap();
        drive(&mut c, &t);
        assert_eq!(c.leader(), 0);
        assert_eq!(c.switches(), 0);
    }

    #[test]
    fn better_leg_ends_up_leading() {
        let spec = WorkloadSpec::new(WorkloadKind::Cyclic { pages: 5 }, 4000, 0);
        let t = generate(&spec).unwrap();
        let mut finals = 0;
        for seed in 0..20 {
            let mut c =
                StochasticCombiner::new(PolicySpec::Lru, PolicySpec::Marker, 0.2, 4, seed).unwrap();
            drive(&mut c, &t);
            finals += usize::from(c.leader() == 1);
        }
        assert!(
            finals >= 18,
            "marker led at the end in only {finals}/20 runs"
        );
    }

    #[test]
    fn symmetric_legs_share_the_lead() {
        let spec = WorkloadSpec::new(WorkloadKind::Uniform { pages: 12 }, 10_000, 9);
        let t = generate(&spec).unwrap();
        let mut frac = 0.0;
        let seeds = 100;
        for seed in 0..seeds {
            let mut c =
                StochasticCombiner::new(PolicySpec::Lru, PolicySpec::Lru, 0.2, 4, seed).unwrap();
            drive(&mut c, &t);
            let [a, b] = c.lead_steps();
            frac += a as f64 / (a + b) as f64;
        }
        frac /= seeds as f64;
        assert!((0.3..=0.7).contains(&frac), "leg 0 led {frac} of the time");
    }

    #[test]
    fn switching_is_reproducible() {
        let spec = WorkloadSpec::new(WorkloadKind::Uniform { pages: 12 }, 3000, 2);
        let t = generate(&spec).unwrap();
        let go = || {
            let mut c =
                StochasticCombiner::new(PolicySpec::Lru, PolicySpec::Random, 0.2, 4, 77).unwrap();
            drive(&mut c, &t);
            (c.switches(), c.lead_steps(), c.weights())
        };
        assert_eq!(go(), go());
    }
}
