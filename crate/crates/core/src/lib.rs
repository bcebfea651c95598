//! Learning-augmented paging: eviction policies with next-request
//! predictions, a trace-driven simulator, strategy combiners and an
//! eviction-graph certifier that checks the competitive bounds per run.

pub mod analysis;
pub mod combiner;
pub mod engine;
pub mod harness;
pub mod policy;
pub mod rng;
mod syntax;
pub mod trace;
pub mod workload;

pub use engine::{run, run_policy, EngineError, EvictionRecord, SimulationResult};
pub use policy::{CacheState, PolicySpec, StrategyTag, Time};
pub use trace::{
    compute_losses, compute_next_occurrence, generate_predictions, LossSummary, NextOccurrence,
    NoiseKind, NoiseModel, PageId, PredictionTrace, RequestTrace,
};
pub use workload::{WorkloadKind, WorkloadSpec};
