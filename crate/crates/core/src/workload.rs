//! Synthetic request traces and trace-file ingestion.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineError, Stepper};
use crate::policy::PolicySpec;
use crate::rng::sim_rng;
use crate::syntax::{expect_args, parse_call, parse_num};
use crate::trace::{read_trace_file, ParsedTrace, RequestTrace, TraceError};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("adversary shadow failed: {0}")]
    Shadow(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WorkloadKind {
    Uniform {
        pages: u64,
    },
    Zipf {
        pages: u64,
        exponent: f64,
    },
    /// Repeats `1..=pages`.
    Cyclic {
        pages: u64,
    },
    /// Over `k + 1` pages, always requests the page missing from a
    /// lockstep copy of `target`'s size-`k` cache.
    DetKiller {
        k: usize,
        target: PolicySpec,
    },
    File {
        path: PathBuf,
    },
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadKind::Uniform { pages } => write!(f, "uniform({pages})"),
            WorkloadKind::Zipf { pages, exponent } => write!(f, "zipf({pages},{exponent})"),
            WorkloadKind::Cyclic { pages } => write!(f, "cyclic({pages})"),
            WorkloadKind::DetKiller { k, target } => write!(f, "det-killer({k},{target})"),
            WorkloadKind::File { path } => write!(f, "file({})", path.display()),
        }
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, args) = parse_call(s)?;
        let kind = match name.as_str() {
            "uniform" => {
                expect_args(&name, &args, 1)?;
                WorkloadKind::Uniform {
                    pages: parse_num("page count", &args[0])?,
                }
            }
            "zipf" => {
                expect_args(&name, &args, 2)?;
                WorkloadKind::Zipf {
                    pages: parse_num("page count", &args[0])?,
                    exponent: parse_num("exponent", &args[1])?,
                }
            }
            "cyclic" => {
                expect_args(&name, &args, 1)?;
                WorkloadKind::Cyclic {
                    pages: parse_num("page count", &args[0])?,
                }
            }
            "det-killer" | "adversarial-det-killer" => {
                let target = match args.len() {
                    1 => PolicySpec::Lru,
                    2 => args[1].parse()?,
                    n => return Err(format!("`{name}` takes 1 or 2 arguments, got {n}")),
                };
                WorkloadKind::DetKiller {
                    k: parse_num("cache size", &args[0])?,
                    target,
                }
            }
            "file" => {
                expect_args(&name, &args, 1)?;
                WorkloadKind::File {
                    path: PathBuf::from(&args[0]),
                }
            }
            other => return Err(format!("unknown workload `{other}`")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for WorkloadKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<WorkloadKind> for String {
    fn from(k: WorkloadKind) -> Self {
        k.to_string()
    }
}

impl WorkloadKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            WorkloadKind::Uniform { pages } | WorkloadKind::Cyclic { pages } if *pages < 1 => {
                Err("page count must be at least 1".into())
            }
            WorkloadKind::Zipf { pages, exponent } => {
                if *pages < 1 {
                    Err("page count must be at least 1".into())
                } else if !(*exponent > 0.0 && exponent.is_finite()) {
                    Err(format!("zipf exponent must be positive, got {exponent}"))
                } else {
                    Ok(())
                }
            }
            WorkloadKind::DetKiller { k, target } => {
                if *k < 1 {
                    Err("det-killer cache size must be at least 1".into())
                } else if !target.is_deterministic()
                    || target.uses_predictions()
                    || target.needs_future()
                {
                    Err(format!(
                        "det-killer target must be a deterministic online policy without \
                         predictions, got {target}"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// True when the trace does not depend on the seed.
    pub fn is_seed_independent(&self) -> bool {
        matches!(
            self,
            WorkloadKind::Cyclic { .. }
                | WorkloadKind::DetKiller { .. }
                | WorkloadKind::File { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Number of requests; ignored for `file` workloads.
    pub length: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, length: usize, seed: u64) -> Self {
        Self { kind, length, seed }
    }
}

/// Generates the request trace (file predictions, if any, are dropped).
pub fn generate(spec: &WorkloadSpec) -> Result<RequestTrace, WorkloadError> {
    Ok(load(spec)?.trace)
}

/// Like [`generate`], but keeps inline predictions from trace files.
pub fn load(spec: &WorkloadSpec) -> Result<ParsedTrace, WorkloadError> {
    spec.kind.validate().map_err(WorkloadError::Invalid)?;
    let mut rng = sim_rng(spec.seed);
    let n = spec.length;
    let trace = match &spec.kind {
        WorkloadKind::Uniform { pages } => {
            RequestTrace::from_numbers((0..n).map(|_| rng.random_range(1..=*pages)))
        }
        WorkloadKind::Zipf { pages, exponent } => {
            let cdf = zipf_cdf(*pages, *exponent);
            RequestTrace::from_numbers((0..n).map(|_| {
                let u: f64 = rng.random();
                let rank = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                rank as u64 + 1
            }))
        }
        WorkloadKind::Cyclic { pages } => {
            RequestTrace::from_numbers((0..n as u64).map(|i| i % pages + 1))
        }
        WorkloadKind::DetKiller { k, target } => det_killer(*k, target, n)?,
        WorkloadKind::File { path } => return Ok(read_trace_file(path)?),
    };
    Ok(ParsedTrace {
        trace,
        predictions: None,
    })
}

/// Cumulative Zipf probabilities over ranks `1..=pages`.
pub fn zipf_cdf(pages: u64, exponent: f64) -> Vec<f64> {
    let weights: Vec<f64> = (1..=pages).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn det_killer(k: usize, target: &PolicySpec, len: usize) -> Result<RequestTrace, WorkloadError> {
    let mut shadow = Stepper::new(target.build(k, 0)?, k, 0)?;
    let mut trace = RequestTrace::default();
    let universe = k as u64 + 1;
    for t in 1..=len {
        let want = (1..=universe)
            .find(|p| {
                trace
                    .id_of(&p.to_string())
                    .is_none_or(|id| !shadow.cache().contains(id))
            })
            .expect("k+1 pages never fit in a size-k cache");
        let id = trace.push(&want.to_string());
        shadow.step(t, id, &[], None)?;
    }
    Ok(trace)
}
