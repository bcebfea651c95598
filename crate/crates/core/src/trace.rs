//! Request sequences, next-occurrence times, predictions and their losses.
//!
//! Times are 1-based throughout: a trace of length `T` has requests at
//! `t = 1..=T`, and a next-occurrence value of `T + 1` means the page is
//! never requested again.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::sim_rng;
use crate::syntax::{expect_args, parse_call, parse_num};

/// Dense page identifier assigned in order of first appearance.
pub type PageId = u32;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("prediction at t={t} is not finite")]
    NonFinitePrediction { t: usize },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The request sequence with a bijection between page tokens and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestTrace {
    requests: Vec<PageId>,
    tokens: Vec<String>,
    ids: HashMap<String, PageId>,
}

impl RequestTrace {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut trace = Self::default();
        for tok in tokens {
            trace.push(tok.as_ref());
        }
        trace
    }

    /// Builds a trace whose tokens are the decimal rendering of `pages`.
    pub fn from_numbers<I: IntoIterator<Item = u64>>(pages: I) -> Self {
        Self::from_tokens(pages.into_iter().map(|p| p.to_string()))
    }

    pub fn push(&mut self, token: &str) -> PageId {
        let next = self.tokens.len() as PageId;
        let id = *self.ids.entry(token.to_string()).or_insert_with(|| {
            self.tokens.push(token.to_string());
            next
        });
        self.requests.push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Page requested at 1-based time `t`.
    pub fn page_at(&self, t: usize) -> PageId {
        self.requests[t - 1]
    }

    pub fn requests(&self) -> &[PageId] {
        &self.requests
    }

    pub fn token(&self, page: PageId) -> &str {
        &self.tokens[page as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<PageId> {
        self.ids.get(token).copied()
    }

    pub fn distinct_pages(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.requests.iter().map(|&p| self.token(p))
    }
}

/// `nu[t]` is the time of the next request of the page requested at `t`,
/// or `T + 1` when there is none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextOccurrence {
    nu: Vec<usize>,
}

impl NextOccurrence {
    pub fn at(&self, t: usize) -> usize {
        self.nu[t - 1]
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    /// The value used for "never again", `T + 1`.
    pub fn horizon(&self) -> usize {
        self.nu.len() + 1
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.nu
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.nu.clone()
    }
}

/// Single right-to-left pass, O(T).
pub fn compute_next_occurrence(trace: &RequestTrace) -> NextOccurrence {
    let t_len = trace.len();
    let mut upcoming = vec![t_len + 1; trace.distinct_pages()];
    let mut nu = vec![0; t_len];
    for idx in (0..t_len).rev() {
        let page = trace.requests[idx] as usize;
        nu[idx] = upcoming[page];
        upcoming[page] = idx + 1;
    }
    NextOccurrence { nu }
}

/// Predicted next-request times, one per request.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    omega: Vec<f64>,
}

impl PredictionTrace {
    pub fn new(omega: Vec<f64>) -> Result<Self, TraceError> {
        if let Some(idx) = omega.iter().position(|w| !w.is_finite()) {
            return Err(TraceError::NonFinitePrediction { t: idx + 1 });
        }
        Ok(Self { omega })
    }

    /// Perfect predictions, `omega = nu`.
    pub fn exact(nu: &NextOccurrence) -> Self {
        Self {
            omega: nu.nu.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.omega[t - 1]
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    pub eta_total: f64,
    pub eta_plus: Vec<f64>,
    pub eta_minus: Vec<f64>,
    pub inversions_total: u64,
}

impl LossSummary {
    pub fn eta_at(&self, t: usize) -> f64 {
        self.eta_plus[t - 1] + self.eta_minus[t - 1]
    }

    pub fn plus_at(&self, t: usize) -> f64 {
        self.eta_plus[t - 1]
    }

    pub fn minus_at(&self, t: usize) -> f64 {
        self.eta_minus[t - 1]
    }
}

pub fn compute_losses(
    nu: &NextOccurrence,
    omega: &PredictionTrace,
) -> Result<LossSummary, TraceError> {
    if nu.len() != omega.len() {
        return Err(TraceError::LengthMismatch {
            expected: nu.len(),
            actual: omega.len(),
        });
    }
    let (eta_plus, eta_minus): (Vec<f64>, Vec<f64>) = nu
        .nu
        .iter()
        .zip(&omega.omega)
        .map(|(&n, &w)| {
            let n = n as f64;
            ((w - n).max(0.0), (n - w).max(0.0))
        })
        .unzip();
    let eta_total = eta_plus.iter().zip(&eta_minus).map(|(p, m)| p + m).sum();
    Ok(LossSummary {
        eta_total,
        eta_plus,
        eta_minus,
        inversions_total: count_inversions(nu.as_slice(), omega.as_slice()),
    })
}

/// Counts ordered pairs `(y', y)` with `nu[y'] > nu[y]` and
/// `omega[y'] <= omega[y]`, in O(T log T).
pub fn count_inversions(nu: &[usize], omega: &[f64]) -> u64 {
    let mut sorted: Vec<f64> = omega.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |w: f64| sorted.partition_point(|&x| x.total_cmp(&w).is_lt());

    let mut order: Vec<usize> = (0..nu.len()).collect();
    order.sort_by(|&a, &b| nu[b].cmp(&nu[a]));

    let mut fenwick = Fenwick::new(sorted.len());
    let mut total = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && nu[order[j]] == nu[order[i]] {
            j += 1;
        }
        // Everything already inserted has a strictly larger nu.
        for &y in &order[i..j] {
            total += fenwick.prefix(rank(omega[y]) + 1);
        }
        for &y in &order[i..j] {
            fenwick.add(rank(omega[y]) + 1);
        }
        i = j;
    }
    total
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, mut pos: usize) {
        while pos < self.tree.len() {
            self.tree[pos] += 1;
            pos += pos & pos.wrapping_neg();
        }
    }

    fn prefix(&self, mut pos: usize) -> u64 {
        let mut sum = 0;
        while pos > 0 {
            sum += self.tree[pos];
            pos -= pos & pos.wrapping_neg();
        }
        sum
    }
}

/// How predictions are derived from the true next-occurrence times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NoiseKind {
    Exact,
    /// Adds an integer drawn uniformly from `[-width, width]`.
    AdditiveUniform {
        width: i64,
    },
    /// Scales the gap `nu(t) - t` by `exp(sigma * Z)`.
    LogNormal {
        sigma: f64,
    },
    /// Exchanges the predictions of `count` disjoint random pairs.
    InversionSwaps {
        count: usize,
    },
}

impl NoiseKind {
    pub fn is_exact(&self) -> bool {
        matches!(self, NoiseKind::Exact)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::Exact => write!(f, "exact"),
            NoiseKind::AdditiveUniform { width } => write!(f, "additive-uniform({width})"),
            NoiseKind::LogNormal { sigma } => write!(f, "lognormal({sigma})"),
            NoiseKind::InversionSwaps { count } => write!(f, "inversion-swaps({count})"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, args) = parse_call(s)?;
        match name.as_str() {
            "exact" => {
                expect_args(&name, &args, 0)?;
                Ok(NoiseKind::Exact)
            }
            "additive-uniform" | "additive" => {
                expect_args(&name, &args, 1)?;
                Ok(NoiseKind::AdditiveUniform {
                    width: parse_num("width", &args[0])?,
                })
            }
            "lognormal" | "multiplicative-lognormal" => {
                expect_args(&name, &args, 1)?;
                Ok(NoiseKind::LogNormal {
                    sigma: parse_num("sigma", &args[0])?,
                })
            }
            "inversion-swaps" | "swaps" => {
                expect_args(&name, &args, 1)?;
                Ok(NoiseKind::InversionSwaps {
                    count: parse_num("count", &args[0])?,
                })
            }
            other => Err(format!("unknown noise model `{other}`")),
        }
    }
}

impl TryFrom<String> for NoiseKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NoiseKind> for String {
    fn from(k: NoiseKind) -> Self {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn exact() -> Self {
        Self::new(NoiseKind::Exact, 0)
    }

    pub fn validate(&self, len: usize) -> Result<(), TraceError> {
        match self.kind {
            NoiseKind::AdditiveUniform { width } if width < 0 => Err(TraceError::InvalidNoise(
                format!("additive width must be non-negative, got {width}"),
            )),
            NoiseKind::LogNormal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                TraceError::InvalidNoise(format!("lognormal sigma must be positive, got {sigma}")),
            ),
            NoiseKind::InversionSwaps { count } if count > len / 2 => {
                Err(TraceError::InvalidNoise(format!(
                    "{count} swaps exceed half the trace length {len}"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn clamp_prediction(w: f64) -> f64 {
    if w.is_nan() {
        0.0
    } else {
        w.clamp(0.0, f64::MAX)
    }
}

pub fn generate_predictions(
    nu: &NextOccurrence,
    model: &NoiseModel,
) -> Result<PredictionTrace, TraceError> {
    model.validate(nu.len())?;
    let mut rng = sim_rng(model.seed);
    let base = nu.nu.iter().map(|&v| v as f64);
    let omega: Vec<f64> = match model.kind {
        NoiseKind::Exact => base.collect(),
        NoiseKind::AdditiveUniform { width } => base
            .map(|v| clamp_prediction(v + rng.random_range(-width..=width) as f64))
            .collect(),
        NoiseKind::LogNormal { sigma } => {
            let dist =
                LogNormal::new(0.0, sigma).map_err(|e| TraceError::InvalidNoise(e.to_string()))?;
            base.enumerate()
                .map(|(idx, v)| {
                    let t = (idx + 1) as f64;
                    clamp_prediction(t + (v - t) * dist.sample(&mut rng))
                })
                .collect()
        }
        NoiseKind::InversionSwaps { count } => {
            let mut omega: Vec<f64> = base.collect();
            let mut idx: Vec<usize> = (0..omega.len()).collect();
            idx.shuffle(&mut rng);
            for pair in idx[..2 * count].chunks_exact(2) {
                omega.swap(pair[0], pair[1]);
            }
            omega
        }
    };
    PredictionTrace::new(omega)
}

/// A trace file's contents: requests plus optional inline predictions.
#[derive(Debug, Clone)]
pub struct ParsedTrace {
    pub trace: RequestTrace,
    pub predictions: Option<PredictionTrace>,
}

/// Parses the line format `page_token` or `page_token,prediction`. Lines
/// starting with `#` and blank lines are skipped. Either every request
/// carries a prediction or none does.
pub fn parse_trace_text(text: &str) -> Result<ParsedTrace, TraceError> {
    let mut trace = RequestTrace::default();
    let mut omega = Vec::new();
    let mut with_predictions: Option<bool> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |msg: String| TraceError::Malformed {
            line: lineno + 1,
            msg,
        };
        let mut parts = line.split(',');
        let token = parts.next().unwrap_or_default().trim();
        let prediction = parts.next().map(str::trim);
        if parts.next().is_some() {
            return Err(malformed(
                "expected at most two comma-separated fields".into(),
            ));
        }
        if token.is_empty() {
            return Err(malformed("empty page token".into()));
        }
        match (with_predictions, prediction.is_some()) {
            (Some(expected), got) if expected != got => {
                return Err(malformed(
                    "predictions must be given on every line or on none".into(),
                ))
            }
            _ => with_predictions = Some(prediction.is_some()),
        }
        if let Some(p) = prediction {
            let w: f64 = p
                .parse()
                .map_err(|_| malformed(format!("invalid prediction `{p}`")))?;
            if !w.is_finite() {
                return Err(malformed(format!("prediction `{p}` is not finite")));
            }
            omega.push(w);
        }
        trace.push(token);
    }
    let predictions = match with_predictions {
        Some(true) => Some(PredictionTrace::new(omega)?),
        _ => None,
    };
    Ok(ParsedTrace { trace, predictions })
}

pub fn read_trace_file(path: &Path) -> Result<ParsedTrace, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace_text(&text)
}

pub fn render_trace_text(trace: &RequestTrace, predictions: Option<&PredictionTrace>) -> String {
    let mut out = String::new();
    for (idx, tok) in trace.tokens().enumerate() {
        out.push_str(tok);
        if let Some(p) = predictions {
            out.push(',');
            out.push_str(&p.omega[idx].to_string());
        }
        out.push('\n');
    }
    out
}
