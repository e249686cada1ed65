//! The clique bounded-confidence update rule.
//!
//! At every step each node draws an m-subset of the network, averages the
//! opinions in it, and moves a fraction `delta` toward that average when the
//! average lies within `eta` of its own opinion. Otherwise it keeps its value
//! bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::TrialRng;

/// Horizons above this default to streaming records.
pub const STREAMING_HORIZON: u64 = 100_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CliquePolicy {
    /// Uniform over all C(n, m) subsets; a node may observe itself.
    #[default]
    #[serde(rename = "uniform-all-subsets")]
    UniformAllSubsets,
    /// Uniform over the C(n-1, m) subsets that leave the observing node out.
    #[serde(rename = "uniform-excluding-self")]
    UniformExcludingSelf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub eta: f64,
    #[serde(default)]
    pub clique_policy: CliquePolicy,
    /// Slack added to `eta` in the confidence test.
    #[serde(default)]
    pub boundary_epsilon: f64,
}

impl ModelParams {
    pub fn new(n: usize, m: usize, delta: f64, eta: f64) -> Result<Self> {
        let params = ModelParams {
            n,
            m,
            delta,
            eta,
            clique_policy: CliquePolicy::default(),
            boundary_epsilon: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_policy(mut self, policy: CliquePolicy) -> Result<Self> {
        self.clique_policy = policy;
        self.validate()?;
        Ok(self)
    }

    pub fn with_boundary_epsilon(mut self, eps: f64) -> Result<Self> {
        self.boundary_epsilon = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.m < 1 || self.m > self.n {
            return bad(format!("m = {} must satisfy 1 <= m <= n = {}", self.m, self.n));
        }
        if self.clique_policy == CliquePolicy::UniformExcludingSelf && self.m > self.n - 1 {
            return bad(format!(
                "m = {} exceeds n - 1 = {} under uniform-excluding-self",
                self.m,
                self.n - 1
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive and finite", self.eta));
        }
        if !(self.boundary_epsilon >= 0.0 && self.boundary_epsilon.is_finite()) {
            return bad(format!(
                "boundary_epsilon = {} must be finite and >= 0",
                self.boundary_epsilon
            ));
        }
        Ok(())
    }

    /// True when every clique is the whole network and the dynamics is deterministic.
    pub fn is_global(&self) -> bool {
        self.m == self.n
    }

    #[inline]
    pub(crate) fn confidence(&self) -> f64 {
        self.eta + self.boundary_epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionVector {
    pub values: Vec<f64>,
    pub time: u64,
}

impl OpinionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::at(values, 0)
    }

    pub fn at(values: Vec<f64>, time: u64) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "opinion of node {i} is not finite"
            )));
        }
        Ok(OpinionVector { values, time })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.values)
    }
}

/// One realisation of the neighbour sets, stored row-major with `m` sorted
/// indices per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliqueDraw {
    n: usize,
    m: usize,
    members: Vec<usize>,
    pub time: u64,
}

impl CliqueDraw {
    /// Builds a draw from explicit neighbour sets, validating size and range.
    pub fn from_sets(sets: &[Vec<usize>], m: usize, time: u64) -> Result<Self> {
        let n = sets.len();
        let mut members = Vec::with_capacity(n * m);
        for (i, set) in sets.iter().enumerate() {
            if set.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "neighbour set of node {i} has {} members, expected {m}",
                    set.len()
                )));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "neighbour set of node {i} has repeated members"
                )));
            }
            if let Some(&bad) = sorted.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidArgument(format!(
                    "neighbour set of node {i} contains index {bad} >= n = {n}"
                )));
            }
            members.extend_from_slice(&sorted);
        }
        Ok(CliqueDraw {
            n,
            m,
            members,
            time,
        })
    }

    /// Every node observes the whole network.
    pub fn full(n: usize, time: u64) -> Self {
        let mut members = Vec::with_capacity(n * n);
        for _ in 0..n {
            members.extend(0..n);
        }
        CliqueDraw {
            n,
            m: n,
            members,
            time,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn set(&self, node: usize) -> &[usize] {
        &self.members[node * self.m..(node + 1) * self.m]
    }

    pub fn sets(&self) -> impl Iterator<Item = &[usize]> {
        self.members.chunks_exact(self.m)
    }
}

/// Floyd's m-of-n subset sampling into `out`, sorted on return.
fn draw_clique(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    policy: CliquePolicy,
    node: usize,
    out: &mut [usize],
) {
    let population = match policy {
        CliquePolicy::UniformAllSubsets => n,
        CliquePolicy::UniformExcludingSelf => n - 1,
    };
    for (len, j) in (population - m..population).enumerate() {
        let t = rng.random_range(0..=j);
        out[len] = if out[..len].contains(&t) { j } else { t };
    }
    if policy == CliquePolicy::UniformExcludingSelf {
        for idx in out.iter_mut() {
            if *idx >= node {
                *idx += 1;
            }
        }
    }
    out.sort_unstable();
}

pub fn sample_cliques(params: &ModelParams, time: u64, rng: &mut TrialRng) -> Result<CliqueDraw> {
    params.validate()?;
    let (n, m) = (params.n, params.m);
    let mut members = vec![0usize; n * m];
    for (node, chunk) in members.chunks_exact_mut(m).enumerate() {
        draw_clique(rng.node_stream(time, node), n, m, params.clique_policy, node, chunk);
    }
    Ok(CliqueDraw {
        n,
        m,
        members,
        time,
    })
}

pub fn clique_average(x: &OpinionVector, clique: &[usize]) -> Result<f64> {
    if clique.is_empty() {
        return Err(Error::InvalidArgument("empty clique".into()));
    }
    if let Some(&j) = clique.iter().find(|&&j| j >= x.len()) {
        return Err(Error::InvalidArgument(format!(
            "clique index {j} out of range for n = {}",
            x.len()
        )));
    }
    Ok(average_of(&x.values, clique))
}

/// Mean of the selected entries, clamped into their range so that rounding
/// never pushes an average outside the values it averages.
#[inline]
pub(crate) fn average_of(values: &[f64], idx: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &j in idx {
        let v = values[j];
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / idx.len() as f64).clamp(lo, hi)
}

pub(crate) fn mean_of(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / values.len() as f64).clamp(lo, hi)
}

#[inline]
fn update_value(x: f64, y: f64, delta: f64, confidence: f64) -> f64 {
    if (x - y).abs() <= confidence {
        let v = (1.0 - delta) * x + delta * y;
        v.clamp(x.min(y), x.max(y))
    } else {
        x
    }
}

pub fn step(x: &OpinionVector, cliques: &CliqueDraw, params: &ModelParams) -> Result<OpinionVector> {
    if x.len() != params.n || cliques.n() != params.n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: state has {}, cliques have {}, params say n = {}",
            x.len(),
            cliques.n(),
            params.n
        )));
    }
    if x.time != cliques.time {
        return Err(Error::InvalidArgument(format!(
            "state time {} differs from clique draw time {}",
            x.time, cliques.time
        )));
    }
    let confidence = params.confidence();
    let values = x
        .values
        .iter()
        .zip(cliques.sets())
        .map(|(&xi, set)| update_value(xi, average_of(&x.values, set), params.delta, confidence))
        .collect();
    Ok(OpinionVector {
        values,
        time: x.time + 1,
    })
}

pub fn global_mean_step(x: &OpinionVector, params: &ModelParams) -> Result<OpinionVector> {
    if !params.is_global() {
        return Err(Error::InvalidConfiguration(format!(
            "global mean step needs m = n, got m = {}, n = {}",
            params.m, params.n
        )));
    }
    if x.len() != params.n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: state has {}, params say n = {}",
            x.len(),
            params.n
        )));
    }
    let mut values = vec![0.0; params.n];
    global_mean_into(&x.values, &mut values, params);
    Ok(OpinionVector {
        values,
        time: x.time + 1,
    })
}

fn global_mean_into(cur: &[f64], next: &mut [f64], params: &ModelParams) {
    let mean = mean_of(cur);
    let confidence = params.confidence();
    for (out, &xi) in next.iter_mut().zip(cur) {
        *out = update_value(xi, mean, params.delta, confidence);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recording {
    /// Keep every state.
    Full,
    /// Keep the final state plus per-node running statistics; tail extrema
    /// cover the last `tail_window` steps.
    Streaming { tail_window: u64 },
}

impl Recording {
    /// Streaming above [`STREAMING_HORIZON`], full otherwise.
    pub fn auto(horizon: u64, tail_window: u64) -> Self {
        if horizon > STREAMING_HORIZON {
            Recording::Streaming { tail_window }
        } else {
            Recording::Full
        }
    }
}

/// Default tail window: max(10^3, T/10), never longer than the horizon.
pub fn default_window(horizon: u64) -> u64 {
    (horizon / 10).max(1000).min(horizon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub min: f64,
    pub max: f64,
    /// Last time t at which x_i(t) differs from x_i(t-1); `None` if never.
    pub last_change: Option<u64>,
    pub tail_min: f64,
    pub tail_max: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub params: ModelParams,
    pub horizon: u64,
    pub initial: OpinionVector,
    pub last: OpinionVector,
    /// Row-major `(horizon + 1) x n`, present for full records only.
    states: Option<Vec<f64>>,
    stats: Vec<NodeStats>,
    tail_window: u64,
}

impl TrajectoryRecord {
    pub fn is_full(&self) -> bool {
        self.states.is_some()
    }

    pub fn states(&self) -> Option<&[f64]> {
        self.states.as_deref()
    }

    /// State at offset `k` from the initial time (full records only).
    pub fn state(&self, k: u64) -> Option<&[f64]> {
        let n = self.params.n;
        let states = self.states.as_ref()?;
        let start = (k as usize).checked_mul(n)?;
        states.get(start..start + n)
    }

    pub fn stats(&self) -> &[NodeStats] {
        &self.stats
    }

    /// Window over which the recorded tail extrema were tracked.
    pub fn tail_window(&self) -> u64 {
        self.tail_window
    }

    /// Min and max of node `i` over the last `window` steps.
    pub fn tail_extrema(&self, node: usize, window: u64) -> Result<(f64, f64)> {
        if node >= self.params.n {
            return Err(Error::InvalidArgument(format!(
                "node {node} out of range for n = {}",
                self.params.n
            )));
        }
        if window > self.horizon {
            return Err(Error::InsufficientData(format!(
                "window {window} exceeds horizon {}",
                self.horizon
            )));
        }
        match &self.states {
            Some(states) => {
                let n = self.params.n;
                let first = (self.horizon - window) as usize;
                let (lo, hi) = states[first * n..]
                    .iter()
                    .skip(node)
                    .step_by(n)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                Ok((lo, hi))
            }
            None if window == self.tail_window => {
                let s = &self.stats[node];
                Ok((s.tail_min, s.tail_max))
            }
            None => Err(Error::InsufficientData(format!(
                "streaming record tracked a tail window of {}, asked for {window}",
                self.tail_window
            ))),
        }
    }
}

/// Runs `horizon` steps from `x0`. The deterministic global-mean path is used
/// when `m = n`; it consumes no randomness.
pub fn simulate(
    params: &ModelParams,
    x0: &OpinionVector,
    horizon: u64,
    rng: &mut TrialRng,
    recording: Recording,
) -> Result<TrajectoryRecord> {
    params.validate()?;
    let n = params.n;
    if x0.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries, params say n = {n}",
            x0.len()
        )));
    }
    let tail_window = match recording {
        Recording::Full => default_window(horizon),
        Recording::Streaming { tail_window } => tail_window.min(horizon),
    };
    let tail_start = horizon - tail_window;

    let mut states = match recording {
        Recording::Full => {
            let mut buf = Vec::with_capacity((horizon as usize + 1) * n);
            buf.extend_from_slice(&x0.values);
            Some(buf)
        }
        Recording::Streaming { .. } => None,
    };
    let mut stats: Vec<NodeStats> = x0
        .values
        .iter()
        .map(|&v| NodeStats {
            min: v,
            max: v,
            last_change: None,
            tail_min: if tail_start == 0 { v } else { f64::INFINITY },
            tail_max: if tail_start == 0 { v } else { f64::NEG_INFINITY },
        })
        .collect();

    let mut cur = x0.values.clone();
    let mut next = vec![0.0; n];
    let mut clique = vec![0usize; params.m];
    let confidence = params.confidence();

    for k in 0..horizon {
        let t = x0.time + k;
        if params.is_global() {
            global_mean_into(&cur, &mut next, params);
        } else {
            for (i, out) in next.iter_mut().enumerate() {
                draw_clique(rng.node_stream(t, i), n, params.m, params.clique_policy, i, &mut clique);
                *out = update_value(cur[i], average_of(&cur, &clique), params.delta, confidence);
            }
        }

        let in_tail = k + 1 >= tail_start;
        for (i, (&v, s)) in next.iter().zip(stats.iter_mut()).enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericalFailure { time: t + 1, node: i });
            }
            if v.to_bits() != cur[i].to_bits() {
                s.last_change = Some(t + 1);
            }
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            if in_tail {
                s.tail_min = s.tail_min.min(v);
                s.tail_max = s.tail_max.max(v);
            }
        }
        if let Some(buf) = states.as_mut() {
            buf.extend_from_slice(&next);
        }
        std::mem::swap(&mut cur, &mut next);
    }

    Ok(TrajectoryRecord {
        params: *params,
        horizon,
        initial: x0.clone(),
        last: OpinionVector {
            values: cur,
            time: x0.time + horizon,
        },
        states,
        stats,
        tail_window,
    })
}
