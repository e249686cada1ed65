//! Finite-horizon verdicts on trajectories.
//!
//! Limits are not observable at a finite horizon, so every verdict is a proxy
//! with explicit thresholds: a node has converged when its spread over the
//! tail window is below `tol`, and fluctuates when that spread reaches
//! `fluct_threshold`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{default_window, TrajectoryRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consensus,
    Disagreement,
    PartialAgreement,
    Fluctuating,
    Undetermined,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Consensus => "consensus",
            Verdict::Disagreement => "disagreement",
            Verdict::PartialAgreement => "partial-agreement",
            Verdict::Fluctuating => "fluctuating",
            Verdict::Undetermined => "undetermined",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tol: f64,
    pub consensus_tol: f64,
    pub fluct_threshold: f64,
    pub window: u64,
}

impl Thresholds {
    /// tol 1e-9 for the deterministic m = n case and 1e-6 otherwise,
    /// consensus_tol = 10 tol, fluct_threshold = eta / 2, window max(10^3, T/10).
    pub fn defaults(traj: &TrajectoryRecord) -> Self {
        let tol = if traj.params.is_global() { 1e-9 } else { 1e-6 };
        Thresholds {
            tol,
            consensus_tol: 10.0 * tol,
            fluct_threshold: traj.params.eta / 2.0,
            window: default_window(traj.horizon),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: Vec<bool>,
    /// Final values; limit estimates where `converged` holds.
    pub limits: Vec<f64>,
    /// Max minus min over the tail window.
    pub amplitudes: Vec<f64>,
    pub window: u64,
}

impl Convergence {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub verdict: Verdict,
    pub limits: Vec<f64>,
    pub converged: Vec<bool>,
    pub amplitudes: Vec<f64>,
    pub last_change: Vec<Option<u64>>,
    pub window: u64,
}

impl ClassificationResult {
    /// Nodes whose tail amplitude reaches `threshold`.
    pub fn fluctuating_nodes(&self, threshold: f64) -> Vec<usize> {
        (0..self.amplitudes.len())
            .filter(|&i| self.amplitudes[i] >= threshold)
            .collect()
    }
}

pub fn detect_convergence(traj: &TrajectoryRecord, tol: f64, window: u64) -> Result<Convergence> {
    if window.checked_mul(2).is_none_or(|w| traj.horizon < w) {
        return Err(Error::InsufficientData(format!(
            "horizon {} shorter than twice the window {window}",
            traj.horizon
        )));
    }
    let n = traj.params.n;
    let mut amplitudes = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = traj.tail_extrema(i, window)?;
        amplitudes.push(hi - lo);
    }
    Ok(Convergence {
        converged: amplitudes.iter().map(|&a| a < tol).collect(),
        limits: traj.last.values.clone(),
        amplitudes,
        window,
    })
}

pub fn classify(traj: &TrajectoryRecord, th: &Thresholds) -> Result<ClassificationResult> {
    let conv = detect_convergence(traj, th.tol, th.window)?;
    let verdict = if conv.amplitudes.iter().any(|&a| a >= th.fluct_threshold) {
        Verdict::Fluctuating
    } else if !conv.all_converged() {
        Verdict::Undetermined
    } else {
        limit_pattern(&conv.limits, th.consensus_tol)
    };
    Ok(ClassificationResult {
        verdict,
        limits: conv.limits,
        converged: conv.converged,
        amplitudes: conv.amplitudes,
        last_change: traj.stats().iter().map(|s| s.last_change).collect(),
        window: conv.window,
    })
}

/// Compares converged limits pairwise.
pub fn limit_pattern(limits: &[f64], consensus_tol: f64) -> Verdict {
    let (lo, hi) = limits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < consensus_tol {
        return Verdict::Consensus;
    }
    let mut sorted = limits.to_vec();
    sorted.sort_by(f64::total_cmp);
    // the smallest pairwise distance is between sorted neighbours
    if sorted.windows(2).all(|w| w[1] - w[0] > consensus_tol) {
        Verdict::Disagreement
    } else {
        Verdict::PartialAgreement
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub preserved: bool,
    /// First time offset at which the sorting permutation differs from the initial one.
    pub first_violation: Option<u64>,
}

/// Whether the stable sorting permutation of the state stays fixed.
pub fn order_preservation_check(traj: &TrajectoryRecord) -> Result<OrderCheck> {
    if !traj.is_full() {
        return Err(Error::UnsupportedRecordingMode);
    }
    let perm = crate::order::ordered_statistics(&traj.initial.values).permutation;
    for t in 0..=traj.horizon {
        let x = traj.state(t).expect("full record holds every step");
        let ordered = perm.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            x[a] < x[b] || (x[a] == x[b] && a < b)
        });
        if !ordered {
            return Ok(OrderCheck {
                preserved: false,
                first_violation: Some(t),
            });
        }
    }
    Ok(OrderCheck {
        preserved: true,
        first_violation: None,
    })
}

/// True iff every node in `nodes` keeps the bit pattern of its initial value.
pub fn frozen_nodes_check(traj: &TrajectoryRecord, nodes: &[usize]) -> Result<bool> {
    let stats = traj.stats();
    if let Some(&bad) = nodes.iter().find(|&&i| i >= stats.len()) {
        return Err(Error::InvalidArgument(format!(
            "node {bad} out of range for n = {}",
            stats.len()
        )));
    }
    Ok(nodes.iter().all(|&i| stats[i].last_change.is_none()))
}

/// (tail max, tail min) of `node` over the last `tail_fraction` of the horizon.
pub fn oscillation_bounds(traj: &TrajectoryRecord, node: usize, tail_fraction: f64) -> Result<(f64, f64)> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let window = (tail_fraction * traj.horizon as f64).round() as u64;
    let (lo, hi) = traj.tail_extrema(node, window)?;
    Ok((hi, lo))
}
