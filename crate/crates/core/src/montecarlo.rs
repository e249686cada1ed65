//! Seeded, schedule-independent Monte Carlo over initial conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{classify, ClassificationResult, Thresholds, Verdict};
use crate::dynamics::{default_window, simulate, ModelParams, OpinionVector, Recording, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::initial::InitialSpec;
use crate::order::order_stat_density;
use crate::rng::{RngSpec, TrialRng};

/// Environment variable read for the default number of worker threads.
pub const PARALLELISM_ENV: &str = "CLIQUEDYN_THREADS";

/// 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959963984540054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub params: ModelParams,
    pub initial: InitialSpec,
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluct_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, initial: InitialSpec, horizon: u64, trials: u64, seed: u64) -> Self {
        ExperimentConfig {
            params,
            initial,
            horizon,
            trials,
            seed,
            tol: None,
            consensus_tol: None,
            fluct_threshold: None,
            window: None,
            parallelism: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trials < 1 {
            return Err(Error::InvalidConfiguration("trials must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfiguration("horizon must be >= 1".into()));
        }
        if let Some(w) = self.window {
            if w.checked_mul(2).is_none_or(|w2| w2 > self.horizon) {
                return Err(Error::InvalidConfiguration(format!(
                    "window {w} must be at most half the horizon {}",
                    self.horizon
                )));
            }
        }
        for (name, v) in [
            ("tol", self.tol),
            ("consensus_tol", self.consensus_tol),
            ("fluct_threshold", self.fluct_threshold),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidConfiguration(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.parallelism == Some(0) {
            return Err(Error::InvalidConfiguration("parallelism must be >= 1".into()));
        }
        self.initial.validate(&self.params)
    }

    pub fn window(&self) -> u64 {
        self.window.unwrap_or_else(|| default_window(self.horizon))
    }

    /// Thresholds with unset fields filled from the documented defaults.
    pub fn thresholds(&self) -> Thresholds {
        let tol = self
            .tol
            .unwrap_or(if self.params.is_global() { 1e-9 } else { 1e-6 });
        Thresholds {
            tol,
            consensus_tol: self.consensus_tol.unwrap_or(10.0 * tol),
            fluct_threshold: self.fluct_threshold.unwrap_or(self.params.eta / 2.0),
            window: self.window(),
        }
    }

    pub fn recording(&self) -> Recording {
        Recording::auto(self.horizon, self.window())
    }

    /// Worker count: the config value, else the environment, else rayon's default.
    pub fn threads(&self) -> Option<usize> {
        self.parallelism.or_else(|| {
            std::env::var(PARALLELISM_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .filter(|&n: &usize| n > 0)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub initial: Vec<f64>,
    pub classification: ClassificationResult,
}

/// Context handed to per-trial analyses.
pub struct TrialContext<'a> {
    pub trial: u64,
    pub config: &'a ExperimentConfig,
    pub initial: &'a OpinionVector,
    pub trajectory: &'a TrajectoryRecord,
}

/// Runs every trial and maps its trajectory through `analyse`. Results come
/// back in trial order whatever the schedule; trial `r` draws only from the
/// streams addressed by `(seed, r)`.
pub fn run_trials_with<T, F>(config: &ExperimentConfig, analyse: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&TrialContext<'_>) -> Result<T> + Sync,
{
    config.validate()?;
    let spec = RngSpec::new(config.seed);
    let one = |r: u64| -> Result<T> {
        let wrap = |e: Error| Error::Trial {
            trial: r,
            source: Box::new(e),
        };
        let mut rng: TrialRng = spec.trial(r);
        let x0 = config.initial.sample(&config.params, &mut rng).map_err(wrap)?;
        let traj = simulate(&config.params, &x0, config.horizon, &mut rng, config.recording()).map_err(wrap)?;
        analyse(&TrialContext {
            trial: r,
            config,
            initial: &x0,
            trajectory: &traj,
        })
        .map_err(wrap)
    };
    match config.threads() {
        Some(1) => (0..config.trials).map(one).collect(),
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfiguration(format!("thread pool: {e}")))?;
            pool.install(|| (0..config.trials).into_par_iter().map(one).collect())
        }
        None => (0..config.trials).into_par_iter().map(one).collect(),
    }
}

pub fn run_trials(config: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    let th = config.thresholds();
    run_trials_with(config, |ctx| {
        Ok(TrialResult {
            trial: ctx.trial,
            seed: ctx.config.seed,
            initial: ctx.initial.values.clone(),
            classification: classify(ctx.trajectory, &th)?,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Event {
    Consensus,
    Disagreement,
    PartialAgreement,
    Fluctuation,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Consensus => "consensus",
            Event::Disagreement => "disagreement",
            Event::PartialAgreement => "partial-agreement",
            Event::Fluctuation => "fluctuation",
        }
    }

    pub fn holds(self, v: Verdict) -> bool {
        matches!(
            (self, v),
            (Event::Consensus, Verdict::Consensus)
                | (Event::Disagreement, Verdict::Disagreement)
                | (Event::PartialAgreement, Verdict::PartialAgreement)
                | (Event::Fluctuation, Verdict::Fluctuating)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub event: String,
    pub successes: u64,
    pub failures: u64,
    pub undetermined: u64,
    pub trials: u64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (successes as f64, n as f64);
    let p = k / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lower = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let upper = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lower, upper)
}

/// Proportion of determined trials in which `event` holds. Undetermined
/// trials are reported but excluded from the proportion.
pub fn estimate_probability(verdicts: &[Verdict], event: Event) -> Result<ProbabilityEstimate> {
    if verdicts.is_empty() {
        return Err(Error::InsufficientData("no trials".into()));
    }
    let undetermined = verdicts.iter().filter(|&&v| v == Verdict::Undetermined).count() as u64;
    let successes = verdicts.iter().filter(|&&v| event.holds(v)).count() as u64;
    let trials = verdicts.len() as u64;
    let determined = trials - undetermined;
    if determined == 0 {
        return Err(Error::DegenerateEstimate(format!(
            "all {trials} trials undetermined for {}",
            event.name()
        )));
    }
    let (lower, upper) = wilson_interval(successes, determined);
    Ok(ProbabilityEstimate {
        event: event.name().to_string(),
        successes,
        failures: determined - successes,
        undetermined,
        trials,
        point: successes as f64 / determined as f64,
        lower,
        upper,
    })
}

pub fn verdicts_of(results: &[TrialResult]) -> Vec<Verdict> {
    results.iter().map(|r| r.classification.verdict).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub samples: u64,
    pub bins: usize,
    /// Mean over cells of |empirical - exact| cell density.
    pub mean_abs_error: f64,
    /// Largest exact cell density.
    pub peak: f64,
    /// `mean_abs_error / peak`.
    pub relative_error: f64,
    /// Quadrature of the exact density over the unit cube.
    pub normalization: f64,
}

const QUADRATURE_POINTS: usize = 8;

/// Histograms the selected order statistics of `samples` draws of `n`
/// uniforms and compares cell by cell with the exact density averaged over
/// each cell. Supports one or two selected statistics.
pub fn density_validation(n: usize, indices: &[usize], samples: u64, bins: usize, seed: u64) -> Result<DensityReport> {
    if samples == 0 {
        return Err(Error::DegenerateEstimate("zero samples".into()));
    }
    if !(1..=2).contains(&indices.len()) {
        return Err(Error::InvalidArgument(format!(
            "density check supports one or two statistics, got {}",
            indices.len()
        )));
    }
    if bins == 0 || n == 0 || n > 12 {
        return Err(Error::InvalidArgument(format!("need bins >= 1 and 1 <= n <= 12, got bins = {bins}, n = {n}")));
    }
    // validates the indices
    order_stat_density(indices, &vec![0.5; indices.len()], n)?;

    let dim = indices.len();
    let cells = bins.pow(dim as u32);
    let mut counts = vec![0u64; cells];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = vec![0.0; n];
    let cell_of = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
    for _ in 0..samples {
        draw.iter_mut().for_each(|v| *v = rng.random::<f64>());
        draw.sort_by(f64::total_cmp);
        let mut c = 0;
        for &i in indices {
            c = c * bins + cell_of(draw[i - 1]);
        }
        counts[c] += 1;
    }

    let h = 1.0 / bins as f64;
    let q = QUADRATURE_POINTS;
    let exact_cell = |cell: usize| -> Result<f64> {
        let mut coords = vec![0usize; dim];
        let mut rem = cell;
        for d in (0..dim).rev() {
            coords[d] = rem % bins;
            rem /= bins;
        }
        let mut acc = 0.0;
        let mut point = vec![0.0; dim];
        for sub in 0..q.pow(dim as u32) {
            let mut r = sub;
            for d in (0..dim).rev() {
                point[d] = (coords[d] as f64 + ((r % q) as f64 + 0.5) / q as f64) * h;
                r /= q;
            }
            acc += order_stat_density(indices, &point, n)?;
        }
        Ok(acc / q.pow(dim as u32) as f64)
    };

    let volume = h.powi(dim as i32);
    let mut abs_err = 0.0;
    let mut peak: f64 = 0.0;
    let mut mass = 0.0;
    for (cell, &count) in counts.iter().enumerate() {
        let exact = exact_cell(cell)?;
        let empirical = count as f64 / (samples as f64 * volume);
        abs_err += (empirical - exact).abs();
        peak = peak.max(exact);
        mass += exact * volume;
    }
    let mean_abs_error = abs_err / cells as f64;
    Ok(DensityReport {
        samples,
        bins,
        mean_abs_error,
        peak,
        relative_error: mean_abs_error / peak,
        normalization: mass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eta,
    Delta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub fluctuation: ProbabilityEstimate,
    pub consensus: ProbabilityEstimate,
}

/// Fluctuation and consensus frequencies at each grid value, in grid order.
/// Unset thresholds are re-derived per point, so the default fluctuation
/// threshold tracks eta.
pub fn phase_sweep(base: &ExperimentConfig, axis: SweepAxis, grid: &[f64]) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::Eta => cfg.params.eta = value,
                SweepAxis::Delta => cfg.params.delta = value,
            }
            let verdicts = verdicts_of(&run_trials(&cfg)?);
            Ok(SweepRow {
                value,
                fluctuation: estimate_probability(&verdicts, Event::Fluctuation)?,
                consensus: estimate_probability(&verdicts, Event::Consensus)?,
            })
        })
        .collect()
}
