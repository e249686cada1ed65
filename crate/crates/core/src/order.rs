//! Ordered statistics of node states and clique averages, the selection-tube
//! partition of clique averages around a pivot node, and closed-form oracles
//! for the all-network (m = n) regime.
//!
//! Conventions: node indices into state slices are 0-based. Sorted positions
//! and set parameters (`s`, `k`, `K`) are 1-based, because their admissible
//! ranges are formulas in those numbers (e.g. `n - m + 1 <= s <= m - 1`).

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::Serialize;

use crate::dynamics::{mean_of, ModelParams, OpinionVector};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderedStats {
    pub sorted_values: Vec<f64>,
    /// `permutation[p]` is the node holding the (p+1)-th smallest value.
    pub permutation: Vec<usize>,
}

impl OrderedStats {
    pub fn n(&self) -> usize {
        self.sorted_values.len()
    }

    /// Value at 1-based sorted position `pos`.
    pub fn at(&self, pos: usize) -> f64 {
        self.sorted_values[pos - 1]
    }

    /// D_[i,j] = x_[j] - x_[i] for 1-based positions `i <= j`.
    pub fn range(&self, i: usize, j: usize) -> Result<f64> {
        range_d(self, i, j)
    }

    /// 1-based sorted position of every node.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.n()];
        for (p, &node) in self.permutation.iter().enumerate() {
            ranks[node] = p + 1;
        }
        ranks
    }
}

/// Stable sort of the state; ties keep index order.
pub fn ordered_statistics(x: &[f64]) -> OrderedStats {
    let mut permutation: Vec<usize> = (0..x.len()).collect();
    permutation.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sorted_values = permutation.iter().map(|&i| x[i]).collect();
    OrderedStats {
        sorted_values,
        permutation,
    }
}

pub fn range_d(stats: &OrderedStats, i: usize, j: usize) -> Result<f64> {
    let n = stats.n();
    if i < 1 || i > j || j > n {
        return Err(Error::InvalidArgument(format!(
            "D_[{i},{j}] needs 1 <= i <= j <= n = {n}"
        )));
    }
    Ok(stats.at(j) - stats.at(i))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliqueAverageStats {
    pub sorted_averages: Vec<f64>,
    /// Node indices (0-based, ascending) of the clique behind each average.
    pub subset_of: Vec<Vec<usize>>,
}

fn check_cap(n: usize, m: usize, cap: u128) -> Result<u128> {
    let count = binomial(n, m);
    if count > cap {
        return Err(Error::CapacityExceeded { n, m, count, cap });
    }
    Ok(count)
}

/// Enumerates all C(n, m) clique averages and sorts them; ties keep the
/// lexicographic subset order.
pub fn clique_average_order_stats(x: &[f64], m: usize, cap: u128) -> Result<CliqueAverageStats> {
    let n = x.len();
    if m < 1 || m > n {
        return Err(Error::InvalidArgument(format!(
            "clique size {m} must satisfy 1 <= m <= n = {n}"
        )));
    }
    check_cap(n, m, cap)?;
    let mut entries: Vec<(f64, Vec<usize>)> = (0..n)
        .combinations(m)
        .map(|subset| {
            let avg = subset.iter().map(|&j| x[j]).sum::<f64>() / m as f64;
            (avg, subset)
        })
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (sorted_averages, subset_of) = entries.into_iter().unzip();
    Ok(CliqueAverageStats {
        sorted_averages,
        subset_of,
    })
}

/// Counts of clique members below the pivot, at the pivot and above it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SelectionTube {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl SelectionTube {
    pub fn size(&self) -> usize {
        self.k1 + self.k2 + self.k3
    }
}

/// Tube of a clique given the 1-based sorted positions of its members.
pub fn selection_tube(positions: &[usize], s: usize) -> SelectionTube {
    let mut tube = SelectionTube { k1: 0, k2: 0, k3: 0 };
    for &p in positions {
        match p.cmp(&s) {
            std::cmp::Ordering::Less => tube.k1 += 1,
            std::cmp::Ordering::Equal => tube.k2 += 1,
            std::cmp::Ordering::Greater => tube.k3 += 1,
        }
    }
    tube
}

/// K_s = min{s, n-s+1, m+1} + min{s, n-s+1, m}.
pub fn k_s_formula(n: usize, m: usize, s: usize) -> usize {
    let a = s.min(n - s + 1);
    a.min(m + 1) + a.min(m)
}

/// Number of tubes realisable by some m-subset: k1 <= s-1, k2 in {0,1}, k3 <= n-s.
pub fn admissible_tube_count(n: usize, m: usize, s: usize) -> usize {
    (0..=1usize)
        .map(|k2| {
            (0..s)
                .filter(|&k1| k1 + k2 <= m && m - k1 - k2 <= n - s)
                .count()
        })
        .sum()
}

/// One equivalence class of clique averages sharing a selection tube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientClass {
    pub tube: SelectionTube,
    /// Indices into the sorted clique averages.
    pub members: Vec<usize>,
    /// Smallest average in the class.
    pub lower: f64,
    /// Largest average in the class.
    pub upper: f64,
    /// Internal diameter `upper - lower`.
    pub diameter: f64,
    /// Distance to the nearest average outside the class; infinite when the
    /// class is the only one.
    pub gap: f64,
    /// Largest gap between consecutive averages of the class; `None` for singletons.
    pub max_adjacent_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterAnalysis {
    /// 1-based pivot position.
    pub s: usize,
    pub n: usize,
    pub m: usize,
    pub stats: OrderedStats,
    pub averages: CliqueAverageStats,
    /// Tube of each sorted average.
    pub tube_of: Vec<SelectionTube>,
    /// Classes ordered by their smallest average.
    pub classes: Vec<QuotientClass>,
    pub k_s: usize,
    pub alpha_s: f64,
    pub beta_s: f64,
}

impl ClusterAnalysis {
    pub fn realized_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class whose range `[lower, upper]` contains `value`, if any.
    pub fn class_containing(&self, value: f64) -> Option<&QuotientClass> {
        self.classes
            .iter()
            .find(|c| c.lower <= value && value <= c.upper)
    }

    pub fn class_with_tube(&self, tube: SelectionTube) -> Option<&QuotientClass> {
        self.classes.iter().find(|c| c.tube == tube)
    }
}

/// α_s = max{D_[1,s-1], D_[s+1,n]} and β_s = min{D_[s-1,s], D_[s,s+1]}.
pub fn alpha_beta(stats: &OrderedStats, s: usize) -> Result<(f64, f64)> {
    let n = stats.n();
    if s < 2 || s + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "pivot s = {s} needs neighbours on both sides (2 <= s <= n - 1 = {})",
            n - 1
        )));
    }
    let alpha = range_d(stats, 1, s - 1)?.max(range_d(stats, s + 1, n)?);
    let beta = range_d(stats, s - 1, s)?.min(range_d(stats, s, s + 1)?);
    Ok((alpha, beta))
}

/// Groups every clique average by its selection tube around pivot `s`.
///
/// Groups are taken by sorted position. Ties inside a group are allowed;
/// a tie across a group boundary makes membership ambiguous and is rejected.
pub fn quotient_partition(x0: &[f64], s: usize, m: usize) -> Result<ClusterAnalysis> {
    quotient_partition_capped(x0, s, m, DEFAULT_ENUMERATION_CAP)
}

pub fn quotient_partition_capped(x0: &[f64], s: usize, m: usize, cap: u128) -> Result<ClusterAnalysis> {
    let n = x0.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("clique size m = {m} must be >= 2")));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("clique size m = {m} exceeds n = {n}")));
    }
    if s + m < n + 1 || s + 1 > m || s < 2 {
        return Err(Error::InvalidArgument(format!(
            "pivot s = {s} outside n - m + 1 <= s <= m - 1 (n = {n}, m = {m})"
        )));
    }
    check_cap(n, m, cap)?;
    let stats = ordered_statistics(x0);
    let xs = &stats.sorted_values;
    if xs[s - 2] >= xs[s - 1] || xs[s - 1] >= xs[s] {
        return Err(Error::PreconditionViolation(format!(
            "pivot value x_[{s}] ties with a neighbour; groups are ambiguous"
        )));
    }
    let (alpha_s, beta_s) = alpha_beta(&stats, s)?;

    // enumerate over sorted positions 1..=n
    let mut entries: Vec<(f64, Vec<usize>, SelectionTube)> = (1..=n)
        .combinations(m)
        .map(|pos| {
            let avg = pos.iter().map(|&p| xs[p - 1]).sum::<f64>() / m as f64;
            let tube = selection_tube(&pos, s);
            (avg, pos, tube)
        })
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sorted_averages = Vec::with_capacity(entries.len());
    let mut subset_of = Vec::with_capacity(entries.len());
    let mut tube_of = Vec::with_capacity(entries.len());
    for (avg, pos, tube) in entries {
        sorted_averages.push(avg);
        let mut nodes: Vec<usize> = pos.iter().map(|&p| stats.permutation[p - 1]).collect();
        nodes.sort_unstable();
        subset_of.push(nodes);
        tube_of.push(tube);
    }

    let mut by_tube: BTreeMap<SelectionTube, Vec<usize>> = BTreeMap::new();
    for (idx, tube) in tube_of.iter().enumerate() {
        by_tube.entry(*tube).or_default().push(idx);
    }

    // nearest outside average: for a two-colouring of a sorted list the
    // closest cross pair is adjacent
    let mut gap: BTreeMap<SelectionTube, f64> = by_tube.keys().map(|t| (*t, f64::INFINITY)).collect();
    for i in 1..sorted_averages.len() {
        let (a, b) = (tube_of[i - 1], tube_of[i]);
        if a != b {
            let d = sorted_averages[i] - sorted_averages[i - 1];
            for t in [a, b] {
                let g = gap.get_mut(&t).expect("tube registered");
                *g = g.min(d);
            }
        }
    }

    let mut classes: Vec<QuotientClass> = by_tube
        .into_iter()
        .map(|(tube, members)| {
            let vals: Vec<f64> = members.iter().map(|&i| sorted_averages[i]).collect();
            let lower = vals[0];
            let upper = *vals.last().expect("class is nonempty");
            let max_adjacent_gap = vals
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
            QuotientClass {
                tube,
                members,
                lower,
                upper,
                diameter: upper - lower,
                gap: gap[&tube],
                max_adjacent_gap,
            }
        })
        .collect();
    classes.sort_by(|a, b| a.lower.total_cmp(&b.lower).then(a.tube.cmp(&b.tube)));

    Ok(ClusterAnalysis {
        s,
        n,
        m,
        stats,
        averages: CliqueAverageStats {
            sorted_averages,
            subset_of,
        },
        tube_of,
        classes,
        k_s: k_s_formula(n, m, s),
        alpha_s,
        beta_s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Lemma1Bound {
    /// β_s / m <= C_l
    GapLower,
    /// C_l <= max{D_[s-1,s], D_[s,s+1]} / m
    GapUpper,
    /// min{D_[1,s-1], D_[s+1,n]} / m <= R_l
    DiameterLower,
    /// R_l <= α_s
    DiameterUpper,
    /// min_i D_[i,i+1] / m <= largest consecutive gap inside the class
    AdjacentLower,
    /// largest consecutive gap inside the class <= α_s / m
    AdjacentUpper,
}

impl Lemma1Bound {
    pub const ALL: [Lemma1Bound; 6] = [
        Lemma1Bound::GapLower,
        Lemma1Bound::GapUpper,
        Lemma1Bound::DiameterLower,
        Lemma1Bound::DiameterUpper,
        Lemma1Bound::AdjacentLower,
        Lemma1Bound::AdjacentUpper,
    ];

    fn is_lower(self) -> bool {
        matches!(
            self,
            Lemma1Bound::GapLower | Lemma1Bound::DiameterLower | Lemma1Bound::AdjacentLower
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub bound: Lemma1Bound,
    /// Index into `ClusterAnalysis::classes`.
    pub class: usize,
    pub limit: f64,
    pub value: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Report {
    /// False when α_s = 0; no inequality is checked then.
    pub precondition_met: bool,
    pub checks: Vec<BoundCheck>,
}

impl Lemma1Report {
    pub fn all_passed(&self) -> bool {
        self.precondition_met && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn passed_for(&self, bound: Lemma1Bound) -> bool {
        self.checks.iter().filter(|c| c.bound == bound).all(|c| c.passed)
    }
}

/// Evaluates the class-gap, class-diameter and consecutive-gap bounds for
/// every quotient class. Bounds that quantify over pairs inside a class are
/// only checked for classes with at least two averages; the gap bounds need
/// at least two classes.
pub fn verify_lemma1_bounds(analysis: &ClusterAnalysis, slack: f64) -> Lemma1Report {
    if !(analysis.alpha_s > 0.0) {
        return Lemma1Report {
            precondition_met: false,
            checks: Vec::new(),
        };
    }
    let stats = &analysis.stats;
    let (n, s, m) = (analysis.n, analysis.s, analysis.m as f64);
    let d = |i: usize, j: usize| stats.at(j) - stats.at(i);
    let gap_lower = analysis.beta_s / m;
    let gap_upper = d(s - 1, s).max(d(s, s + 1)) / m;
    let diam_lower = d(1, s - 1).min(d(s + 1, n)) / m;
    let diam_upper = analysis.alpha_s;
    let adj_lower = (1..n).map(|i| d(i, i + 1)).fold(f64::INFINITY, f64::min) / m;
    let adj_upper = analysis.alpha_s / m;

    let mut checks = Vec::new();
    let mut push = |bound: Lemma1Bound, class: usize, limit: f64, value: f64| {
        let passed = if bound.is_lower() {
            value >= limit - slack
        } else {
            value <= limit + slack
        };
        checks.push(BoundCheck {
            bound,
            class,
            limit,
            value,
            passed,
        });
    };
    for (l, class) in analysis.classes.iter().enumerate() {
        if class.gap.is_finite() {
            push(Lemma1Bound::GapLower, l, gap_lower, class.gap);
            push(Lemma1Bound::GapUpper, l, gap_upper, class.gap);
        }
        if class.members.len() >= 2 {
            push(Lemma1Bound::DiameterLower, l, diam_lower, class.diameter);
        }
        push(Lemma1Bound::DiameterUpper, l, diam_upper, class.diameter);
        if let Some(g) = class.max_adjacent_gap {
            push(Lemma1Bound::AdjacentLower, l, adj_lower, g);
            push(Lemma1Bound::AdjacentUpper, l, adj_upper, g);
        }
    }
    Lemma1Report {
        precondition_met: true,
        checks,
    }
}

/// Hypotheses under which the pivot node keeps its order and fluctuates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma2Report {
    /// Index into `ClusterAnalysis::classes` of a class whose range holds x_[s].
    pub pivot_class: Option<usize>,
    /// β_s > 3 α_s
    pub separated: bool,
    /// α_s / m < η <= β_s / m - α_s / (m - 1)
    pub eta_window: bool,
}

impl Lemma2Report {
    pub fn holds(&self) -> bool {
        self.pivot_class.is_some() && self.separated && self.eta_window
    }
}

pub fn verify_lemma2_conditions(analysis: &ClusterAnalysis, eta: f64) -> Lemma2Report {
    let xs = analysis.stats.at(analysis.s);
    let m = analysis.m as f64;
    let (a, b) = (analysis.alpha_s, analysis.beta_s);
    Lemma2Report {
        pivot_class: analysis
            .classes
            .iter()
            .position(|c| c.lower <= xs && xs <= c.upper),
        separated: b > 3.0 * a,
        eta_window: a / m < eta && eta <= b / m - a / (m - 1.0),
    }
}

fn require_global(params: &ModelParams, n: usize) -> Result<()> {
    if !params.is_global() {
        return Err(Error::PreconditionViolation(format!(
            "closed form needs m = n, got m = {}, n = {}",
            params.m, params.n
        )));
    }
    if n != params.n {
        return Err(Error::InvalidArgument(format!(
            "state has {n} entries, params say n = {}",
            params.n
        )));
    }
    Ok(())
}

/// Almost-sure limit of the node at 1-based sorted position `k` when it is
/// the only node inside the confidence band of the network mean.
pub fn theorem3_limit(x0: &OpinionVector, k: usize, params: &ModelParams) -> Result<f64> {
    let n = x0.len();
    require_global(params, n)?;
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("position k = {k} outside 1..={n}")));
    }
    let stats = ordered_statistics(&x0.values);
    let mean = mean_of(&x0.values);
    let delta_k = mean - stats.at(k);
    if !(0.0..=params.eta).contains(&delta_k) {
        return Err(Error::PreconditionViolation(format!(
            "Delta_k = mean - x_[k] = {delta_k} must lie in [0, eta = {}]",
            params.eta
        )));
    }
    let margin = params.eta + delta_k / (n as f64 - 1.0);
    let nearest = (1..=n)
        .filter(|&p| p != k)
        .map(|p| (stats.at(p) - mean).abs())
        .fold(f64::INFINITY, f64::min);
    if !(nearest > margin) {
        return Err(Error::PreconditionViolation(format!(
            "min over s != k of |x_[s] - mean| = {nearest} must exceed eta + Delta_k/(n-1) = {margin}"
        )));
    }
    Ok(mean + delta_k / (n as f64 - 1.0))
}

/// First time at which node 2 (index 1) enters the confidence band of the
/// mean, for a state in which node 1 (index 0) alone starts inside it from
/// below and node 2 sits just above it.
pub fn t_star(x0: &OpinionVector, params: &ModelParams) -> Result<u64> {
    let n = x0.len();
    require_global(params, n)?;
    let x = &x0.values;
    let mean = mean_of(x);
    let eta = params.eta;
    let gap1 = mean - x[0];
    if !(gap1 > 0.0 && gap1 <= eta) {
        return Err(Error::PreconditionViolation(format!(
            "need 0 < mean - x_1 <= eta, got mean - x_1 = {gap1}"
        )));
    }
    let margin = eta + gap1 / (n as f64 - 1.0);
    let gap2 = x[1] - mean;
    if !(gap2 >= eta && gap2 < margin) {
        return Err(Error::PreconditionViolation(format!(
            "need eta <= x_2 - mean < eta + (mean - x_1)/(n-1) = {margin}, got {gap2}"
        )));
    }
    if let Some(j) = (2..n).find(|&j| !((x[j] - mean).abs() >= margin)) {
        return Err(Error::PreconditionViolation(format!(
            "need |x_j - mean| >= {margin} for j >= 3, node {} has {}",
            j + 1,
            (x[j] - mean).abs()
        )));
    }
    let arg = 1.0 - (n as f64 - 1.0) * (gap2 - eta) / gap1;
    if !(arg > 0.0 && arg <= 1.0) {
        return Err(Error::PreconditionViolation(format!(
            "logarithm argument {arg} outside (0, 1]"
        )));
    }
    let rate = 1.0 - params.delta + params.delta / n as f64;
    let t = (arg.ln() / rate.ln()).ceil();
    Ok(t.max(0.0) as u64)
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Joint density of the order statistics at 1-based `indices` of `n`
/// i.i.d. uniforms on [0, 1], evaluated at `point`.
pub fn order_stat_density(indices: &[usize], point: &[f64], n: usize) -> Result<f64> {
    if indices.is_empty() || indices.len() != point.len() {
        return Err(Error::InvalidArgument(format!(
            "{} indices but {} coordinates",
            indices.len(),
            point.len()
        )));
    }
    if indices[0] < 1 || *indices.last().unwrap() > n || indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "indices {indices:?} must be strictly increasing within 1..={n}"
        )));
    }
    if point[0] < 0.0 || *point.last().unwrap() > 1.0 || point.windows(2).any(|w| w[0] > w[1]) {
        return Ok(0.0);
    }
    let k = indices.len();
    let mut log_coef = ln_factorial(n) - ln_factorial(indices[0] - 1) - ln_factorial(n - indices[k - 1]);
    let mut value = point[0].powi(indices[0] as i32 - 1) * (1.0 - point[k - 1]).powi((n - indices[k - 1]) as i32);
    for s in 0..k - 1 {
        let gap = indices[s + 1] - indices[s] - 1;
        log_coef -= ln_factorial(gap);
        value *= (point[s + 1] - point[s]).powi(gap as i32);
    }
    Ok(log_coef.exp() * value)
}
