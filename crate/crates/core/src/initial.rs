//! Initial-condition samplers and membership predicates.
//!
//! Region samplers reject from i.i.d. uniforms and return the state in the
//! layout the region definitions use: node 0 is `x_1`, node 1 is `x_2`, and so
//! on, so that a caller can read off the roles of the nodes by index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mean_of, ModelParams, OpinionVector};
use crate::error::{Error, Result};
use crate::order::{ordered_statistics, quotient_partition, verify_lemma2_conditions, Lemma2Report};
use crate::rng::TrialRng;

pub const DEFAULT_MAX_TRIES: u64 = 10_000_000;

/// How the initial state of a trial is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum InitialSpec {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "A_k")]
    AK { k: usize },
    #[serde(rename = "B_kl")]
    BKL { k: usize, l: usize },
    C1,
    C2,
    Istar1,
    Istar2,
    Istar3,
    #[serde(rename = "E_K0")]
    EK0 {
        #[serde(rename = "K")]
        big_k: usize,
        beta: f64,
    },
    #[serde(rename = "theorem4_gamma")]
    Theorem4Gamma {
        s: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    #[serde(rename = "explicit")]
    Explicit { values: Vec<f64> },
}

impl InitialSpec {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let n = params.n;
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        match self {
            InitialSpec::AK { k } if *k < 1 || *k >= n => bad(format!("A_k needs 1 <= k <= n-1, got k = {k}")),
            InitialSpec::BKL { k, l } if *k < 1 || *k >= n || *l < 1 || k + l > n => {
                bad(format!("B_kl needs 1 <= k <= n-1 and 1 <= l <= n-k, got k = {k}, l = {l}"))
            }
            InitialSpec::EK0 { big_k, beta } => validate_e_k0(params, *big_k, *beta),
            InitialSpec::Theorem4Gamma { s, k } => {
                validate_theorem4(params, *s)?;
                match k {
                    Some(k) if *k < 1 || k > s => bad(format!("tube index k = {k} outside 1..={s}")),
                    _ => Ok(()),
                }
            }
            InitialSpec::Explicit { values } => {
                if values.len() != n {
                    return bad(format!("explicit state has {} entries, n = {n}", values.len()));
                }
                OpinionVector::new(values.clone()).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// Draws the initial state of one trial from its reserved stream.
    pub fn sample(&self, params: &ModelParams, rng: &mut TrialRng) -> Result<OpinionVector> {
        self.validate(params)?;
        let (n, eta) = (params.n, params.eta);
        let r = rng.initial_stream();
        match self {
            InitialSpec::Uniform => Ok(sample_uniform(n, r)),
            InitialSpec::AK { k } => sample_region(RegionLabel::A { k: *k }, params, r, DEFAULT_MAX_TRIES),
            InitialSpec::BKL { k, l } => {
                sample_region(RegionLabel::B { k: *k, l: *l }, params, r, DEFAULT_MAX_TRIES)
            }
            InitialSpec::C1 => sample_region(RegionLabel::C1, params, r, DEFAULT_MAX_TRIES),
            InitialSpec::C2 => sample_region(RegionLabel::C2, params, r, DEFAULT_MAX_TRIES),
            InitialSpec::Istar1 => Ok(sample_istar(IStar::One, n, eta, r)),
            InitialSpec::Istar2 => Ok(sample_istar(IStar::Two, n, eta, r)),
            InitialSpec::Istar3 => Ok(sample_istar(IStar::Three, n, eta, r)),
            InitialSpec::EK0 { big_k, beta } => sample_e_k0(params, *big_k, *beta, r),
            InitialSpec::Theorem4Gamma { s, k } => {
                sample_theorem4_initial(params, *s, *k, r, DEFAULT_MAX_TRIES).map(|t| t.state)
            }
            InitialSpec::Explicit { values } => OpinionVector::new(values.clone()),
        }
    }
}

pub fn sample_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> OpinionVector {
    OpinionVector {
        values: (0..n).map(|_| rng.random::<f64>()).collect(),
        time: 0,
    }
}

/// Position of a state among the convergence regions of the all-network case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    /// `k` nodes within η of the mean, every other node clear of the band.
    A { k: usize },
    /// `k` nodes within η, `l` nodes in the band that the mean will drift into.
    B { k: usize, l: usize },
    /// No node within η of the mean: the state is frozen.
    C1,
    /// Every node within η of the mean.
    C2,
    /// Non-finite input.
    Unclassified,
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegionLabel::A { k } => write!(f, "A_{k}"),
            RegionLabel::B { k, l } => write!(f, "B_{k},{l}"),
            RegionLabel::C1 => f.write_str("C1"),
            RegionLabel::C2 => f.write_str("C2"),
            RegionLabel::Unclassified => f.write_str("unclassified"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionClassification {
    pub label: RegionLabel,
    /// `order[i]` is the node playing the role of `x_{i+1}`: nodes inside the
    /// band first (closest to the mean first), then the drift band, then the rest.
    pub order: Vec<usize>,
}

impl RegionClassification {
    /// The state rearranged into the region's layout.
    pub fn arrange(&self, x: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| x[i]).collect()
    }
}

/// Sorts nodes by distance to the mean and reads off the region.
///
/// With a single node outside the band (k = n - 1) the outlier's distance is
/// at most the summed distances of the others, so it always lies in the drift
/// band; that case is labelled `B_{n-1,1}`.
pub fn classify_region(x0: &[f64], eta: f64) -> RegionClassification {
    let n = x0.len();
    if n == 0 || x0.iter().any(|v| !v.is_finite()) {
        return RegionClassification {
            label: RegionLabel::Unclassified,
            order: (0..n).collect(),
        };
    }
    let mean = mean_of(x0);
    let dist: Vec<f64> = x0.iter().map(|v| (v - mean).abs()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    let k = order.iter().take_while(|&&i| dist[i] <= eta).count();
    let label = if k == 0 {
        RegionLabel::C1
    } else if k == n {
        RegionLabel::C2
    } else {
        let inner: f64 = order[..k].iter().map(|&i| dist[i]).sum();
        let threshold = eta + inner / (n - k) as f64;
        let l = order[k..].iter().take_while(|&&i| dist[i] < threshold).count();
        if l == 0 {
            RegionLabel::A { k }
        } else {
            RegionLabel::B { k, l }
        }
    };
    RegionClassification { label, order }
}

fn sampling_failure(tries: u64, accepted: u64) -> Error {
    Error::SamplingFailure {
        tries,
        accepted,
        rate: accepted as f64 / tries.max(1) as f64,
    }
}

/// Rejection-samples a uniform state in the given region and returns it in
/// the region's layout. States are reflected (x -> 1 - x) so that `x_1` lies
/// at or below the mean; for `B_{1,1}` the sampler additionally requires
/// `x_2` above the mean, the signed configuration in which the drift time
/// has a closed form.
pub fn sample_region<R: Rng + ?Sized>(
    target: RegionLabel,
    params: &ModelParams,
    rng: &mut R,
    max_tries: u64,
) -> Result<OpinionVector> {
    if target == RegionLabel::Unclassified {
        return Err(Error::InvalidArgument("cannot sample the unclassified label".into()));
    }
    for _ in 0..max_tries {
        let x = sample_uniform(params.n, rng).values;
        let class = classify_region(&x, params.eta);
        if class.label != target {
            continue;
        }
        let mut y = class.arrange(&x);
        let mean = mean_of(&y);
        if y[0] > mean {
            y.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        if target == (RegionLabel::B { k: 1, l: 1 }) && !(y[1] > mean_of(&y)) {
            continue;
        }
        return OpinionVector::new(y);
    }
    Err(sampling_failure(max_tries, 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IStar {
    /// Range below η.
    One,
    /// Node 1 at 0, every other node within η^n of 1.
    Two,
    /// Pairwise distinct; first half in [0, η), rest in (1 - η, 1].
    Three,
}

pub fn membership_istar(x0: &[f64], eta: f64, which: IStar) -> bool {
    let n = x0.len();
    if n == 0 {
        return false;
    }
    match which {
        IStar::One => {
            let st = ordered_statistics(x0);
            st.at(n) - st.at(1) < eta
        }
        IStar::Two => {
            let lo = 1.0 - eta.powi(n as i32);
            x0[0] == 0.0 && x0[1..].iter().all(|&v| lo < v && v <= 1.0)
        }
        IStar::Three => {
            let half = n / 2;
            let distinct = {
                let st = ordered_statistics(x0);
                st.sorted_values.windows(2).all(|w| w[0] < w[1])
            };
            distinct
                && x0[..half].iter().all(|&v| (0.0..eta).contains(&v))
                && x0[half..].iter().all(|&v| 1.0 - eta < v && v <= 1.0)
        }
    }
}

/// Constructs a member of the requested set directly. Draws are uniform on
/// the coordinates the set leaves free.
pub fn sample_istar<R: Rng + ?Sized>(which: IStar, n: usize, eta: f64, rng: &mut R) -> OpinionVector {
    loop {
        let values: Vec<f64> = match which {
            IStar::One => {
                let width = eta * rng.random::<f64>();
                let base = (1.0 - width) * rng.random::<f64>();
                (0..n).map(|_| base + width * rng.random::<f64>()).collect()
            }
            IStar::Two => {
                let band = eta.powi(n as i32);
                std::iter::once(0.0)
                    .chain((1..n).map(|_| 1.0 - band * rng.random::<f64>()))
                    .collect()
            }
            IStar::Three => {
                let half = n / 2;
                (0..n)
                    .map(|i| {
                        let u = rng.random::<f64>();
                        if i < half {
                            eta * u
                        } else {
                            1.0 - eta * u
                        }
                    })
                    .collect()
            }
        };
        // rejects the measure-zero draws that land on an open boundary
        if membership_istar(&values, eta, which) {
            return OpinionVector { values, time: 0 };
        }
    }
}

/// Checks the parameter constraints of the constructed fluctuation event.
pub fn validate_e_k0(params: &ModelParams, big_k: usize, beta: f64) -> Result<()> {
    let (n, m, eta) = (params.n, params.m, params.eta);
    let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
    if 2 * m < n + 3 {
        return bad(format!("E_K0 needs (n+3)/2 <= m, got n = {n}, m = {m}"));
    }
    if 3 * m > 2 * n {
        return bad(format!("E_K0 needs m <= 2n/3, got n = {n}, m = {m}"));
    }
    if big_k + m < n + 2 || big_k + 1 > m {
        return bad(format!("E_K0 needs n-m+2 <= K <= m-1, got K = {big_k}"));
    }
    if !(beta > 0.0 && beta < eta) {
        return bad(format!("E_K0 needs 0 < beta < eta, got beta = {beta}, eta = {eta}"));
    }
    let eta_max = 1.0 / (6.0 + 4.0 * n as f64 / (m as f64 * (n as f64 - 1.0)));
    if !(eta < eta_max) {
        return bad(format!("E_K0 needs eta < 1/(6 + 4n/(m(n-1))) = {eta_max}, got eta = {eta}"));
    }
    Ok(())
}

/// K-1 zeros, one opinion uniform on (1/2 - beta, 1/2 + beta), then n-K ones.
pub fn sample_e_k0<R: Rng + ?Sized>(
    params: &ModelParams,
    big_k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<OpinionVector> {
    validate_e_k0(params, big_k, beta)?;
    let mid = loop {
        let v = 0.5 - beta + 2.0 * beta * rng.random::<f64>();
        if v > 0.5 - beta {
            break v;
        }
    };
    let mut values = vec![0.0; params.n];
    values[big_k - 1] = mid;
    values[big_k..].iter_mut().for_each(|v| *v = 1.0);
    OpinionVector::new(values)
}

/// Ranges of the clique averages through the pivot for tube (k-1, 1, m-k)
/// (`lower1..upper1`) and avoiding it for tube (k, 0, m-k) (`lower0..upper0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaIntervals {
    pub lower1: f64,
    pub upper1: f64,
    pub lower0: f64,
    pub upper0: f64,
}

impl GammaIntervals {
    pub fn contains1(&self, v: f64) -> bool {
        self.lower1 <= v && v <= self.upper1
    }

    pub fn contains0(&self, v: f64) -> bool {
        self.lower0 <= v && v <= self.upper0
    }
}

fn check_pivot(n: usize, m: usize, s: usize) -> Result<()> {
    if m < 2 || m > n || s < 2 || s + m < n + 1 || s + 1 > m {
        return Err(Error::InvalidArgument(format!(
            "pivot s = {s} outside n - m + 1 <= s <= m - 1 (n = {n}, m = {m})"
        )));
    }
    Ok(())
}

/// Evaluates the four γ bounds on a sorted state (`sorted[0]` is `x_1`).
pub fn gamma_intervals(sorted: &[f64], s: usize, k: usize, m: usize) -> Result<GammaIntervals> {
    let n = sorted.len();
    check_pivot(n, m, s)?;
    if k < 1 || k > s {
        return Err(Error::InvalidArgument(format!("tube index k = {k} outside 1..={s}")));
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("state must be sorted".into()));
    }
    let x = |i: usize| sorted[i - 1];
    let (mf, kf) = (m as f64, k as f64);
    let rest = (m - k) as f64;
    Ok(GammaIntervals {
        lower1: ((kf - 1.0) * x(1) + x(s) + rest * x(s + 1)) / mf,
        upper1: ((kf - 1.0) * x(s - 1) + x(s) + rest * x(n)) / mf,
        lower0: (kf * x(1) + rest * x(s + 1)) / mf,
        upper0: (kf * x(s - 1) + rest * x(n)) / mf,
    })
}

/// Transformed tube (x_1, D_[1,s-1], D_[s-1,s], D_[s,s+1], D_[s+1,n]).
pub fn tube_coordinates(sorted: &[f64], s: usize) -> [f64; 5] {
    let x = |i: usize| sorted[i - 1];
    let n = sorted.len();
    [
        x(1),
        x(s - 1) - x(1),
        x(s) - x(s - 1),
        x(s + 1) - x(s),
        x(n) - x(s + 1),
    ]
}

/// Membership of the transformed tube `y` in the two fluctuation sets, with
/// the inequalities evaluated exactly as displayed.
pub fn membership_b1b2(y: &[f64; 5], m: usize, eta: f64, k: usize) -> Result<(bool, bool)> {
    if y[1..].iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("gap coordinates must be nonnegative, got {y:?}")));
    }
    let (mf, kf) = (m as f64, k as f64);
    let rest = mf - kf;
    let spread = y[1].max(y[4]);
    let common = spread < mf * eta
        && y[2].min(y[3]) > (mf * mf - mf + 1.0) / (mf - 1.0) * spread + mf * eta;
    let b1 = common
        && rest / mf * y[3] < (kf - 1.0) / mf * (y[1] + y[2])
        && (kf - 1.0) / mf * y[2] < rest / mf * (y[3] + y[4]);
    let b2 = common
        && rest / mf * y[3] < kf / mf * (y[1] + y[2])
        && kf / mf * y[2] < rest / mf * (y[3] + y[4]);
    Ok((b1, b2))
}

pub fn validate_theorem4(params: &ModelParams, s: usize) -> Result<()> {
    let (n, m, eta) = (params.n, params.m, params.eta);
    if m < 4 {
        return Err(Error::InvalidConfiguration(format!("fluctuation regime needs m >= 4, got {m}")));
    }
    if n + 1 >= 2 * m {
        return Err(Error::InvalidConfiguration(format!(
            "fluctuation regime needs n < 2m - 1, got n = {n}, m = {m}"
        )));
    }
    let mf = m as f64;
    let eta_max = 1.0 / (2.0 * mf + 2.0 * mf.powi(3) / (mf - 1.0));
    if !(eta < eta_max) {
        return Err(Error::InvalidConfiguration(format!(
            "fluctuation regime needs eta < 1/(2m + 2m^3/(m-1)) = {eta_max}, got {eta}"
        )));
    }
    check_pivot(n, m, s).map_err(|e| Error::InvalidConfiguration(e.to_string()))
}

/// Which γ interval captured the pivot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaKind {
    /// Tube (k-1, 1, m-k): cliques through the pivot.
    Through,
    /// Tube (k, 0, m-k): cliques avoiding the pivot.
    Avoiding,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem4Sample {
    /// Sorted state; the pivot is node `s - 1`.
    pub state: OpinionVector,
    pub s: usize,
    pub k: usize,
    pub kind: GammaKind,
    pub lemma2: Lemma2Report,
    pub tries: u64,
}

/// First tube index whose γ interval holds the pivot together with the
/// matching ordering inequalities on the gaps.
pub fn gamma_hit(sorted: &[f64], s: usize, m: usize, k: Option<usize>) -> Result<Option<(usize, GammaKind)>> {
    let n = sorted.len();
    let d = |i: usize, j: usize| sorted[j - 1] - sorted[i - 1];
    let ks: Vec<usize> = match k {
        Some(k) => vec![k],
        None => (1..=s).collect(),
    };
    let xs = sorted[s - 1];
    for k in ks {
        let g = gamma_intervals(sorted, s, k, m)?;
        let (kf, rest) = (k as f64, (m - k) as f64);
        if g.contains1(xs) && rest * d(s, s + 1) < (kf - 1.0) * d(1, s) && (kf - 1.0) * d(s - 1, s) < rest * d(s, n) {
            return Ok(Some((k, GammaKind::Through)));
        }
        if k < s && g.contains0(xs) && rest * d(s, s + 1) < kf * d(1, s) && kf * d(s - 1, s) < rest * d(s, n) {
            return Ok(Some((k, GammaKind::Avoiding)));
        }
    }
    Ok(None)
}

/// Rejection-samples sorted uniform states whose pivot sits in a γ interval,
/// whose spreads satisfy the η window, and which meet the pivot-class
/// hypotheses of the fluctuation lemma.
pub fn sample_theorem4_initial<R: Rng + ?Sized>(
    params: &ModelParams,
    s: usize,
    k: Option<usize>,
    rng: &mut R,
    max_tries: u64,
) -> Result<Theorem4Sample> {
    validate_theorem4(params, s)?;
    let (n, m, eta) = (params.n, params.m, params.eta);
    let mf = m as f64;
    let mut x = vec![0.0; n];
    for tries in 1..=max_tries {
        x.iter_mut().for_each(|v| *v = rng.random::<f64>());
        x.sort_by(f64::total_cmp);
        let alpha = (x[s - 2] - x[0]).max(x[n - 1] - x[s]);
        let beta = (x[s - 1] - x[s - 2]).min(x[s] - x[s - 1]);
        if !(alpha / mf < eta && eta < (beta - (mf - 1.0) * alpha) / mf - alpha / (mf - 1.0)) {
            continue;
        }
        let Some((k, kind)) = gamma_hit(&x, s, m, k)? else {
            continue;
        };
        let analysis = quotient_partition(&x, s, m)?;
        let lemma2 = verify_lemma2_conditions(&analysis, eta);
        if !lemma2.holds() {
            continue;
        }
        return Ok(Theorem4Sample {
            state: OpinionVector::new(x)?,
            s,
            k,
            kind,
            lemma2,
            tries,
        });
    }
    Err(sampling_failure(max_tries, 0))
}
