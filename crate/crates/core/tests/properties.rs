use clique_dynamics::detect::{detect_convergence, limit_pattern, Verdict};
use clique_dynamics::dynamics::{
    global_mean_step, sample_cliques, simulate, step, CliqueDraw, CliquePolicy, ModelParams, OpinionVector,
    Recording,
};
use clique_dynamics::initial::{
    classify_region, gamma_intervals, membership_b1b2, sample_e_k0, RegionLabel,
};
use clique_dynamics::montecarlo::wilson_interval;
use clique_dynamics::order::{
    admissible_tube_count, k_s_formula, order_stat_density, quotient_partition, SelectionTube,
};
use clique_dynamics::rng::RngSpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (2usize..12)
        .prop_flat_map(|n| (Just(n), 1usize..=n, 0.01f64..1.0, 0.01f64..0.6, any::<bool>()))
        .prop_filter_map("excluding self needs m < n", |(n, m, delta, eta, exclude)| {
            let p = ModelParams::new(n, m, delta, eta).ok()?;
            if exclude {
                if m == n {
                    return None;
                }
                p.with_policy(CliquePolicy::UniformExcludingSelf).ok()
            } else {
                Some(p)
            }
        })
}

fn state(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

fn distinct_sorted(n: usize) -> impl Strategy<Value = Vec<f64>> {
    state(n).prop_filter_map("distinct values", |mut v| {
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[0] < w[1]).then_some(v)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn states_stay_in_initial_hull((p, x0, seed) in params_strategy().prop_flat_map(|p| (Just(p), state(p.n), any::<u64>()))) {
        let lo = x0.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x0 = OpinionVector::new(x0).unwrap();
        let traj = simulate(&p, &x0, 200, &mut RngSpec::new(seed).trial(0), Recording::Full).unwrap();
        for v in traj.states().unwrap() {
            prop_assert!(lo <= *v && *v <= hi);
        }
    }

    #[test]
    fn clique_draws_are_valid((p, t, seed) in (params_strategy(), any::<u64>(), any::<u64>())) {
        let draw = sample_cliques(&p, t, &mut RngSpec::new(seed).trial(1)).unwrap();
        for (i, set) in draw.sets().enumerate() {
            prop_assert_eq!(set.len(), p.m);
            prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(set.iter().all(|&j| j < p.n));
            if p.clique_policy == CliquePolicy::UniformExcludingSelf {
                prop_assert!(!set.contains(&i));
            }
        }
        let again = sample_cliques(&p, t, &mut RngSpec::new(seed).trial(1)).unwrap();
        prop_assert_eq!(draw, again);
    }

    #[test]
    fn nodes_outside_confidence_keep_their_bits((p, x, seed) in params_strategy().prop_flat_map(|p| (Just(p), state(p.n), any::<u64>()))) {
        let x = OpinionVector::new(x).unwrap();
        let draw = sample_cliques(&p, 0, &mut RngSpec::new(seed).trial(0)).unwrap();
        let next = step(&x, &draw, &p).unwrap();
        for (i, set) in draw.sets().enumerate() {
            let y = set.iter().map(|&j| x.values[j]).sum::<f64>() / p.m as f64;
            if (x.values[i] - y).abs() > p.eta + 1e-12 {
                prop_assert_eq!(next.values[i].to_bits(), x.values[i].to_bits());
            }
            if (x.values[i] - y).abs() < p.eta - 1e-12 {
                let expect = (1.0 - p.delta) * x.values[i] + p.delta * y;
                prop_assert!((next.values[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_step_matches_full_clique((n, x, delta, eta) in (2usize..10).prop_flat_map(|n| (Just(n), state(n), 0.01f64..1.0, 0.01f64..0.6))) {
        let p = ModelParams::new(n, n, delta, eta).unwrap();
        let x = OpinionVector::new(x).unwrap();
        let a = global_mean_step(&x, &p).unwrap();
        let b = step(&x, &CliqueDraw::full(n, 0), &p).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tail_amplitude_grows_with_window((p, x0, seed) in params_strategy().prop_flat_map(|p| (Just(p), state(p.n), any::<u64>()))) {
        let x0 = OpinionVector::new(x0).unwrap();
        let traj = simulate(&p, &x0, 400, &mut RngSpec::new(seed).trial(0), Recording::Full).unwrap();
        let small = detect_convergence(&traj, 1e-6, 50).unwrap();
        let large = detect_convergence(&traj, 1e-6, 200).unwrap();
        for (a, b) in small.amplitudes.iter().zip(&large.amplitudes) {
            prop_assert!(a <= b);
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn verdicts_are_exclusive(limits in prop::collection::vec(0.0f64..1.0, 2..10), tol in 1e-9f64..1e-2) {
        let v = limit_pattern(&limits, tol);
        let spread = limits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - limits.iter().cloned().fold(f64::INFINITY, f64::min);
        match v {
            Verdict::Consensus => prop_assert!(spread < tol),
            Verdict::Disagreement => {
                for i in 0..limits.len() {
                    for j in i + 1..limits.len() {
                        prop_assert!((limits[i] - limits[j]).abs() > tol);
                    }
                }
            }
            Verdict::PartialAgreement => prop_assert!(spread >= tol),
            _ => prop_assert!(false),
        }
    }

    #[test]
    fn quotient_classes_partition_every_average(
        (n, m, s, x) in (4usize..9)
            .prop_flat_map(|n| (Just(n), (n / 2 + 1)..=n))
            .prop_filter("pivot range nonempty", |(n, m)| (n - m + 1).max(2) < *m)
            .prop_flat_map(|(n, m)| (Just(n), Just(m), (n - m + 1).max(2)..m, distinct_sorted(n)))
    ) {
        let a = quotient_partition(&x, s, m).unwrap();
        let total = a.averages.sorted_averages.len();
        let mut seen = vec![false; total];
        for c in &a.classes {
            prop_assert_eq!(c.tube.size(), m);
            prop_assert!(c.tube.k2 <= 1);
            prop_assert!(c.diameter >= 0.0);
            for &i in &c.members {
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(a.tube_of[i], c.tube);
            }
        }
        prop_assert!(seen.iter().all(|&b| b));
        prop_assert_eq!(a.realized_classes(), admissible_tube_count(n, m, s));
        prop_assert!(a.realized_classes() <= k_s_formula(n, m, s));
    }

    #[test]
    fn gamma_intervals_contain_their_classes(
        (_n, m, s, x) in (4usize..9)
            .prop_flat_map(|n| (Just(n), (n / 2 + 1)..=n))
            .prop_filter("pivot range nonempty", |(n, m)| (n - m + 1).max(2) < *m)
            .prop_flat_map(|(n, m)| (Just(n), Just(m), (n - m + 1).max(2)..m, distinct_sorted(n)))
    ) {
        let a = quotient_partition(&x, s, m).unwrap();
        for k in 1..=s {
            let g = gamma_intervals(&x, s, k, m).unwrap();
            prop_assert!(g.lower1 <= g.upper1 && g.lower0 <= g.upper0);
            let slack = 1e-12;
            if let Some(c) = a.class_with_tube(SelectionTube { k1: k - 1, k2: 1, k3: m - k }) {
                prop_assert!(g.lower1 - slack <= c.lower && c.upper <= g.upper1 + slack);
            }
            if let Some(c) = a.class_with_tube(SelectionTube { k1: k, k2: 0, k3: m - k }) {
                prop_assert!(g.lower0 - slack <= c.lower && c.upper <= g.upper0 + slack);
            }
        }
    }

    #[test]
    fn group_constant_states_collapse_each_class(a in 0.0f64..0.3, b in 0.4f64..0.6, c in 0.7f64..1.0) {
        let x = [a, a, b, c, c, c];
        let q = quotient_partition(&x, 3, 4).unwrap();
        for class in &q.classes {
            prop_assert_eq!(class.diameter, 0.0);
        }
    }

    #[test]
    fn region_label_agrees_with_literal_inequalities(x in state(6), eta in 0.02f64..0.4) {
        let class = classify_region(&x, eta);
        let y = class.arrange(&x);
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let d: Vec<f64> = y.iter().map(|v| (v - mean).abs()).collect();
        // mean_of clamps to the hull; the re-evaluation tolerates rounding
        let eps = 1e-12;
        match class.label {
            RegionLabel::C1 => prop_assert!(d.iter().all(|&v| v > eta - eps)),
            RegionLabel::C2 => prop_assert!(d.iter().all(|&v| v <= eta + eps)),
            RegionLabel::A { k } => {
                let s: f64 = d[..k].iter().sum();
                prop_assert!(d[..k].iter().all(|&v| v <= eta + eps));
                prop_assert!(d[k..].iter().all(|&v| v >= eta + s / (n - k) as f64 - eps));
            }
            RegionLabel::B { k, l } => {
                let s: f64 = d[..k].iter().sum();
                let thr = eta + s / (n - k) as f64;
                prop_assert!(d[..k].iter().all(|&v| v <= eta + eps));
                prop_assert!(d[k..k + l].iter().all(|&v| v > eta - eps && v < thr + eps));
                prop_assert!(d[k + l..].iter().all(|&v| v >= thr - eps));
            }
            RegionLabel::Unclassified => prop_assert!(false),
        }
    }

    #[test]
    fn b1b2_matches_cleared_denominators(
        y in prop::array::uniform5(0.0f64..0.5),
        m in 4usize..8,
        eta in 0.001f64..0.05,
        k in 1usize..4,
    ) {
        let (b1, b2) = membership_b1b2(&y, m, eta, k).unwrap();
        let (mf, kf) = (m as f64, k as f64);
        let spread = y[1].max(y[4]);
        // multiply every inequality through by its positive denominator
        let common = spread < mf * eta
            && (mf - 1.0) * y[2].min(y[3]) > (mf * mf - mf + 1.0) * spread + (mf - 1.0) * mf * eta;
        let lit1 = common
            && (mf - kf) * y[3] < (kf - 1.0) * (y[1] + y[2])
            && (kf - 1.0) * y[2] < (mf - kf) * (y[3] + y[4]);
        let lit2 = common
            && (mf - kf) * y[3] < kf * (y[1] + y[2])
            && kf * y[2] < (mf - kf) * (y[3] + y[4]);
        // the two forms may disagree only on rounding boundaries
        let near = |a: f64, b: f64| (a - b).abs() < 1e-9;
        if b1 != lit1 || b2 != lit2 {
            prop_assert!(near(spread, mf * eta)
                || near((mf - 1.0) * y[2].min(y[3]), (mf * mf - mf + 1.0) * spread + (mf - 1.0) * mf * eta)
                || near((mf - kf) * y[3], (kf - 1.0) * (y[1] + y[2]))
                || near((mf - kf) * y[3], kf * (y[1] + y[2]))
                || near(kf * y[2], (mf - kf) * (y[3] + y[4]))
                || near((kf - 1.0) * y[2], (mf - kf) * (y[3] + y[4])));
        }
    }

    #[test]
    fn e_k0_samples_are_members(seed in any::<u64>(), beta in 0.001f64..0.139) {
        let p = ModelParams::new(9, 6, 0.5, 0.14).unwrap();
        let x = sample_e_k0(&p, 5, beta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().values;
        prop_assert!(x[..4].iter().all(|&v| v == 0.0));
        prop_assert!(x[5..].iter().all(|&v| v == 1.0));
        prop_assert!(0.5 - beta < x[4] && x[4] < 0.5 + beta);
    }

    #[test]
    fn density_is_nonnegative_and_vanishes_off_simplex(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let f = order_stat_density(&[2, 4], &[a, b], 6).unwrap();
        prop_assert!(f >= 0.0);
        if a > b {
            prop_assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn wilson_brackets_the_point(n in 1u64..5000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
        prop_assert!(0.0 <= lo && hi <= 1.0);
    }
}

#[test]
fn wilson_width_shrinks_like_root_n() {
    let (lo1, hi1) = wilson_interval(30, 100);
    let (lo2, hi2) = wilson_interval(3000, 10_000);
    let ratio = (hi1 - lo1) / (hi2 - lo2);
    assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
}
