use proptest::prelude::*;

use selbounds::lfp::{solve_fold_lfp, Direction, LfpInstance};
use selbounds::mu_learner::build_pseudo_outcomes;
use selbounds::overall::{
    estimate_overall_bounds, estimate_overall_bounds_in_group, estimate_overall_disparity_bounds, GroupProb,
};
use selbounds::positive::{
    auc_from_curve, estimate_class_bounds_in_group, estimate_negative_class_bounds,
    estimate_positive_class_bounds, positive_class_disparity_bounds, roc_bounds, RocSide,
};
use selbounds::simulation::{generate_dgp, DgpConfig, SimData};
use selbounds::{
    cross_fit_nuisances, split_folds, BoundingSpec, Dataset, FoldAssignment, LearnerConfig, NuisanceBundle, PerformanceSpec,
    Record, Score,
};

fn score() -> Score {
    Score::from_fn(|x| 1.0 / (1.0 + (-(x[0] + 0.5 * x[1])).exp()))
}

fn sim(n: usize, seed: u64, group: bool) -> SimData {
    generate_dgp(&DgpConfig {
        n,
        d: 8,
        d_pi: 4,
        d_mu: 5,
        seed,
        group,
        ..Default::default()
    })
    .unwrap()
}

fn fitted(data: &Dataset, bounding: &BoundingSpec) -> NuisanceBundle {
    let folds = split_folds(data.len(), 3, 2).unwrap();
    cross_fit_nuisances(data, &folds, &LearnerConfig::default(), bounding, 0.01).unwrap()
}

fn oracle(s: &SimData, data: &Dataset) -> NuisanceBundle {
    let folds = split_folds(data.len(), 3, 2).unwrap();
    NuisanceBundle::from_models(data, &folds, s.truth.models(), 0.01).unwrap()
}

const OVERALL: [PerformanceSpec; 4] = [
    PerformanceSpec::Mse,
    PerformanceSpec::Calibration { r1: 0.2, r2: 0.6 },
    PerformanceSpec::FailureRate { tau: 0.5 },
    PerformanceSpec::Accuracy { tau: 0.5 },
];

const CLASS: [PerformanceSpec; 2] = [
    PerformanceSpec::GeneralizedTpr,
    PerformanceSpec::ThresholdTpr { tau: 0.5 },
];

#[test]
fn unconfounded_bounds_collapse() {
    let s = sim(1500, 1, true);
    let data = &s.dataset;
    let b = BoundingSpec::Unconfounded;
    let bundle = fitted(data, &b);
    for spec in OVERALL {
        let e = estimate_overall_bounds(data, &score(), &spec, &b, &bundle).unwrap();
        assert_eq!(e.lower, e.upper, "{spec:?}");
        let e = estimate_overall_disparity_bounds(data, &score(), &spec, &b, &bundle, GroupProb::Empirical).unwrap();
        assert_eq!(e.lower, e.upper, "{spec:?}");
    }
    for spec in CLASS {
        let e = estimate_positive_class_bounds(data, &score(), &spec, &b, &bundle).unwrap();
        assert!((e.lower - e.upper).abs() < 1e-12, "{spec:?}");
        let e = positive_class_disparity_bounds(data, &score(), &spec, &b, &bundle).unwrap();
        assert!((e.lower - e.upper).abs() < 1e-12, "{spec:?}");
    }
    let e = estimate_negative_class_bounds(data, &score(), &PerformanceSpec::GeneralizedFpr, &b, &bundle).unwrap();
    assert!((e.lower - e.upper).abs() < 1e-12);
    let idx: Vec<usize> = (0..data.len()).collect();
    for p in build_pseudo_outcomes(data, &idx, &bundle, &b).unwrap() {
        assert_eq!(p.lo, p.hi);
    }
}

/// Every record twice, once in each group.
fn duplicated(data: &Dataset) -> Dataset {
    let recs: Vec<Record> = [0u8, 1]
        .iter()
        .flat_map(|&g| {
            data.records().iter().map(move |r| Record {
                g: Some(g),
                ..r.clone()
            })
        })
        .collect();
    Dataset::from_records(recs).unwrap()
}

#[test]
fn duplicated_groups_give_symmetric_disparity() {
    let s = sim(1000, 2, false);
    let dup = duplicated(&s.dataset);
    // Both copies of a record share a fold, so the per-fold programs mirror each other.
    let half = split_folds(s.dataset.len(), 3, 2).unwrap();
    let folds = FoldAssignment {
        fold_of: [half.fold_of.clone(), half.fold_of].concat(),
        ..split_folds(dup.len(), 3, 2).unwrap()
    };
    let bundle = NuisanceBundle::from_models(&dup, &folds, s.truth.models(), 0.01).unwrap();
    let b = BoundingSpec::nonparametric(2.0 / 3.0, 1.5);
    for spec in OVERALL {
        let e = estimate_overall_disparity_bounds(&dup, &score(), &spec, &b, &bundle, GroupProb::Empirical).unwrap();
        assert!((e.lower + e.upper).abs() < 1e-10, "{spec:?}: {} {}", e.lower, e.upper);
        assert!(e.lower < 0.0);
        let u = estimate_overall_disparity_bounds(
            &dup,
            &score(),
            &spec,
            &BoundingSpec::Unconfounded,
            &bundle,
            GroupProb::Empirical,
        )
        .unwrap();
        assert!(u.lower.abs() < 1e-12 && u.upper.abs() < 1e-12);
    }
    let e = positive_class_disparity_bounds(&dup, &score(), &PerformanceSpec::GeneralizedTpr, &b, &bundle).unwrap();
    assert!((e.lower + e.upper).abs() < 1e-10);
}

#[test]
fn disparity_is_difference_of_group_bounds() {
    let s = sim(1200, 3, true);
    let data = &s.dataset;
    let b = BoundingSpec::nonparametric(0.8, 1.3);
    let bundle = fitted(data, &b);
    for spec in OVERALL {
        let d = estimate_overall_disparity_bounds(data, &score(), &spec, &b, &bundle, GroupProb::Empirical).unwrap();
        let g1 = estimate_overall_bounds_in_group(data, &score(), &spec, &b, &bundle, 1).unwrap();
        let g0 = estimate_overall_bounds_in_group(data, &score(), &spec, &b, &bundle, 0).unwrap();
        assert!((d.lower - (g1.lower - g0.upper)).abs() < 1e-10, "{spec:?}");
        assert!((d.upper - (g1.upper - g0.lower)).abs() < 1e-10, "{spec:?}");
    }
    let spec = PerformanceSpec::GeneralizedTpr;
    let d = positive_class_disparity_bounds(data, &score(), &spec, &b, &bundle).unwrap();
    let g1 = estimate_class_bounds_in_group(data, &score(), &spec, &b, &bundle, 1).unwrap();
    let g0 = estimate_class_bounds_in_group(data, &score(), &spec, &b, &bundle, 0).unwrap();
    assert_eq!(d.lower, g1.lower - g0.upper);
    assert_eq!(d.upper, g1.upper - g0.lower);
}

#[test]
fn covariance_and_wald_intervals() {
    let s = sim(800, 4, false);
    let data = &s.dataset;
    let b = BoundingSpec::nonparametric(0.5, 2.0);
    let bundle = fitted(data, &b);
    let e = estimate_overall_bounds(data, &score(), &PerformanceSpec::Mse, &b, &bundle).unwrap();
    let n = e.n as f64;
    let m = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ml, mu) = (m(&e.per_obs_lower), m(&e.per_obs_upper));
    let c = |u: &[f64], mu_u: f64, v: &[f64], mu_v: f64| {
        u.iter().zip(v).map(|(a, b)| (a - mu_u) * (b - mu_v)).sum::<f64>() / n
    };
    let cov = e.cov.unwrap();
    assert!((cov[0][0] - c(&e.per_obs_lower, ml, &e.per_obs_lower, ml)).abs() < 1e-10);
    assert!((cov[1][1] - c(&e.per_obs_upper, mu, &e.per_obs_upper, mu)).abs() < 1e-10);
    assert!((cov[0][1] - c(&e.per_obs_lower, ml, &e.per_obs_upper, mu)).abs() < 1e-10);
    assert_eq!(cov[0][1], cov[1][0]);
    assert!((e.lower - ml).abs() < 1e-12 && (e.upper - mu).abs() < 1e-12);
    let (a, z) = e.ci_lower.unwrap();
    let se = (cov[0][0] / n).sqrt();
    assert!(((e.lower - a) / se - 1.959964).abs() < 1e-6);
    assert!(((z - e.lower) / se - 1.959964).abs() < 1e-6);
    let (a, z) = e.ci_upper.unwrap();
    let se = (cov[1][1] / n).sqrt();
    assert!(((z - a) / (2.0 * se) - 1.959964).abs() < 1e-6);
}

#[test]
fn constant_measure_is_exact() {
    let s = sim(500, 5, false);
    let data = &s.dataset;
    let b = BoundingSpec::WorstCase;
    let bundle = fitted(data, &b);
    let e = estimate_overall_bounds(
        data,
        &score(),
        &PerformanceSpec::CustomOverall { beta0: 0.37, beta1: 0.0 },
        &b,
        &bundle,
    )
    .unwrap();
    assert!((e.lower - 0.37).abs() < 1e-12 && (e.upper - 0.37).abs() < 1e-12);
    assert!(e.cov.unwrap().iter().flatten().all(|c| c.abs() < 1e-20));
    let p = estimate_positive_class_bounds(data, &score(), &PerformanceSpec::CustomPositive { beta0: 1.0 }, &b, &bundle)
        .unwrap();
    assert!((p.lower - 1.0).abs() < 1e-12 && (p.upper - 1.0).abs() < 1e-12);
    let q = estimate_negative_class_bounds(data, &score(), &PerformanceSpec::CustomNegative { beta0: 1.0 }, &b, &bundle)
        .unwrap();
    assert!((q.lower - 1.0).abs() < 1e-12 && (q.upper - 1.0).abs() < 1e-12);
}

#[test]
fn class_bounds_nest() {
    let s = sim(2000, 6, false);
    let data = &s.dataset;
    let bundle = oracle(&s, data);
    let g_hi = 1.15;
    // The nonparametric box sits inside the worst-case box only where gamma_hi * mu1 <= 1.
    for i in 0..data.len() {
        assert!(g_hi * bundle.eta(i).mu1 <= 1.0);
    }
    let specs = [
        BoundingSpec::WorstCase,
        BoundingSpec::nonparametric(1.0 / g_hi, g_hi),
        BoundingSpec::nonparametric(1.0 / 1.05, 1.05),
        BoundingSpec::Unconfounded,
    ];
    for spec in CLASS {
        let est: Vec<_> = specs
            .iter()
            .map(|b| estimate_positive_class_bounds(data, &score(), &spec, b, &bundle).unwrap())
            .collect();
        for w in est.windows(2) {
            assert!(w[0].lower <= w[1].lower + 1e-12 && w[1].upper <= w[0].upper + 1e-12, "{spec:?}");
        }
    }
}

#[test]
fn widths_grow_with_gamma() {
    let s = sim(1500, 7, false);
    let data = &s.dataset;
    let bundle = fitted(data, &BoundingSpec::WorstCase);
    let grid = [1.0, 1.1, 1.25, 1.5, 2.0, 3.0];
    for spec in [PerformanceSpec::Mse, PerformanceSpec::GeneralizedTpr] {
        let mut prev = (f64::INFINITY, f64::NEG_INFINITY);
        for g in grid {
            let b = BoundingSpec::nonparametric(1.0 / g, g);
            let e = if spec == PerformanceSpec::Mse {
                estimate_overall_bounds(data, &score(), &spec, &b, &bundle)
            } else {
                estimate_positive_class_bounds(data, &score(), &spec, &b, &bundle)
            }
            .unwrap();
            assert!(e.lower <= prev.0 + 1e-12 && e.upper >= prev.1 - 1e-12, "{spec:?} at {g}");
            prev = (e.lower, e.upper);
        }
    }
}

#[test]
fn roc_bands() {
    let s = sim(1500, 8, false);
    let data = &s.dataset;
    let taus: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
    let u = BoundingSpec::Unconfounded;
    let bundle = fitted(data, &BoundingSpec::WorstCase);
    let flat = roc_bounds(data, &score(), &taus, &u, &bundle).unwrap();
    for p in &flat {
        assert!((p.tpr_lo - p.tpr_hi).abs() < 1e-12 && (p.fpr_lo - p.fpr_hi).abs() < 1e-12);
    }
    assert!((auc_from_curve(&flat, RocSide::Hi) - auc_from_curve(&flat, RocSide::Lo)).abs() < 1e-12);
    let b = BoundingSpec::nonparametric(0.7, 1.4);
    let band = roc_bounds(data, &score(), &taus, &b, &bundle).unwrap();
    for w in band.windows(2) {
        assert!(w[1].tpr_hi <= w[0].tpr_hi + 1e-12 && w[1].tpr_lo <= w[0].tpr_lo + 1e-12);
        assert!(w[1].fpr_hi <= w[0].fpr_hi + 1e-12 && w[1].fpr_lo <= w[0].fpr_lo + 1e-12);
    }
    let (hi, lo) = (auc_from_curve(&band, RocSide::Hi), auc_from_curve(&band, RocSide::Lo));
    let mid = auc_from_curve(&flat, RocSide::Hi);
    assert!(lo <= mid && mid <= hi, "{lo} {mid} {hi}");
    assert!(roc_bounds(data, &score(), &[0.5, 0.2], &b, &bundle).is_err());
}

/// Optimum over all vertices of the box.
fn brute_force(inst: &LfpInstance, dir: Direction) -> f64 {
    let n = inst.len();
    let mut best = match dir {
        Direction::Max => f64::NEG_INFINITY,
        Direction::Min => f64::INFINITY,
    };
    for mask in 0u32..(1 << n) {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let t = if mask >> i & 1 == 1 { inst.hi[i] } else { inst.lo[i] };
            let v = inst.a[i] + inst.w[i] * t;
            num += inst.b[i] * v;
            den += v;
        }
        let r = num / den;
        best = match dir {
            Direction::Max => best.max(r),
            Direction::Min => best.min(r),
        };
    }
    best
}

fn instance() -> impl Strategy<Value = LfpInstance> {
    (1usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(-0.09f64..0.0, n),
            prop::collection::vec(0.0f64..0.5, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(|(a, w, lo, hi, b)| LfpInstance { a, w, lo, hi, b })
    })
}

proptest! {
    #[test]
    fn threshold_scan_matches_enumeration(inst in instance()) {
        for dir in [Direction::Max, Direction::Min] {
            let s = solve_fold_lfp(&inst, dir).unwrap();
            prop_assert!((s.value - brute_force(&inst, dir)).abs() < 1e-9);
            prop_assert!((inst.objective(&s.chosen_delta).unwrap() - s.value).abs() < 1e-9);
        }
    }

    #[test]
    fn inverted_boxes_are_swapped(inst in instance()) {
        let flipped = LfpInstance { lo: inst.hi.clone(), hi: inst.lo.clone(), ..inst.clone() };
        for dir in [Direction::Max, Direction::Min] {
            let a = solve_fold_lfp(&inst, dir).unwrap();
            let b = solve_fold_lfp(&flipped, dir).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert_eq!(b.swapped, inst.lo.iter().zip(&inst.hi).filter(|(l, h)| l < h).count());
        }
    }
}
