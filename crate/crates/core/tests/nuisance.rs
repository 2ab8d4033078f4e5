use std::sync::Arc;

use selbounds::bounds::BoundingSpec;
use selbounds::nuisance::{
    cross_fit_nuisances, cross_fit_with, fit_learner, fit_nuisance_models, predict_clipped,
    FnPredictor, LearnerConfig, NuisanceBundle, Requirements,
};
use selbounds::rng::derive_seed;
use selbounds::simulation::{generate_dgp, DgpConfig, InstrumentMechanism};
use selbounds::{split_folds, Error};

fn small(n: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        n,
        d: 6,
        d_pi: 3,
        d_mu: 4,
        seed,
        ..Default::default()
    }
}

#[test]
fn fold_models_never_see_their_fold() {
    let sim = generate_dgp(&small(400, 3)).unwrap();
    let data = &sim.dataset;
    let folds = split_folds(data.len(), 4, 9).unwrap();
    // Subsampled trees make the fit seed-dependent, so this also pins the seed path.
    let mut learner = LearnerConfig::boosted(20, 2, 0.2);
    if let selbounds::nuisance::LearnerFamily::BoostedTrees { subsample, min_leaf, .. } = &mut learner.family {
        *subsample = 0.7;
        *min_leaf = 5;
    }
    learner.seed = 17;
    let bundle = cross_fit_with(data, &folds, &learner, Requirements::default(), 0.01).unwrap();
    for k in 0..folds.k {
        let kept = folds.complement(k);
        let reduced = data.subset(&kept).unwrap();
        let all: Vec<usize> = (0..reduced.len()).collect();
        let refit = fit_nuisance_models(
            &reduced,
            &all,
            &learner,
            Requirements::default(),
            0.01,
            derive_seed(learner.seed, &[k as u64]),
        )
        .unwrap();
        for i in folds.members(k) {
            let x = &data.records()[i].x;
            let eta = refit.eta_at(x, 0.01);
            assert_eq!(bundle.eta(i).mu1.to_bits(), eta.mu1.to_bits());
            assert_eq!(bundle.eta(i).pi1.to_bits(), eta.pi1.to_bits());
        }
    }
}

#[test]
fn stored_propensities_are_clipped() {
    let sim = generate_dgp(&DgpConfig {
        instrument: Some(InstrumentMechanism::default()),
        ..small(600, 4)
    })
    .unwrap();
    let data = &sim.dataset;
    let folds = split_folds(data.len(), 3, 1).unwrap();
    let eps = 0.05;
    let bundle = cross_fit_nuisances(
        data,
        &folds,
        &LearnerConfig::knn(3),
        &BoundingSpec::IvSmoothed { alpha: 5.0 },
        eps,
    )
    .unwrap();
    for i in 0..bundle.len() {
        let e = bundle.eta(i);
        assert!(e.pi1 >= eps && e.pi1 <= 1.0 - eps);
        assert_eq!(e.iv.len(), 3);
        for p in &e.iv {
            assert!(p.pz >= eps && p.pz <= 1.0 - eps);
        }
    }
}

#[test]
fn injected_truth_is_used_verbatim() {
    let sim = generate_dgp(&small(300, 5)).unwrap();
    let folds = split_folds(300, 2, 2).unwrap();
    let bundle = NuisanceBundle::from_models(&sim.dataset, &folds, sim.truth.models(), 0.01).unwrap();
    for (i, r) in sim.dataset.records().iter().enumerate() {
        let e = bundle.eta(i);
        let a: f64 = r.x[..4].iter().sum::<f64>() / (2.0 * 2.0);
        let b: f64 = r.x[..3].iter().sum::<f64>() / (2.0 * 3f64.sqrt());
        assert_eq!(e.mu1.to_bits(), sim.truth.mu1(&r.x).to_bits());
        assert_eq!(e.pi1.to_bits(), sim.truth.pi1(&r.x).clamp(0.01, 0.99).to_bits());
        assert!((e.mu1 - 1.0 / (1.0 + (-a).exp())).abs() < 1e-14);
        assert!((e.pi1 - (1.0 / (1.0 + (-b).exp())).clamp(0.01, 0.99)).abs() < 1e-14);
    }
}

#[test]
fn proxy_family_needs_proxy_column() {
    let sim = generate_dgp(&small(200, 6)).unwrap();
    let folds = split_folds(200, 2, 2).unwrap();
    let e = cross_fit_nuisances(
        &sim.dataset,
        &folds,
        &LearnerConfig::default(),
        &BoundingSpec::ProxySimple,
        0.01,
    )
    .unwrap_err();
    assert!(matches!(e, Error::MissingColumn(_)));
    assert_eq!(e.to_string(), "proxy outcome required");
}

#[test]
fn clip_examples() {
    let p0 = FnPredictor::new(|_| 0.0);
    let ph = FnPredictor::new(|_| 0.5);
    let p1 = FnPredictor::new(|_| 1.0);
    assert_eq!(predict_clipped(&p0, &[0.0], 0.01), 0.01);
    assert_eq!(predict_clipped(&ph, &[0.0], 0.01), 0.5);
    assert_eq!(predict_clipped(&p1, &[0.0], 0.01), 0.99);
}

#[test]
fn degenerate_labels_give_clipped_constant() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
    let m = fit_learner(&xr, &[0.0; 20], &LearnerConfig::default()).unwrap();
    assert_eq!(m.predict(&[3.0]), 0.01);
}

#[test]
fn one_nn_memorizes() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 3.0]).collect();
    let y: Vec<f64> = (0..30).map(|i| f64::from(u8::from(i >= 15))).collect();
    let xr: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
    let m = fit_learner(&xr, &y, &LearnerConfig::knn(1)).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert_eq!(m.predict(xi), *yi);
    }
}

#[test]
fn requested_nuisances_per_fold() {
    let sim = generate_dgp(&small(200, 8)).unwrap();
    let folds = split_folds(200, 2, 1).unwrap();
    let b = cross_fit_nuisances(
        &sim.dataset,
        &folds,
        &LearnerConfig::default(),
        &BoundingSpec::nonparametric(0.5, 2.0),
        0.01,
    )
    .unwrap();
    assert_eq!(b.k(), 2);
    for f in 0..2 {
        assert!(b.models(f).proxy.is_none());
        assert!(b.models(f).iv.is_empty());
    }
    assert!(Arc::strong_count(b.models(0)) >= 1);
}

/// Concordance of fitted and true propensities over all pairs (ties count one half).
fn concordance(a: &[f64], b: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let mut agree = 0.0;
    let mut total = 0.0;
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            if b[j] > b[i] {
                total += 1.0;
                agree += if a[j] > a[i] {
                    1.0
                } else if a[j] == a[i] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    agree / total
}

/// AUC of the fitted propensity as a classifier of `1{pi1 > median}`.
fn auc_above_median(fitted: &[f64], truth: &[f64]) -> f64 {
    let mut sorted = truth.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[sorted.len() / 2];
    let pos: Vec<f64> = (0..truth.len()).filter(|&i| truth[i] > med).map(|i| fitted[i]).collect();
    let neg: Vec<f64> = (0..truth.len()).filter(|&i| truth[i] <= med).map(|i| fitted[i]).collect();
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn logistic_propensity_ranking() {
    let cfg = DgpConfig {
        n: 5000,
        seed: 21,
        ..Default::default()
    };
    let sim = generate_dgp(&cfg).unwrap();
    let recs = sim.dataset.records();
    let x: Vec<&[f64]> = recs.iter().map(|r| r.x.as_slice()).collect();
    let d: Vec<f64> = recs.iter().map(|r| r.df()).collect();
    let m = fit_learner(&x, &d, &LearnerConfig::default()).unwrap();
    let test = generate_dgp(&DgpConfig { seed: 22, n: 2000, ..cfg }).unwrap();
    let fitted: Vec<f64> = test.dataset.records().iter().map(|r| m.predict(&r.x)).collect();
    let truth: Vec<f64> = test.dataset.records().iter().map(|r| test.truth.pi1(&r.x)).collect();
    let auc = auc_above_median(&fitted, &truth);
    let conc = concordance(&fitted, &truth);
    eprintln!("auc vs 1{{pi1 > median}} = {auc:.4}, pairwise concordance = {conc:.4}");
    assert!(auc > 0.95, "auc {auc}");
}
