//! Two-stage pseudo-outcome regression for the conditional bounds on `P(Y* = 1 | X)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{confounding_bounds_at, eif_mu, pseudo_bound_terms, BoundingSpec};
use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::nuisance::learners::knn_mean;
use crate::nuisance::{fit_nuisance_models, LearnerConfig, NuisanceBundle, NuisanceModels};
use crate::overall::mean;

/// Second-stage linear smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmootherConfig {
    Knn { k: usize },
    /// Ridge regression on per-coordinate powers up to `degree` (1 or 2), unpenalized intercept.
    Ridge { lambda: f64, degree: usize },
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig::Ridge {
            lambda: 1.0,
            degree: 1,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmootherConfig::Knn { k } if k == 0 => {
                Err(Error::InvalidParameter("smoother k must be positive".into()))
            }
            SmootherConfig::Ridge { lambda, degree } if !(lambda >= 0.0) || !(1..=2).contains(&degree) => {
                Err(Error::InvalidParameter(format!(
                    "ridge needs lambda >= 0 and degree 1 or 2 (got {lambda}, {degree})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Fitted second-stage regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Knn {
        dim: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        k: usize,
    },
    Ridge {
        degree: usize,
        mean: Vec<f64>,
        scale: Vec<f64>,
        coef: Vec<f64>,
        intercept: f64,
    },
}

fn features(x: &[f64], degree: usize) -> Vec<f64> {
    let mut f = x.to_vec();
    if degree == 2 {
        f.extend(x.iter().map(|v| v * v));
    }
    f
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::Knn { dim, x: tx, y, k } => knn_mean(*dim, tx, y, *k, x),
            Regressor::Ridge {
                degree,
                mean,
                scale,
                coef,
                intercept,
            } => {
                let f = features(x, *degree);
                intercept
                    + f.iter()
                        .zip(mean.iter().zip(scale))
                        .zip(coef)
                        .map(|((v, (m, s)), c)| c * (v - m) / s)
                        .sum::<f64>()
            }
        }
    }
}

pub fn fit_regressor(x: &[&[f64]], y: &[f64], cfg: &SmootherConfig) -> Result<Regressor> {
    cfg.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Empty("regression sample"));
    }
    match *cfg {
        SmootherConfig::Knn { k } => Ok(Regressor::Knn {
            dim: x[0].len(),
            x: x.iter().flat_map(|r| r.iter().copied()).collect(),
            y: y.to_vec(),
            k,
        }),
        SmootherConfig::Ridge { lambda, degree } => fit_ridge(x, y, lambda, degree),
    }
}

fn fit_ridge(x: &[&[f64]], y: &[f64], lambda: f64, degree: usize) -> Result<Regressor> {
    let n = x.len();
    let f: Vec<Vec<f64>> = x.iter().map(|r| features(r, degree)).collect();
    let p = f[0].len();
    let mut mu = vec![0.0; p];
    for r in &f {
        for j in 0..p {
            mu[j] += r[j] / n as f64;
        }
    }
    let mut sd = vec![0.0; p];
    for r in &f {
        for j in 0..p {
            sd[j] += (r[j] - mu[j]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = sd.iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    if sd.iter().all(|v| v.sqrt() <= 1e-12) {
        return Err(Error::DegenerateDesign("all covariates are constant".into()));
    }
    let ybar = mean(y);
    let z = DMatrix::from_fn(n, p, |i, j| (f[i][j] - mu[j]) / scale[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let zt = z.transpose();
    let a = &zt * &z + DMatrix::<f64>::identity(p, p) * lambda;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("ridge system is singular".into()))?;
    let coef = chol.solve(&(zt * yc));
    Ok(Regressor::Ridge {
        degree,
        mean: mu,
        scale,
        coef: coef.as_slice().to_vec(),
        intercept: ybar,
    })
}

/// Pseudo-outcomes for the lower and upper bound functions at one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PseudoOutcomePair {
    pub lo: f64,
    pub hi: f64,
}

/// Pseudo-outcomes for records `idx`, using the bundle's out-of-fold nuisances.
pub fn build_pseudo_outcomes(
    data: &Dataset,
    idx: &[usize],
    bundle: &NuisanceBundle,
    bounding: &BoundingSpec,
) -> Result<Vec<PseudoOutcomePair>> {
    bounding.validate(data.z_support())?;
    bundle.check_for(bounding)?;
    idx.iter()
        .map(|&i| {
            let r = &data.records()[i];
            let eta = bundle.eta(i);
            let fm = eif_mu(r, eta);
            let (l, u) = pseudo_bound_terms(r, eta, bounding, bundle.z_support())?;
            Ok(PseudoOutcomePair {
                lo: fm + l,
                hi: fm + u,
            })
        })
        .collect()
}

/// Fitted bound functions. Predictions average the members fitted on each estimation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRegressors {
    pub dim: usize,
    pub smoother: SmootherConfig,
    pub lo: Vec<Regressor>,
    pub hi: Vec<Regressor>,
    #[serde(default)]
    pub clip: bool,
}

impl BoundRegressors {
    fn avg(&self, m: &[Regressor], x: &[f64]) -> f64 {
        let v = m.iter().map(|r| r.predict(x)).sum::<f64>() / m.len() as f64;
        if self.clip {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    pub fn predict_lo(&self, x: &[f64]) -> f64 {
        self.avg(&self.lo, x)
    }

    pub fn predict_hi(&self, x: &[f64]) -> f64 {
        self.avg(&self.hi, x)
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }
}

/// Whether each half serves once as the estimation fold, or only the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Swap,
    Single,
}

/// Regresses pseudo-outcomes on covariates. `bundle` must be cross-fitted with two folds.
pub fn fit_bound_regressors(
    data: &Dataset,
    bundle: &NuisanceBundle,
    bounding: &BoundingSpec,
    smoother: &SmootherConfig,
    mode: SplitMode,
) -> Result<BoundRegressors> {
    if bundle.k() != 2 {
        return Err(Error::InvalidParameter(format!(
            "bound learner uses two folds, bundle has {}",
            bundle.k()
        )));
    }
    let est_folds: &[usize] = match mode {
        SplitMode::Swap => &[1, 0],
        SplitMode::Single => &[1],
    };
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for &f in est_folds {
        let idx = bundle.folds().members(f);
        let ps = build_pseudo_outcomes(data, &idx, bundle, bounding)?;
        let x: Vec<&[f64]> = idx.iter().map(|&i| data.records()[i].x.as_slice()).collect();
        let yl: Vec<f64> = ps.iter().map(|p| p.lo).collect();
        let yh: Vec<f64> = ps.iter().map(|p| p.hi).collect();
        lo.push(fit_regressor(&x, &yl, smoother)?);
        hi.push(fit_regressor(&x, &yh, smoother)?);
    }
    Ok(BoundRegressors {
        dim: data.dim(),
        smoother: smoother.clone(),
        lo,
        hi,
        clip: false,
    })
}

/// Same procedure with known nuisance functions injected in place of fitted ones.
pub fn oracle_fit(
    data: &Dataset,
    folds: &FoldAssignment,
    truth: Arc<NuisanceModels>,
    bounding: &BoundingSpec,
    smoother: &SmootherConfig,
    mode: SplitMode,
    eps: f64,
) -> Result<BoundRegressors> {
    let bundle = NuisanceBundle::from_models(data, folds, truth, eps)?;
    fit_bound_regressors(data, &bundle, bounding, smoother, mode)
}

/// Baseline without debiasing: nuisances fit on all records, plug-in bounds regressed
/// on covariates with the same smoother.
pub fn plugin_fit(
    data: &Dataset,
    learner: &LearnerConfig,
    bounding: &BoundingSpec,
    smoother: &SmootherConfig,
    eps: f64,
) -> Result<BoundRegressors> {
    bounding.validate(data.z_support())?;
    let all: Vec<usize> = (0..data.len()).collect();
    let models = fit_nuisance_models(data, &all, learner, bounding.requirements(), eps, learner.seed)?;
    let mut yl = Vec::with_capacity(data.len());
    let mut yh = Vec::with_capacity(data.len());
    for r in data.records() {
        let eta = models.eta_at(&r.x, eps);
        let (dl, dh) = confounding_bounds_at(&eta, bounding, data.z_support())?;
        yl.push(eta.mu1 + eta.pi0() * dl);
        yh.push(eta.mu1 + eta.pi0() * dh);
    }
    let x: Vec<&[f64]> = data.records().iter().map(|r| r.x.as_slice()).collect();
    Ok(BoundRegressors {
        dim: data.dim(),
        smoother: smoother.clone(),
        lo: vec![fit_regressor(&x, &yl, smoother)?],
        hi: vec![fit_regressor(&x, &yh, smoother)?],
        clip: false,
    })
}

/// Mean squared deviation of `pred` from `truth` over `eval`.
pub fn imse(pred: impl Fn(&[f64]) -> f64, truth: impl Fn(&[f64]) -> f64, eval: &[Vec<f64>]) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation sample"));
    }
    let sq: Vec<f64> = eval.iter().map(|x| (pred(x) - truth(x)).powi(2)).collect();
    Ok(mean(&sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec<f64>> {
        (0..30).map(|i| vec![i as f64 / 10.0, (i % 7) as f64]).collect()
    }

    #[test]
    fn smoothers_reproduce_constants() {
        let x = grid();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y = vec![0.37; x.len()];
        for cfg in [
            SmootherConfig::Knn { k: 5 },
            SmootherConfig::Ridge { lambda: 1.0, degree: 1 },
            SmootherConfig::Ridge { lambda: 0.0, degree: 2 },
        ] {
            let m = fit_regressor(&xr, &y, &cfg).unwrap();
            for xi in &xr {
                assert!((m.predict(xi) - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ridge_recovers_linear_function() {
        let x = grid();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = x.iter().map(|r| 0.5 + 2.0 * r[0] - r[1]).collect();
        let m = fit_regressor(&xr, &y, &SmootherConfig::Ridge { lambda: 0.0, degree: 1 }).unwrap();
        assert!((m.predict(&[1.0, 1.0]) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn constant_covariates_are_degenerate() {
        let x = vec![vec![1.0, 2.0]; 10];
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = fit_regressor(&xr, &y, &SmootherConfig::Ridge { lambda: 1.0, degree: 2 }).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign(_)));
    }

    #[test]
    fn imse_examples() {
        let eval = grid();
        let t = |x: &[f64]| x[0] * 0.1;
        assert_eq!(imse(t, t, &eval).unwrap(), 0.0);
        let v = imse(|x: &[f64]| t(x) + 0.1, t, &eval).unwrap();
        assert!((v - 0.01).abs() < 1e-15);
        assert!(imse(t, t, &[]).is_err());
    }

    #[test]
    fn regressor_json_round_trip() {
        let x = grid();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let m = fit_regressor(&xr, &y, &SmootherConfig::Ridge { lambda: 0.5, degree: 2 }).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: Regressor = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }
}
