//! Cross-fitted nuisance functions with cached, clipped per-record predictions.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::BoundingSpec;
use crate::data::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::nuisance::learners::{fit_learner_clipped, FittedModel, LearnerConfig};
use crate::rng::derive_seed;

/// Anything that maps covariates to a probability.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl Predictor for FittedModel {
    fn predict(&self, x: &[f64]) -> f64 {
        FittedModel::predict(self, x)
    }
}

/// Wraps a closure, used to inject known nuisance functions.
pub struct FnPredictor(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl FnPredictor {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn shared(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> SharedPredictor {
        Arc::new(Self::new(f))
    }
}

impl Predictor for FnPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub type SharedPredictor = Arc<dyn Predictor>;

pub fn predict_clipped(model: &dyn Predictor, x: &[f64], eps: f64) -> f64 {
    clip(model.predict(x), eps)
}

pub fn clip(p: f64, eps: f64) -> f64 {
    p.max(eps).min(1.0 - eps)
}

#[derive(Clone)]
pub struct ProxyModels {
    /// `P(Y~ = 1 | D = 0, X)`.
    pub mu_tilde0: SharedPredictor,
    /// `P(Y* = Y~ | D = 1, X)`.
    pub gamma1: SharedPredictor,
}

#[derive(Clone)]
pub struct IvModels {
    pub z: i64,
    /// `E[Y D | X, Z = z]`.
    pub lambda: SharedPredictor,
    /// `P(D = 0 | X, Z = z)`.
    pub kappa: SharedPredictor,
    /// `P(Z = z | X)`.
    pub pz: SharedPredictor,
}

/// One set of nuisance predictors.
#[derive(Clone)]
pub struct NuisanceModels {
    /// `P(Y* = 1 | D = 1, X)`.
    pub mu1: SharedPredictor,
    /// `P(D = 1 | X)`.
    pub pi1: SharedPredictor,
    pub proxy: Option<ProxyModels>,
    /// One entry per instrument value, in support order.
    pub iv: Vec<IvModels>,
}

impl fmt::Debug for NuisanceModels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceModels")
            .field("proxy", &self.proxy.is_some())
            .field("iv", &self.iv.len())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyPoint {
    pub mu_tilde0: f64,
    pub gamma1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub lambda: f64,
    pub kappa: f64,
    pub pz: f64,
}

/// Nuisance values at one covariate point, clipped where required.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaPoint {
    pub mu1: f64,
    pub pi1: f64,
    pub proxy: Option<ProxyPoint>,
    pub iv: Vec<IvPoint>,
}

impl EtaPoint {
    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1
    }
}

impl NuisanceModels {
    /// Evaluates all models at `x`; propensity-type and proxy functions are clipped to [eps, 1-eps].
    pub fn eta_at(&self, x: &[f64], eps: f64) -> EtaPoint {
        EtaPoint {
            mu1: self.mu1.predict(x),
            pi1: predict_clipped(self.pi1.as_ref(), x, eps),
            proxy: self.proxy.as_ref().map(|p| ProxyPoint {
                mu_tilde0: predict_clipped(p.mu_tilde0.as_ref(), x, eps),
                gamma1: predict_clipped(p.gamma1.as_ref(), x, eps),
            }),
            iv: self
                .iv
                .iter()
                .map(|m| IvPoint {
                    lambda: m.lambda.predict(x),
                    kappa: m.kappa.predict(x),
                    pz: predict_clipped(m.pz.as_ref(), x, eps),
                })
                .collect(),
        }
    }
}

/// Which optional nuisances a bounding family needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Requirements {
    pub proxy: bool,
    pub iv: bool,
}

impl Requirements {
    pub fn union(self, other: Self) -> Self {
        Self {
            proxy: self.proxy || other.proxy,
            iv: self.iv || other.iv,
        }
    }
}

/// Per-fold nuisance models plus cached out-of-fold predictions for every record.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    eps: f64,
    folds: FoldAssignment,
    models: Vec<Arc<NuisanceModels>>,
    eta: Vec<EtaPoint>,
    z_support: Vec<i64>,
    requirements: Requirements,
}

pub fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("clip eps={eps} outside (0, 0.5)")))
    }
}

fn check_data(data: &Dataset, req: Requirements) -> Result<()> {
    if req.proxy && !data.has_proxy() {
        return Err(Error::MissingColumn("proxy outcome"));
    }
    if req.iv && (!data.has_instrument() || data.z_support().is_empty()) {
        return Err(Error::MissingColumn("instrument"));
    }
    Ok(())
}

const MU1: u64 = 1;
const PI1: u64 = 2;
const MU_TILDE0: u64 = 3;
const GAMMA1: u64 = 4;
const LAMBDA: u64 = 5;
const KAPPA: u64 = 6;
const PZ: u64 = 7;

/// Fits one set of nuisance models on the records in `train`.
pub fn fit_nuisance_models(
    data: &Dataset,
    train: &[usize],
    learner: &LearnerConfig,
    req: Requirements,
    eps: f64,
    seed: u64,
) -> Result<NuisanceModels> {
    check_eps(eps)?;
    check_data(data, req)?;
    let recs = data.records();
    let fit = |idx: &[usize], label: &dyn Fn(usize) -> f64, what: String, tag: u64| {
        if idx.is_empty() {
            return Err(Error::EmptyStratum(what));
        }
        let x: Vec<&[f64]> = idx.iter().map(|&i| recs[i].x.as_slice()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| label(i)).collect();
        let m = fit_learner_clipped(&x, &y, learner, derive_seed(seed, &[tag]), eps)?;
        Ok(Arc::new(m) as SharedPredictor)
    };
    let selected: Vec<usize> = train.iter().copied().filter(|&i| recs[i].d == 1).collect();
    let mu1 = fit(&selected, &|i| recs[i].yf(), "selected records".into(), MU1)?;
    let pi1 = fit(train, &|i| recs[i].df(), "training fold".into(), PI1)?;
    let proxy = if req.proxy {
        let unselected: Vec<usize> = train.iter().copied().filter(|&i| recs[i].d == 0).collect();
        let proxy_of = |i: usize| f64::from(recs[i].y_proxy.unwrap_or(0));
        Some(ProxyModels {
            mu_tilde0: fit(&unselected, &proxy_of, "unselected records".into(), MU_TILDE0)?,
            gamma1: fit(
                &selected,
                &|i| f64::from(recs[i].y_proxy == Some(recs[i].y)),
                "selected records".into(),
                GAMMA1,
            )?,
        })
    } else {
        None
    };
    let mut iv = Vec::new();
    if req.iv {
        for (j, &z) in data.z_support().iter().enumerate() {
            let stratum: Vec<usize> = train.iter().copied().filter(|&i| recs[i].z == Some(z)).collect();
            let tag = |t: u64| t * 1000 + j as u64;
            iv.push(IvModels {
                z,
                lambda: fit(&stratum, &|i| recs[i].yf(), format!("instrument value {z}"), tag(LAMBDA))?,
                kappa: fit(
                    &stratum,
                    &|i| 1.0 - recs[i].df(),
                    format!("instrument value {z}"),
                    tag(KAPPA),
                )?,
                pz: fit(
                    train,
                    &|i| f64::from(recs[i].z == Some(z)),
                    "training fold".into(),
                    tag(PZ),
                )?,
            });
        }
    }
    Ok(NuisanceModels {
        mu1,
        pi1,
        proxy,
        iv,
    })
}

/// Fits fold-specific models on the complement of each fold and caches out-of-fold predictions.
pub fn cross_fit_nuisances(
    data: &Dataset,
    folds: &FoldAssignment,
    learner: &LearnerConfig,
    bounding: &BoundingSpec,
    eps: f64,
) -> Result<NuisanceBundle> {
    cross_fit_with(data, folds, learner, bounding.requirements(), eps)
}

pub fn cross_fit_with(
    data: &Dataset,
    folds: &FoldAssignment,
    learner: &LearnerConfig,
    req: Requirements,
    eps: f64,
) -> Result<NuisanceBundle> {
    check_eps(eps)?;
    check_data(data, req)?;
    check_folds(data, folds)?;
    let models = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let train = folds.complement(f);
            fit_nuisance_models(data, &train, learner, req, eps, derive_seed(learner.seed, &[f as u64]))
                .map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceBundle::assemble(data, folds.clone(), models, req, eps))
}

fn check_folds(data: &Dataset, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != data.len() {
        return Err(Error::InvalidParameter(format!(
            "fold assignment covers {} records, dataset has {}",
            folds.n(),
            data.len()
        )));
    }
    Ok(())
}

impl NuisanceBundle {
    fn assemble(
        data: &Dataset,
        folds: FoldAssignment,
        models: Vec<Arc<NuisanceModels>>,
        requirements: Requirements,
        eps: f64,
    ) -> Self {
        let eta = data
            .records()
            .par_iter()
            .enumerate()
            .map(|(i, r)| models[folds.fold_of[i]].eta_at(&r.x, eps))
            .collect();
        Self {
            eps,
            folds,
            models,
            eta,
            z_support: data.z_support().to_vec(),
            requirements,
        }
    }

    /// Uses the same (typically true) nuisance functions for every fold.
    pub fn from_models(
        data: &Dataset,
        folds: &FoldAssignment,
        models: Arc<NuisanceModels>,
        eps: f64,
    ) -> Result<Self> {
        check_eps(eps)?;
        check_folds(data, folds)?;
        let req = Requirements {
            proxy: models.proxy.is_some(),
            iv: !models.iv.is_empty(),
        };
        if req.iv && models.iv.iter().map(|m| m.z).ne(data.z_support().iter().copied()) {
            return Err(Error::InvalidParameter(
                "instrument models do not match the dataset's instrument support".into(),
            ));
        }
        let all = (0..folds.k).map(|_| Arc::clone(&models)).collect();
        Ok(Self::assemble(data, folds.clone(), all, req, eps))
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn k(&self) -> usize {
        self.folds.k
    }

    /// Cached out-of-fold nuisance values for record `i`.
    pub fn eta(&self, i: usize) -> &EtaPoint {
        &self.eta[i]
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// Models used for records in fold `f` (trained without fold `f`).
    pub fn models(&self, f: usize) -> &Arc<NuisanceModels> {
        &self.models[f]
    }

    pub fn z_support(&self) -> &[i64] {
        &self.z_support
    }

    pub fn requirements(&self) -> Requirements {
        self.requirements
    }

    /// Errors unless this bundle carries what `bounding` needs.
    pub fn check_for(&self, bounding: &BoundingSpec) -> Result<()> {
        let need = bounding.requirements();
        if need.proxy && !self.requirements.proxy {
            return Err(Error::MissingColumn("proxy nuisance"));
        }
        if need.iv && !self.requirements.iv {
            return Err(Error::MissingColumn("instrument nuisance"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        let m = FnPredictor::new(|x| x[0]);
        assert_eq!(predict_clipped(&m, &[0.0], 0.01), 0.01);
        assert_eq!(predict_clipped(&m, &[0.5], 0.01), 0.5);
        assert_eq!(predict_clipped(&m, &[1.0], 0.01), 0.99);
    }

    #[test]
    fn eps_range() {
        assert!(check_eps(0.0).is_err());
        assert!(check_eps(0.5).is_err());
        assert!(check_eps(0.01).is_ok());
    }
}
