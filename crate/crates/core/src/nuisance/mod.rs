//! Nuisance learners and cross-fitting.

pub mod bundle;
pub mod learners;

pub use bundle::{
    clip, cross_fit_nuisances, cross_fit_with, fit_nuisance_models, predict_clipped, EtaPoint,
    FnPredictor, IvModels, IvPoint, NuisanceBundle, NuisanceModels, Predictor, ProxyModels,
    ProxyPoint, Requirements, SharedPredictor,
};
pub use learners::{fit_learner, FittedModel, LearnerConfig, LearnerFamily};
