//! Bounds on the predictive performance of risk scores when outcomes are only
//! observed for selected records, under user-specified limits on unobserved
//! confounding.
//!
//! The usual pipeline is: validate a [`Dataset`], cross-fit a
//! [`NuisanceBundle`], then call one of the estimators in [`overall`] or
//! [`positive`] with a [`PerformanceSpec`] and a [`BoundingSpec`].

pub mod bounds;
pub mod data;
pub mod decisions;
pub mod error;
pub mod lfp;
pub mod mu_learner;
pub mod nuisance;
pub mod overall;
pub mod positive;
pub mod rng;
pub mod simulation;

pub use bounds::BoundingSpec;
pub use data::{
    beta_terms, split_folds, validate_dataset, Dataset, EstimandClass, FoldAssignment,
    PerformanceSpec, RawRecord, Record, Score,
};
pub use error::{Error, Result};
pub use nuisance::{cross_fit_nuisances, LearnerConfig, NuisanceBundle};
pub use overall::BoundsEstimate;
