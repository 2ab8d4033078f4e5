//! Simulation design, replication runner and report aggregation.

pub mod dgp;
pub mod experiment;

pub use dgp::{generate_dgp, train_score, DgpConfig, InstrumentMechanism, ProxyMechanism, SimData, Truth};
pub use experiment::*;
