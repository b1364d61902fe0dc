//! Trace-driven simulation of ML inference serving on VMs and serverless
//! functions: cost, SLO violations and over-provisioning for a set of
//! resource-procurement schemes.

pub mod catalog;
pub mod experiment;
pub mod cloud;
pub mod error;
pub mod money;
pub mod policy;
pub mod sim;
pub mod workload;

pub use catalog::{Catalog, ConstraintSet, ModelChoice, ModelProfile};
pub use cloud::RateCard;
pub use error::{Error, Result};
pub use money::Money;
pub use policy::{PolicyKind, PolicySpec};
pub use workload::{ArrivalTrace, MixSpec, QuerySpec, SloClass};
pub use experiment::{compare, run_experiment, ComparisonTable, Experiment, ExperimentConfig};
pub use sim::{over_provision_ratio, replay_verify, MetricsReport};
