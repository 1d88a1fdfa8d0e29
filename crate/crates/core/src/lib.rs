//! Numerical laboratory for mixtures of transformer experts trained on a
//! synthetic N-class mixture task.
//!
//! The crate builds the orthonormal signal dictionary and data corpus,
//! defines the routed model and its closed-form gradients, trains it on a
//! three-stage schedule alongside two baselines, and measures the resulting
//! specialization, attention concentration and convergence rate.

pub mod artifact;
pub mod baselines;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod loss_grad;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod rng;
mod serde_arrays;
pub mod signal_space;
pub mod trainer;

pub use artifact::RunArtifact;
pub use baselines::{MoeFfnParams, MultiHeadParams};
pub use config::ExperimentConfig;
pub use datagen::{Corpus, Sample};
pub use error::{Error, Result};
pub use loss_grad::{Evaluation, ForwardKind};
pub use metrics::{RateFit, SpecializationReport};
pub use model::{ExpertParams, GatingParams, ModelState, RoutingOutcome};
pub use signal_space::SignalDictionary;
pub use trainer::{Stage, StageSchedule, TrainRecord, Trajectory};
