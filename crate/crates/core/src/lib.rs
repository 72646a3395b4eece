//! Mean-field simulation of a driven, inhomogeneously broadened emitter
//! ensemble in a lossy cavity, with fluorescence-decay fitting and
//! disorder-averaged parameter sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod ode;
pub mod oracle;
pub mod params;
pub mod sweep;

pub use analytics::{
    cooperativities, steady_state_self_consistent, CooperativityReport, SteadyState, SurvivalHistogram,
};
pub use dynamics::{FluorescenceTrace, Model, SystemState, Trajectory};
pub use error::{Error, Result};
pub use fitting::{ExperimentalDataset, FitResult, ModelFunction};
pub use params::{DisorderRealization, IonParams, ModelParams, Tolerances};
