//! Discrete-window simulator for continuous retraining of camera models with
//! shared group models, GPU time-sharing, and GPU-proportional bandwidth.

pub mod accuracy;
pub mod allocator;
pub mod error;
pub mod grouping;
pub mod metrics;
pub mod netsim;
pub mod scenario;
pub mod sim;
pub mod transmission;

pub use error::{Result, SimError};
