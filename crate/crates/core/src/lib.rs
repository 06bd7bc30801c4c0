//! Correntropy-weighted value decomposition for cooperative multi-agent
//! Q-learning.
//!
//! Per-agent Q networks are combined by a mixer into a joint value that is
//! trained with a one-edged Gaussian-kernel weighted TD loss. A separate
//! joint action-value network supplies the bootstrap target. Optimistic
//! weighting and plain squared loss are available as baselines.

pub mod bounds;
pub mod config;
pub mod decomposition;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod report;
pub mod training;

pub use config::TrainingConfig;
pub use error::{Error, Result};
