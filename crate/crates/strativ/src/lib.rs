//! Stratification-based instrumental-variable analysis of nonlinear causal
//! effects.
//!
//! The pipeline stratifies a sample on the counterfactual exposure,
//! summarizes each stratum with instrument associations and a weight
//! function, and fits the effect shape either parametrically (penalized
//! weighted least squares over a basis) or nonparametrically through a
//! change-point model solved by a sum-of-single-effects Bayesian
//! regression. A built-in simulation harness reproduces the reference
//! study designs at desk scale.

pub mod basis;
pub mod data;
pub mod error;
pub mod numeric;
pub mod pipeline;
pub mod qtest;
pub mod ridge;
pub mod sim;
pub mod stratify;
pub mod summary;
pub mod susie;

pub use data::{AnalysisConfig, ColumnMap, Dataset, SeOrder, Stratifier};
pub use error::{Error, Result};
