//! Statistical inference on the overall strengths of players from
//! covariate-annotated pairwise-comparison data.
//!
//! The library estimates two summaries of player strength relative to a
//! reference player: the covariate-average of pointwise projected strengths,
//! and the strengths solving the marginal estimating equations at averaged
//! win probabilities. Estimation supports covariate shift between the
//! labeled comparisons and the target population (through unlabeled target
//! covariates or a known density ratio), cross-fitted nuisance estimation,
//! influence-function-based one-step corrections with Wald intervals, and
//! reduced-pair estimation when the conditional model is taken as correct.
//!
//! The `simulation` module contains synthetic data generators and a
//! replication harness for coverage studies; the `cli` module backs the
//! `btshift` binary for batch runs over battle logs.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod nuisance;
pub mod numeric;
pub mod projection;
pub mod simulation;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use types::{
    ComparisonDataset, ComparisonRecord, EstimandKind, EstimateReport, PairwiseScheme, Regime,
    StrengthVector, WinProbVector,
};
