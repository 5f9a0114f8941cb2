//! Simultaneous nonparametric pairwise comparisons for one-way layouts and
//! ANCOVA models, based on pairwise ranking of aligned observations.
//!
//! The pipeline is [`analysis::analyze`]: the reduced (no group effect) model
//! is fit by least squares, each pair of groups is ranked separately, the
//! rank-score statistics are standardized and referred to the maximum of a
//! multivariate normal or t vector whose correlation is derived from the
//! design.

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod analysis;
pub mod critical;
pub mod data;
pub mod error;
pub mod joint_dist;
pub mod pair_tests;
pub mod par;
pub mod report;
pub mod rng;
pub mod scores;
pub mod sim;

pub use analysis::{analyze, ComparisonReport, PairRow};
pub use critical::{max_quantile, Quantile, Reference, ReferenceDistribution};
pub use data::{AnalysisConfig, ComparisonFamily, Dataset, ReferenceKind, ScaleMode, Sidedness};
pub use error::{Error, ErrorCategory, Result};
pub use joint_dist::CorrelationMatrix;
pub use par::Exec;
pub use scores::ScoreFunction;
