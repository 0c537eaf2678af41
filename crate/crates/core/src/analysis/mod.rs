//! Study statistics: descriptor-space distances, nonparametric tests, and
//! convergence of refinement sessions.

mod convergence;
mod descriptor;
mod nonparametric;
mod ratings;

use thiserror::Error;

pub use convergence::{convergence_stats, ConvergenceStats, TurnSummary};
pub use descriptor::{descriptor_distance, euclidean, DescriptorRating, DESCRIPTORS};
pub use nonparametric::{
    bonferroni_alpha, fdr_correct, friedman_test, wilcoxon_signed_rank, FriedmanResult,
    WilcoxonResult, MAX_EXACT_PAIRS,
};
pub use ratings::{
    read_ratings, summarize_ratings, ConditionSummary, PairwiseComparison, RatingRow,
    RatingsSummary, TestSummary,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("rating {dimension}={value} outside 1..=10")]
    RatingRange { dimension: &'static str, value: u8 },
    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("rows must all have {expected} columns (row {row} has {got})")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
    #[error("value is not a finite number")]
    NonFinite,
    #[error("p-value {0} outside [0, 1]")]
    PValueRange(f64),
    #[error("ratings file: {0}")]
    Csv(#[from] csv::Error),
    #[error("ratings line {line}: {detail}")]
    BadRow { line: u64, detail: String },
}
