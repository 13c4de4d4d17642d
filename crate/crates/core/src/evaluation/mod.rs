//! Agreement statistics between model runs, human raters and a reference standard.

mod distribution;
mod eigen;
mod icc;
mod metrics;
mod pca;

use thiserror::Error;

use crate::domain::DomainError;

pub use distribution::{
    level_differences, level_differences_from_pairs, quantile_linear, rating_distribution,
    round_half_up_level, LevelDifferenceStats, LevelStats,
};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use icc::{
    best_expert_combination, icc, icc_from_grid, mean_squares, spearman_brown, BestCombination,
    CombinationIcc, IccResult, IccVariant, MeanSquares,
};
pub use metrics::{
    assessor_metrics, consensus, flag_outliers, ground_truth_reference, group_label, mae, mse,
    pearson, pooled_group_metrics, AssessorMetrics, GroupMetrics, PairedSeries, ReferenceSeries,
    ReferenceStandard, Side, DEFAULT_OUTLIER_THRESHOLD,
};
pub use pca::{pca_assessors, pca_observations, PcaOptions, PcaProjection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("paired series must be non-empty and of equal length (got {predicted} and {reference})")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("{0} series has zero variance")]
    ZeroVariance(Side),
    #[error("matrix has missing cells; restrict to complete cases first")]
    IncompleteMatrix,
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),
    #[error("Spearman-Brown pole: 1 + (k-1)*single <= 0")]
    Pole,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no expert combination produced a valid ICC")]
    NoValidCombination,
    #[error(transparent)]
    Domain(#[from] DomainError),
}
