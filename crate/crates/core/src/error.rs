use thiserror::Error;

/// Errors produced by the stratification-tree library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A covariate value lies outside the declared covariate space.
    #[error("covariate x{dim} = {value} is outside [{lower}, {upper}]")]
    OutOfBounds {
        /// 1-based dimension index, matching the `x1..xd` column names.
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("covariate vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid covariate space: {0}")]
    InvalidSpace(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Strata in which one treatment arm received no units.
    #[error("strata {strata:?} have an empty treatment arm")]
    EmptyArm { strata: Vec<usize> },

    #[error("subgroup {group} has no pilot observations in arm {arm}")]
    SubgroupMissingArm { group: usize, arm: usize },

    #[error("tree does not extend the subgroup tree: {0}")]
    NotAnExtension(String),

    #[error(
        "strata-fixed-effects estimator refused: assignment targets differ across strata \
         (the fixed-effects coefficient is not a consistent estimator of the ATE)"
    )]
    UnequalTargets,

    #[error("cross-validation fold {fold} has no observations in arm {arm}; use a different seed or a larger pilot")]
    FoldMissingArm { fold: usize, arm: usize },

    #[error("exhaustive search would evaluate {count} trees, budget is {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
