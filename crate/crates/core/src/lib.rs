//! Two-wave adaptive randomization with stratification trees.
//!
//! A pilot wave is used to fit a tree partition of the covariate space and
//! per-stratum treatment shares that minimize the asymptotic variance of the
//! stratified difference-in-means estimator. The second wave is then
//! randomized within the fitted strata and analysed with a consistent
//! variance estimator.

pub mod assign;
pub mod config;
pub mod cv;
pub mod error;
pub mod estimate;
pub mod multi;
pub mod objective;
pub mod sample;
pub mod search;
mod serde_float;
pub mod sim;
pub mod space;
pub mod tree;

pub use assign::{assign_sbr, assign_simple, AssignmentPlan, Procedure};
pub use config::{EaConfig, FitConfig, SplitGrid};
pub use cv::{cv_fit, cv_select, CvReport};
pub use error::{Error, Result};
pub use estimate::{
    estimate_ate, estimate_ate_sfe, estimate_pooled, estimate_subgroups, fit_subgroup_tree,
    subgroup_membership, EstimateResult, StratumEstimate, SubgroupEstimates,
};
pub use multi::{
    e_optimal_objective, empirical_variance_matrix, estimate_ate_multi, EOptimalObjective,
    MultiEstimate, VarianceMatrix,
};
pub use objective::{
    empirical_variance, neyman_allocation, optimize_leaf_proportions, population_variance,
    StratumMoments, TreeObjective, VarianceObjective,
};
pub use sample::Sample;
pub use search::{exhaustive_search, fit, fit_with, vary, FitReport, Termination};
pub use space::{CovariateSpace, DimensionKind, DimensionSpec};
pub use tree::{tree_distance, tree_distance_on, Cell, Cut, Node, StratificationTree};

/// Library version embedded in every serialized artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
