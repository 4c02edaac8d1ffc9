//! Simulation study: data-generating processes, benchmark trees and the
//! Monte Carlo harness.

mod dgp;
mod study;
mod trees;

pub use dgp::{CustomModel, DgpSpec, DgpSummary, Model, PotentialOutcomes};
pub use study::{
    aggregate, collapse_sparse_strata, neumaier_sum, run_rep, run_study, Method, MetricsRow,
    RepOutcome, StudyConfig, StudyReport, STUDY_SCHEMA,
};
pub use trees::{infeasible_tree, make_adhoc_tree};
