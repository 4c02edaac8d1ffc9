//! Minimization of the empirical objective over trees of bounded depth.

mod ea;
mod exhaustive;
mod operators;

pub(crate) use ea::mix;
pub use ea::{fit, fit_with, EaState, FitReport, Termination, FIT_REPORT_SCHEMA};
pub use exhaustive::{exhaustive_search, exhaustive_search_with, tree_count, DEFAULT_BUDGET};
pub use operators::{apply, vary, Operator, SearchSpace};
