//! Configuration shared by the tree search, cross-validation and CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::space::{CovariateSpace, DimensionKind};

/// Candidate thresholds for cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGrid {
    /// Midpoints between consecutive distinct pilot values on continuous
    /// dimensions and between consecutive support points on discrete ones.
    Midpoints,
    /// Fixed per-dimension thresholds (0-based dimension order).
    Explicit(Vec<Vec<f64>>),
}

impl SplitGrid {
    /// Sorted, deduplicated thresholds strictly inside each dimension's bounds.
    pub fn candidates(&self, pilot: &Sample, space: &CovariateSpace) -> Result<Vec<Vec<f64>>> {
        let d = space.dim();
        let raw: Vec<Vec<f64>> = match self {
            SplitGrid::Midpoints => (0..d)
                .map(|j| {
                    let spec = &space.dims()[j];
                    match spec.kind {
                        DimensionKind::Discrete => {
                            let support = spec.support.clone().unwrap_or_default();
                            support.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                        }
                        DimensionKind::Continuous => {
                            let mut vals: Vec<f64> =
                                (0..pilot.n()).map(|i| pilot.x(i)[j]).collect();
                            vals.sort_by(f64::total_cmp);
                            vals.dedup();
                            vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                        }
                    }
                })
                .collect(),
            SplitGrid::Explicit(grid) => {
                if grid.len() != d {
                    return Err(Error::InvalidConfig(format!(
                        "explicit grid has {} dimensions, space has {d}",
                        grid.len()
                    )));
                }
                grid.clone()
            }
        };
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(j, mut g)| {
                let (lo, hi) = space.bounds(j);
                g.retain(|t| *t > lo && *t < hi);
                g.sort_by(f64::total_cmp);
                g.dedup();
                g
            })
            .collect())
    }
}

/// Evolutionary search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EaConfig {
    pub population: usize,
    pub max_iterations: usize,
    /// Generations the top-5% spread must stay within `tolerance`.
    pub patience: usize,
    /// Relative tolerance on the top-5% spread.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            population: 500,
            max_iterations: 2000,
            patience: 50,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_depth: usize,
    /// Assignment targets are clipped to `[nu, 1 - nu]`.
    pub nu: f64,
    /// Strata with fewer pilot rows than this in some arm score `+inf`.
    pub min_cell_per_arm: usize,
    pub ea: EaConfig,
    pub split_grid: SplitGrid,
    /// Number of folds for depth selection by cross-validation.
    pub cv_folds: usize,
    /// Overrides the pilot difference in means as the centre of the
    /// heterogeneity term of the objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity_center: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_depth: 2,
            nu: 0.1,
            min_cell_per_arm: 2,
            ea: EaConfig::default(),
            split_grid: SplitGrid::Midpoints,
            cv_folds: 2,
            heterogeneity_center: None,
        }
    }
}

impl FitConfig {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "nu must lie in (0, 0.5), got {}",
                self.nu
            )));
        }
        if self.ea.population < 2 {
            return Err(Error::InvalidConfig("population must be at least 2".into()));
        }
        if !(self.ea.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.ea.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be positive".into(),
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidConfig(
                "cross-validation needs at least 2 folds".into(),
            ));
        }
        Ok(())
    }
}
