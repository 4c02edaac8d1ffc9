//! Depth selection by cross-fitting on folds of the pilot.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::multi::{e_optimal_objective, empirical_variance_matrix};
use crate::objective::empirical_variance;
use crate::sample::Sample;
use crate::search::{fit, mix, FitReport};
use crate::space::CovariateSpace;
use crate::tree::StratificationTree;

pub const CV_REPORT_SCHEMA: &str = "strattree.cv_report/v1";

/// One candidate depth: the tree fitted without each fold and its
/// objective on the held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvDepth {
    pub depth: usize,
    #[serde(with = "crate::serde_float")]
    pub criterion: f64,
    pub fold_trees: Vec<StratificationTree>,
    #[serde(with = "crate::serde_float::vec")]
    pub fold_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema: String,
    pub version: String,
    /// Entry `L` holds the criterion for depth `L = 0..=max_depth`.
    pub depths: Vec<CvDepth>,
    pub chosen_depth: usize,
    /// Pilot row indices in each fold.
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub config: FitConfig,
}

impl CvReport {
    pub fn criterion(&self) -> Vec<f64> {
        self.depths.iter().map(|d| d.criterion).collect()
    }
}

/// Objective of a fixed tree (its own targets) on `sample`.
pub fn holdout_objective(
    tree: &StratificationTree,
    sample: &Sample,
    config: &FitConfig,
) -> Result<f64> {
    if sample.arms() == 2 {
        empirical_variance(tree, sample, config)
    } else {
        e_optimal_objective(&empirical_variance_matrix(tree, sample, config)?)
    }
}

/// Seeded shuffle of `0..n` cut into `v` contiguous folds; earlier folds
/// take the extra rows.
pub fn fold_indices(n: usize, v: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0xcf, 0)));
    let mut folds = Vec::with_capacity(v);
    let mut start = 0;
    for f in 0..v {
        let len = n / v + usize::from(f < n % v);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

fn fold_sample(pilot: &Sample, rows: &[usize], fold: usize) -> Result<Sample> {
    let mut present = vec![false; pilot.arms()];
    for &i in rows {
        present[pilot.a(i)] = true;
    }
    if let Some(arm) = present.iter().position(|p| !p) {
        return Err(Error::FoldMissingArm {
            fold: fold + 1,
            arm,
        });
    }
    pilot.subset(rows)
}

/// Scores every depth `0..=max_depth` by cross-fitting and picks the
/// smallest minimizer. The chosen tree is not refitted.
pub fn cv_select(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    max_depth: usize,
    config: &FitConfig,
) -> Result<CvReport> {
    config.validate()?;
    pilot.check_space(space)?;
    let v = config.cv_folds;
    if v < 2 {
        return Err(Error::InvalidConfig(format!(
            "cv_folds must be at least 2, got {v}"
        )));
    }
    if pilot.n() < 2 * v {
        return Err(Error::InvalidArgument(format!(
            "pilot has {} rows, need at least {} for {v} folds",
            pilot.n(),
            2 * v
        )));
    }
    let seed = config.ea.seed;
    let folds = fold_indices(pilot.n(), v, seed);
    let held_out: Vec<Sample> = folds
        .iter()
        .enumerate()
        .map(|(f, rows)| fold_sample(pilot, rows, f))
        .collect::<Result<_>>()?;
    let training: Vec<Sample> = (0..v)
        .map(|f| {
            let rows: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, r)| r.iter().copied())
                .collect();
            fold_sample(pilot, &rows, f)
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..=max_depth)
        .flat_map(|l| (0..v).map(move |f| (l, f)))
        .collect();
    let fitted: Vec<(StratificationTree, f64)> = jobs
        .par_iter()
        .map(|&(l, f)| {
            let mut c = FitConfig {
                max_depth: l,
                ..config.clone()
            };
            c.ea.seed = mix(seed, l as u64 + 1, f as u64);
            let tree = fit(&training[f], space, &c)?.tree;
            let value = holdout_objective(&tree, &held_out[f], config)?;
            Ok((tree, value))
        })
        .collect::<Result<_>>()?;

    let mut fitted = fitted.into_iter();
    let depths: Vec<CvDepth> = (0..=max_depth)
        .map(|depth| {
            let (fold_trees, fold_values): (Vec<_>, Vec<_>) = fitted.by_ref().take(v).unzip();
            let criterion = fold_values.iter().sum::<f64>() / v as f64;
            CvDepth {
                depth,
                criterion,
                fold_trees,
                fold_values,
            }
        })
        .collect();
    let chosen_depth = depths
        .iter()
        .fold(None::<&CvDepth>, |best, d| match best {
            Some(b) if b.criterion <= d.criterion => Some(b),
            _ if d.criterion.is_nan() => best,
            _ => Some(d),
        })
        .map_or(0, |d| d.depth);
    Ok(CvReport {
        schema: CV_REPORT_SCHEMA.into(),
        version: crate::VERSION.into(),
        depths,
        chosen_depth,
        folds,
        seed,
        config: config.clone(),
    })
}

/// Cross-validated depth selection followed by a fit on the full pilot at
/// the chosen depth (same seed as a plain [`fit`] at that depth).
pub fn cv_fit(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    max_depth: usize,
    config: &FitConfig,
) -> Result<(FitReport, CvReport)> {
    let report = cv_select(pilot, space, max_depth, config)?;
    let refit = fit(
        pilot,
        space,
        &FitConfig {
            max_depth: report.chosen_depth,
            ..config.clone()
        },
    )?;
    Ok((refit, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SplitGrid;
    use rand::Rng;

    fn config(seed: u64) -> FitConfig {
        let mut c = FitConfig::default();
        c.ea.population = 40;
        c.ea.seed = seed;
        c.split_grid = SplitGrid::Explicit(vec![vec![0.25, 0.5, 0.75]]);
        c
    }

    fn pilot(m: usize, seed: u64, f: impl Fn(f64, usize, f64) -> f64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut a = Vec::new();
        let mut x = Vec::new();
        for i in 0..m {
            let xi: f64 = rng.random();
            let e: f64 = rng.random::<f64>() - 0.5;
            a.push(i % 2);
            y.push(f(xi, i % 2, e));
            x.push(vec![xi]);
        }
        Sample::new(y, a, x).unwrap()
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_indices(11, 2, 3);
        assert_eq!(folds[0].len(), 6);
        assert_eq!(folds[1].len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(folds, fold_indices(11, 2, 3));
    }

    #[test]
    fn depth_zero_only() {
        let p = pilot(40, 1, |_, a, e| a as f64 + e);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let (fitted, report) = cv_fit(&p, &space, 0, &config(1)).unwrap();
        assert_eq!(report.chosen_depth, 0);
        assert_eq!(report.depths.len(), 1);
        assert_eq!(fitted.tree.depth(), 0);
    }

    #[test]
    fn criterion_has_one_entry_per_depth() {
        let p = pilot(80, 2, |x, a, e| a as f64 * x + e);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let report = cv_select(&p, &space, 2, &config(2)).unwrap();
        assert_eq!(report.depths.len(), 3);
        for d in &report.depths {
            assert_eq!(d.fold_trees.len(), 2);
            assert!(d.fold_trees.iter().all(|t| t.depth() <= d.depth));
        }
    }

    #[test]
    fn ties_pick_the_shallowest_depth() {
        let p = pilot(60, 3, |_, a, _| a as f64);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let report = cv_select(&p, &space, 2, &config(3)).unwrap();
        let c = report.criterion();
        assert_eq!(c[0], c[1]);
        assert_eq!(report.chosen_depth, 0);
    }

    #[test]
    fn clear_heterogeneity_selects_a_split() {
        let p = pilot(400, 4, |x, a, e| {
            if x > 0.5 {
                4.0 * a as f64 + 3.0 * e
            } else {
                0.3 * e
            }
        });
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let report = cv_select(&p, &space, 2, &config(4)).unwrap();
        assert!(report.chosen_depth >= 1);
    }

    #[test]
    fn missing_arm_in_a_fold() {
        let mut y = vec![0.0; 6];
        y[0] = 1.0;
        let a = vec![1, 0, 0, 0, 0, 0];
        let x = (0..6).map(|i| vec![i as f64 / 10.0]).collect();
        let p = Sample::new(y, a, x).unwrap();
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let err = cv_select(&p, &space, 1, &config(0)).unwrap_err();
        assert!(matches!(err, Error::FoldMissingArm { .. }));
    }

    #[test]
    fn deterministic() {
        let p = pilot(100, 5, |x, a, e| a as f64 * x + e);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        assert_eq!(
            cv_select(&p, &space, 2, &config(9)).unwrap(),
            cv_select(&p, &space, 2, &config(9)).unwrap()
        );
    }
}
