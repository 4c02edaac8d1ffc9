//! Monte Carlo comparison of stratification methods on a known DGP.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{DgpSpec, DgpSummary, PotentialOutcomes};
use super::trees::{infeasible_tree, make_adhoc_tree};
use crate::assign::{assign_sbr, assign_simple, sbr_counts};
use crate::config::FitConfig;
use crate::cv::cv_select;
use crate::error::{Error, Result};
use crate::estimate::{critical_value, estimate_ate, estimate_pooled, EstimateResult};
use crate::sample::Sample;
use crate::search::{fit, mix};
use crate::space::CovariateSpace;
use crate::tree::{Node, StratificationTree};

pub const STUDY_SCHEMA: &str = "strattree.study/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Adhoc,
    StratTree,
    CvTree,
    Infeasible,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Adhoc,
        Method::StratTree,
        Method::CvTree,
        Method::Infeasible,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::None => "No Stratification",
            Method::Adhoc => "Ad-Hoc",
            Method::StratTree => "Strat. Tree",
            Method::CvTree => "CV Tree",
            Method::Infeasible => "Optimal Tree",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Adhoc => "adhoc",
            Method::StratTree => "strat_tree",
            Method::CvTree => "cv_tree",
            Method::Infeasible => "infeasible",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Method::None,
            "adhoc" | "ad-hoc" => Method::Adhoc,
            "strat" | "strat_tree" => Method::StratTree,
            "cv" | "cv_tree" => Method::CvTree,
            "infeasible" | "optimal" => Method::Infeasible,
            other => return Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub pilot_n: usize,
    pub main_n: usize,
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
    /// Depth of the ad-hoc and fitted trees, and the largest depth tried
    /// by cross-validation.
    pub depth: usize,
    pub methods: Vec<Method>,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let mut fit = FitConfig::with_depth(3);
        fit.ea.population = 100;
        Self {
            pilot_n: 500,
            main_n: 4500,
            reps: 500,
            level: 0.95,
            seed: 0,
            depth: 3,
            methods: Method::ALL.to_vec(),
            fit,
        }
    }
}

/// Pooled estimate of one method in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub theta: f64,
    pub se: f64,
    pub ci: [f64; 2],
    /// Whether sparse strata had to be merged before assignment.
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    /// Percent of intervals covering the true ATE.
    pub coverage: f64,
    /// Percent change in mean interval length against no stratification.
    pub delta_length: f64,
    /// Percent of two-sided 5% tests rejecting a zero ATE.
    pub power: f64,
    /// Percent change in RMSE against no stratification.
    pub delta_rmse: f64,
    pub reps: usize,
    pub coverage_se: f64,
    pub delta_length_se: f64,
    pub power_se: f64,
    pub delta_rmse_se: f64,
    pub rmse: f64,
    pub mean_length: f64,
    /// Replications in which sparse strata were merged.
    pub collapsed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub version: String,
    pub dgp: DgpSummary,
    pub true_ate: f64,
    pub config: StudyConfig,
    pub rows: Vec<MetricsRow>,
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} | pilot {} | main {} | reps {} | seed {}",
            self.dgp.model,
            self.config.pilot_n,
            self.config.main_n,
            self.config.reps,
            self.config.seed
        )?;
        writeln!(
            f,
            "{:<20} {:>14} {:>14} {:>14} {:>14}",
            "Method", "Coverage", "%dLength", "Power", "%dRMSE"
        )?;
        for r in &self.rows {
            let cell = |v: f64, se: f64| format!("{v:.1} ({se:.1})");
            writeln!(
                f,
                "{:<20} {:>14} {:>14} {:>14} {:>14}",
                r.method.label(),
                cell(r.coverage, r.coverage_se),
                cell(r.delta_length, r.delta_length_se),
                cell(r.power, r.power_se),
                cell(r.delta_rmse, r.delta_rmse_se)
            )?;
        }
        Ok(())
    }
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: impl IntoIterator<Item = f64>) -> (f64, usize) {
    let v: Vec<f64> = values.into_iter().collect();
    (neumaier_sum(v.iter().copied()) / v.len() as f64, v.len())
}

fn sd(values: &[f64]) -> f64 {
    let (m, n) = mean(values.iter().copied());
    if n < 2 {
        return 0.0;
    }
    (neumaier_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64).sqrt()
}

/// Standard error of the ratio of paired means `mean(a) / mean(b)`.
fn ratio_se(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, n) = mean(a.iter().copied());
    let (mb, _) = mean(b.iter().copied());
    let r = ma / mb;
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - r * y).collect();
    (r, sd(&resid) / ((n as f64).sqrt() * mb))
}

/// Summarizes one method's replications against the baseline's.
pub fn aggregate(
    method: Method,
    outcomes: &[RepOutcome],
    baseline: &[RepOutcome],
    ate: f64,
) -> MetricsRow {
    let reps = outcomes.len();
    let rf = reps as f64;
    let z = critical_value(0.95);
    let share = |hits: usize| {
        let p = hits as f64 / rf;
        (100.0 * p, 100.0 * (p * (1.0 - p) / rf).sqrt())
    };
    let (coverage, coverage_se) = share(
        outcomes
            .iter()
            .filter(|o| o.ci[0] <= ate && ate <= o.ci[1])
            .count(),
    );
    let (power, power_se) = share(outcomes.iter().filter(|o| o.theta.abs() > z * o.se).count());
    let length = |o: &[RepOutcome]| o.iter().map(|o| o.ci[1] - o.ci[0]).collect::<Vec<_>>();
    let sq = |o: &[RepOutcome]| {
        o.iter()
            .map(|o| (o.theta - ate).powi(2))
            .collect::<Vec<_>>()
    };
    let (len_ratio, len_se) = ratio_se(&length(outcomes), &length(baseline));
    let (mse_ratio, mse_se) = ratio_se(&sq(outcomes), &sq(baseline));
    let rmse_ratio = mse_ratio.sqrt();
    MetricsRow {
        method,
        coverage,
        delta_length: 100.0 * (len_ratio - 1.0),
        power,
        delta_rmse: 100.0 * (rmse_ratio - 1.0),
        reps,
        coverage_se,
        delta_length_se: 100.0 * len_se,
        power_se,
        delta_rmse_se: 100.0 * mse_se / (2.0 * rmse_ratio),
        rmse: mean(sq(outcomes)).0.sqrt(),
        mean_length: mean(length(outcomes)).0,
        collapsed: outcomes.iter().filter(|o| o.collapsed).count(),
    }
}

fn path_to_label(node: &Node, label: usize, path: &mut Vec<bool>) -> bool {
    match node {
        Node::Leaf { label: l, .. } => *l == label,
        Node::Split { left, right, .. } => {
            path.push(false);
            if path_to_label(left, label, path) {
                return true;
            }
            *path.last_mut().expect("just pushed") = true;
            if path_to_label(right, label, path) {
                return true;
            }
            path.pop();
            false
        }
    }
}

/// Merges strata in which block randomization of `xs` would leave some arm
/// with fewer than `min_per_arm` units into their sibling by dropping the
/// parent cut. A sibling leaf takes the size-weighted mean of both targets.
/// Returns the tree and the number of merges.
pub fn collapse_sparse_strata<X: AsRef<[f64]>>(
    tree: &StratificationTree,
    xs: &[X],
    min_per_arm: usize,
) -> Result<(StratificationTree, usize)> {
    let mut tree = tree.clone();
    let mut merges = 0;
    loop {
        let mut sizes = vec![0usize; tree.n_leaves()];
        for x in xs {
            sizes[tree.stratum_of(x.as_ref())? - 1] += 1;
        }
        let pis = tree.leaf_pis();
        let sparse = (0..sizes.len()).find(|&k| {
            sizes[k] > 0
                && sbr_counts(sizes[k], pis[k])
                    .iter()
                    .any(|&c| c < min_per_arm)
        });
        let Some(k) = sparse else {
            return Ok((tree, merges));
        };
        let mut path = Vec::new();
        path_to_label(tree.root(), k + 1, &mut path);
        if path.is_empty() {
            return Ok((tree, merges));
        }
        let went_right = path.pop().expect("leaf below a split");
        let mut root = tree.root().clone();
        let parent = root.at_mut(&path).expect("path comes from this tree");
        let Node::Split { left, right, .. } = parent else {
            unreachable!("parent of a leaf is a split")
        };
        let mut sibling = if went_right {
            std::mem::replace(left.as_mut(), Node::leaf(vec![]))
        } else {
            std::mem::replace(right.as_mut(), Node::leaf(vec![]))
        };
        if let Node::Leaf { label, pi } = &mut sibling {
            let (ws, wk) = (sizes[*label - 1] as f64, sizes[k] as f64);
            for (p, q) in pi.iter_mut().zip(pis[k]) {
                *p = (ws * *p + wk * q) / (ws + wk);
            }
        }
        *parent = sibling;
        tree = StratificationTree::new(tree.space().clone(), tree.max_depth(), root)?;
        merges += 1;
    }
}

fn observe(draws: &PotentialOutcomes, treatments: &[usize]) -> Result<Sample> {
    let y = treatments
        .iter()
        .enumerate()
        .map(|(i, &a)| if a == 1 { draws.y1[i] } else { draws.y0[i] })
        .collect();
    Sample::from_flat(y, treatments.to_vec(), draws.x.clone(), draws.d)
}

/// Pooled estimates of every requested method (and always the
/// unstratified baseline first) in replication `rep`. All methods share the
/// pilot, the main-wave units and the assignment seed.
pub fn run_rep(
    dgp: &DgpSpec,
    space: &Arc<CovariateSpace>,
    config: &StudyConfig,
    rep: usize,
) -> Result<Vec<(Method, RepOutcome)>> {
    let seed = mix(config.seed, rep as u64, 0x517);
    let single = StratificationTree::single_leaf(space.clone(), config.depth, vec![0.5]);

    let pilot_draws = dgp.draw(config.pilot_n, mix(seed, 1, 0));
    let pilot_rows: Vec<&[f64]> = pilot_draws.x.chunks(pilot_draws.d).collect();
    let pilot_plan = assign_simple(&single, &pilot_rows, mix(seed, 2, 0))?;
    let pilot = observe(&pilot_draws, &pilot_plan.treatments)?;
    let pilot_estimate = estimate_ate(&single, &pilot, config.level)?;

    let main = dgp.draw(config.main_n, mix(seed, 3, 0));
    let main_rows: Vec<&[f64]> = main.x.chunks(main.d).collect();

    let mut fit_config = FitConfig {
        max_depth: config.depth,
        ..config.fit.clone()
    };
    fit_config.ea.seed = mix(seed, 4, 0);
    let mut fitted: Option<StratificationTree> = None;
    let strat_tree = |fitted: &mut Option<StratificationTree>| -> Result<StratificationTree> {
        if fitted.is_none() {
            *fitted = Some(fit(&pilot, space, &fit_config)?.tree);
        }
        Ok(fitted.clone().expect("just fitted"))
    };

    let mut methods = vec![Method::None];
    methods.extend(
        config
            .methods
            .iter()
            .copied()
            .filter(|m| *m != Method::None),
    );
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let tree = match method {
            Method::None => single.clone(),
            Method::Adhoc => make_adhoc_tree(space.clone(), config.depth, mix(seed, 5, 0)),
            Method::StratTree => strat_tree(&mut fitted)?,
            Method::CvTree => {
                let chosen = cv_select(&pilot, space, config.depth, &fit_config)?.chosen_depth;
                if chosen == config.depth {
                    strat_tree(&mut fitted)?
                } else {
                    fit(
                        &pilot,
                        space,
                        &FitConfig {
                            max_depth: chosen,
                            ..fit_config.clone()
                        },
                    )?
                    .tree
                }
            }
            Method::Infeasible => {
                let id = dgp.model.id().ok_or_else(|| {
                    Error::InvalidArgument("no infeasible tree for a custom model".into())
                })?;
                infeasible_tree(id)?
            }
        };
        let (tree, merges) = collapse_sparse_strata(&tree, &main_rows, 2)?;
        let plan = assign_sbr(&tree, &main_rows, mix(seed, 6, 0))?;
        let wave2 = observe(&main, &plan.treatments)?;
        let pooled: EstimateResult =
            estimate_pooled(&pilot_estimate, &estimate_ate(&tree, &wave2, config.level)?);
        out.push((
            method,
            RepOutcome {
                theta: pooled.theta,
                se: pooled.se,
                ci: pooled.ci,
                collapsed: merges > 0,
            },
        ));
    }
    Ok(out)
}

/// Runs `config.reps` replications in parallel and tabulates coverage,
/// interval length, power and RMSE for each method.
pub fn run_study(dgp: &DgpSpec, config: &StudyConfig) -> Result<StudyReport> {
    if config.reps < 1 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if config.pilot_n < 4 || config.main_n < 2 {
        return Err(Error::InvalidArgument(
            "pilot needs at least 4 units and the main wave at least 2".into(),
        ));
    }
    config.fit.validate()?;
    let space = Arc::new(dgp.space());
    let ate = dgp.true_ate();
    let reps: Vec<Vec<(Method, RepOutcome)>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_rep(dgp, &space, config, r))
        .collect::<Result<_>>()?;
    let column = |m: usize| reps.iter().map(|r| r[m].1).collect::<Vec<_>>();
    let baseline = column(0);
    let rows = (0..reps[0].len())
        .map(|m| aggregate(reps[0][m].0, &column(m), &baseline, ate))
        .collect();
    Ok(StudyReport {
        schema: STUDY_SCHEMA.into(),
        version: crate::VERSION.into(),
        dgp: dgp.summary(),
        true_ate: ate,
        config: config.clone(),
        rows,
    })
}
