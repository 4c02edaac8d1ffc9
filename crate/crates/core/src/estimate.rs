//! Point estimates, variance estimates and confidence intervals for the
//! average treatment effect under a stratification tree.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::objective::plug_in;
use crate::sample::Sample;
use crate::search::fit;
use crate::space::{CovariateSpace, DimensionKind, DimensionSpec};
use crate::tree::{Cell, Node, StratificationTree};

pub const ESTIMATE_SCHEMA: &str = "strattree.estimate/v1";

/// Second-wave summary of one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub label: usize,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// Difference in means within the stratum.
    pub beta: f64,
    pub var1: f64,
    pub var0: f64,
}

impl StratumEstimate {
    /// This stratum's term of `V̂_Y`, scaled by its share `w = n(k)/n`.
    fn outcome_term(&self, w: f64) -> f64 {
        let nk = self.n as f64;
        w * (self.var1 * nk / self.n1 as f64 + self.var0 * nk / self.n0 as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta: f64,
    /// Standard error `sqrt(v_hat / n)`.
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    /// Estimated variance of `sqrt(n)(θ̂ − θ)`; equals `v_h + v_y`.
    pub v_hat: f64,
    pub v_h: f64,
    pub v_y: f64,
    pub n: usize,
    pub strata: Vec<StratumEstimate>,
}

impl EstimateResult {
    pub fn ci_low(&self) -> f64 {
        self.ci[0]
    }

    pub fn ci_high(&self) -> f64 {
        self.ci[1]
    }

    fn build(
        theta: f64,
        v_h: f64,
        v_y: f64,
        n: usize,
        level: f64,
        strata: Vec<StratumEstimate>,
    ) -> Self {
        let v_hat = v_h + v_y;
        let se = (v_hat / n as f64).sqrt();
        let z = critical_value(level);
        Self {
            theta,
            se,
            ci: [theta - z * se, theta + z * se],
            level,
            v_hat,
            v_h,
            v_y,
            n,
            strata,
        }
    }
}

/// Two-sided standard normal critical value for confidence `level`.
pub fn critical_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Per-stratum counts, differences in means and plug-in variances of a
/// two-arm sample. Empty strata are omitted.
pub fn stratum_table(tree: &StratificationTree, sample: &Sample) -> Result<Vec<StratumEstimate>> {
    if sample.arms() != 2 {
        return Err(Error::InvalidArgument(format!(
            "scalar estimator needs two arms, sample has {}; use the multi-treatment estimator",
            sample.arms()
        )));
    }
    let labels = tree.strata(sample)?;
    let mut acc = vec![[0.0f64; 6]; tree.n_leaves()];
    for (i, &k) in labels.iter().enumerate() {
        let o = 3 * sample.a(i);
        let y = sample.y(i);
        acc[k - 1][o] += 1.0;
        acc[k - 1][o + 1] += y;
        acc[k - 1][o + 2] += y * y;
    }
    let missing: Vec<usize> = acc
        .iter()
        .enumerate()
        .filter(|(_, c)| c[0] + c[3] > 0.0 && (c[0] == 0.0 || c[3] == 0.0))
        .map(|(k, _)| k + 1)
        .collect();
    if !missing.is_empty() {
        return Err(Error::EmptyArm { strata: missing });
    }
    Ok(acc
        .iter()
        .enumerate()
        .filter(|(_, c)| c[0] + c[3] > 0.0)
        .map(|(k, c)| {
            let (m0, var0) = plug_in(c[0], c[1], c[2]);
            let (m1, var1) = plug_in(c[3], c[4], c[5]);
            StratumEstimate {
                label: k + 1,
                n: (c[0] + c[3]) as usize,
                n1: c[3] as usize,
                n0: c[0] as usize,
                beta: m1 - m0,
                var1,
                var0,
            }
        })
        .collect())
}

/// Combines per-stratum rows into the weighted estimator over `n` units.
fn combine(strata: Vec<StratumEstimate>, n: usize, level: f64) -> EstimateResult {
    let nf = n as f64;
    let theta: f64 = strata.iter().map(|s| s.n as f64 / nf * s.beta).sum();
    let v_h: f64 = strata
        .iter()
        .map(|s| s.n as f64 / nf * (s.beta - theta).powi(2))
        .sum();
    let v_y: f64 = strata.iter().map(|s| s.outcome_term(s.n as f64 / nf)).sum();
    EstimateResult::build(theta, v_h, v_y, n, level, strata)
}

/// The stratified difference-in-means estimator with its consistent
/// variance estimate and a normal-approximation confidence interval.
pub fn estimate_ate(
    tree: &StratificationTree,
    wave2: &Sample,
    level: f64,
) -> Result<EstimateResult> {
    check_level(level)?;
    let strata = stratum_table(tree, wave2)?;
    Ok(combine(strata, wave2.n(), level))
}

/// Strata-fixed-effects regression estimate. Only consistent when every
/// stratum has the same assignment target; otherwise refused.
pub fn estimate_ate_sfe(
    tree: &StratificationTree,
    wave2: &Sample,
    level: f64,
) -> Result<EstimateResult> {
    let pis = tree.leaf_pis();
    let first = pis[0];
    if pis
        .iter()
        .any(|p| p.len() != first.len() || p.iter().zip(first).any(|(a, b)| (a - b).abs() > 1e-12))
    {
        return Err(Error::UnequalTargets);
    }
    let base = estimate_ate(tree, wave2, level)?;
    let labels = tree.strata(wave2)?;
    let k = tree.n_leaves();
    let (mut na, mut sa, mut sy) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (i, &s) in labels.iter().enumerate() {
        na[s - 1] += 1.0;
        sa[s - 1] += wave2.a(i) as f64;
        sy[s - 1] += wave2.y(i);
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &s) in labels.iter().enumerate() {
        let da = wave2.a(i) as f64 - sa[s - 1] / na[s - 1];
        let dy = wave2.y(i) - sy[s - 1] / na[s - 1];
        sxy += da * dy;
        sxx += da * da;
    }
    Ok(EstimateResult::build(
        sxy / sxx,
        base.v_h,
        base.v_y,
        base.n,
        level,
        base.strata,
    ))
}

/// Sample-size weighted combination of a pilot-wave estimate and the
/// second-wave estimate: weights `λ = m / N` and `1 − λ`.
pub fn estimate_pooled(pilot: &EstimateResult, wave2: &EstimateResult) -> EstimateResult {
    if pilot.n == 0 {
        return wave2.clone();
    }
    let total = pilot.n + wave2.n;
    let lambda = pilot.n as f64 / total as f64;
    let mix = |a: f64, b: f64| lambda * a + (1.0 - lambda) * b;
    EstimateResult::build(
        mix(pilot.theta, wave2.theta),
        mix(pilot.v_h, wave2.v_h),
        mix(pilot.v_y, wave2.v_y),
        total,
        wave2.level,
        wave2.strata.clone(),
    )
}

/// Estimates for each cell `g` of a coarser tree `S′` that `tree` refines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEstimates {
    pub global: EstimateResult,
    pub groups: Vec<SubgroupEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEstimate {
    pub group: usize,
    /// Labels of the strata of `tree` inside this subgroup.
    pub strata: Vec<usize>,
    pub estimate: EstimateResult,
}

/// For every leaf of `tree`, the subgroup whose cell contains it.
pub fn subgroup_membership(
    tree: &StratificationTree,
    subgroup_tree: &StratificationTree,
) -> Result<Vec<usize>> {
    if tree.space().dim() != subgroup_tree.space().dim() {
        return Err(Error::NotAnExtension(
            "trees live in spaces of different dimension".into(),
        ));
    }
    let groups = subgroup_tree.leaf_cells();
    tree.leaf_cells()
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            groups
                .iter()
                .position(|g| g.contains_cell(cell))
                .map(|g| g + 1)
                .ok_or_else(|| {
                    Error::NotAnExtension(format!(
                        "stratum {} with cell {} crosses a subgroup boundary",
                        k + 1,
                        describe(cell)
                    ))
                })
        })
        .collect()
}

fn describe(cell: &Cell) -> String {
    cell.lower
        .iter()
        .zip(&cell.upper)
        .enumerate()
        .map(|(j, (l, u))| format!("x{} in ({l}, {u}]", j + 1))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Subgroup estimators `θ̂^(g) = Σ_{k∈K_g} n(k)/n′(g) β̂(k)` with variances
/// restricted to the strata of each subgroup.
pub fn estimate_subgroups(
    tree: &StratificationTree,
    subgroup_tree: &StratificationTree,
    wave2: &Sample,
    level: f64,
) -> Result<SubgroupEstimates> {
    let membership = subgroup_membership(tree, subgroup_tree)?;
    let global = estimate_ate(tree, wave2, level)?;
    let groups = (1..=subgroup_tree.n_leaves())
        .map(|g| {
            let members: Vec<usize> = (1..=tree.n_leaves())
                .filter(|&k| membership[k - 1] == g)
                .collect();
            let rows: Vec<StratumEstimate> = global
                .strata
                .iter()
                .filter(|s| membership[s.label - 1] == g)
                .cloned()
                .collect();
            let n: usize = rows.iter().map(|s| s.n).sum();
            if n == 0 {
                return Err(Error::SubgroupMissingArm { group: g, arm: 0 });
            }
            Ok(SubgroupEstimate {
                group: g,
                strata: members,
                estimate: combine(rows, n, level),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubgroupEstimates { global, groups })
}

/// The covariate space restricted to `cell`.
fn cell_space(space: &CovariateSpace, cell: &Cell) -> Result<CovariateSpace> {
    let dims = space
        .dims()
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let (lower, upper) = (cell.lower[j], cell.upper[j]);
            let support = match spec.kind {
                DimensionKind::Continuous => None,
                DimensionKind::Discrete => Some(
                    spec.support
                        .iter()
                        .flatten()
                        .copied()
                        .filter(|v| *v >= lower && *v <= upper)
                        .collect(),
                ),
            };
            DimensionSpec {
                kind: spec.kind,
                lower,
                upper,
                support,
            }
        })
        .collect();
    CovariateSpace::new(dims)
}

fn graft(node: &Node, subtrees: &mut impl Iterator<Item = Node>) -> Node {
    match node {
        Node::Leaf { .. } => subtrees.next().expect("one subtree per subgroup"),
        Node::Split { cut, left, right } => {
            let l = graft(left, subtrees);
            let r = graft(right, subtrees);
            Node::split(*cut, l, r)
        }
    }
}

/// Fits a tree of depth `config.max_depth` that refines `subgroup_tree` by
/// fitting each subgroup separately and grafting the results.
///
/// Each subgroup fit centres the heterogeneity term on the full-pilot
/// difference in means, so the objective of the grafted tree is the
/// share-weighted sum of the subgroup objectives.
pub fn fit_subgroup_tree(
    pilot: &Sample,
    subgroup_tree: &StratificationTree,
    config: &FitConfig,
) -> Result<StratificationTree> {
    let space = subgroup_tree.space().clone();
    let depth = subgroup_tree.depth();
    if config.max_depth < depth {
        return Err(Error::InvalidConfig(format!(
            "depth limit {} is below the subgroup tree depth {depth}",
            config.max_depth
        )));
    }
    let labels = subgroup_tree.strata(pilot)?;
    let center = config
        .heterogeneity_center
        .clone()
        .unwrap_or_else(|| pilot.difference_in_means());
    let mut subtrees = Vec::new();
    for (g, cell) in subgroup_tree.leaf_cells().iter().enumerate() {
        let rows: Vec<usize> = (0..pilot.n()).filter(|&i| labels[i] == g + 1).collect();
        let counts = rows.iter().fold(vec![0usize; pilot.arms()], |mut c, &i| {
            c[pilot.a(i)] += 1;
            c
        });
        if let Some(arm) = counts.iter().position(|&c| c == 0) {
            return Err(Error::SubgroupMissingArm { group: g + 1, arm });
        }
        let sub = pilot.subset(&rows)?;
        let sub_space = Arc::new(cell_space(&space, cell)?);
        let mut sub_config = config.clone();
        sub_config.max_depth = config.max_depth - depth;
        sub_config.heterogeneity_center = Some(center.clone());
        sub_config.ea.seed = crate::search::mix(config.ea.seed, 0x5ab, g as u64);
        subtrees.push(fit(&sub, &sub_space, &sub_config)?.tree.into_root());
    }
    let root = graft(subgroup_tree.root(), &mut subtrees.into_iter());
    StratificationTree::new(space, config.max_depth, root)
}
