//! Several treatment arms: the covariance matrix of the vector of
//! stratified effect estimates, E-optimal tree search and estimation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::estimate::critical_value;
use crate::objective::{neyman_allocation, ArmMoments, StratumMoments, TreeObjective};
use crate::sample::Sample;
use crate::tree::StratificationTree;

/// A `J × J` covariance matrix in treatment order `1..=J`. Infeasible
/// trees (too few pilot rows in some cell) are flagged and carry `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMatrix {
    pub matrix: DMatrix<f64>,
    pub feasible: bool,
}

impl VarianceMatrix {
    fn infeasible(j: usize) -> Self {
        Self {
            matrix: DMatrix::from_element(j, j, f64::INFINITY),
            feasible: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_arms(sample: &Sample) -> Result<usize> {
    let j = sample.arms() - 1;
    if j < 1 {
        return Err(Error::InvalidArgument(
            "need at least one treated arm".into(),
        ));
    }
    Ok(j)
}

/// Contribution of one stratum with moments `cell` and targets `pi`
/// (treated arms only) to the matrix, before share weighting.
fn stratum_block(cell: &[ArmMoments], pi: &[f64], center: &[f64]) -> DMatrix<f64> {
    let j = pi.len();
    let control = cell[0].var / (1.0 - pi.iter().sum::<f64>());
    DMatrix::from_fn(j, j, |r, c| {
        let dr = cell[r + 1].mean - cell[0].mean - center[r];
        let dc = cell[c + 1].mean - cell[0].mean - center[c];
        let own = if r == c { cell[r + 1].var / pi[r] } else { 0.0 };
        dr * dc + (control + own)
    })
}

fn center_of(pilot: &Sample, config: &FitConfig) -> Vec<f64> {
    config
        .heterogeneity_center
        .clone()
        .unwrap_or_else(|| pilot.difference_in_means())
}

fn matrix_from_moments(
    moments: &StratumMoments,
    pis: &[&[f64]],
    center: &[f64],
    min_cell: usize,
) -> VarianceMatrix {
    let j = center.len();
    let min = min_cell.max(1);
    if moments
        .cells
        .iter()
        .any(|cell| cell.iter().any(|a| a.count < min))
    {
        return VarianceMatrix::infeasible(j);
    }
    let mut matrix = DMatrix::zeros(j, j);
    for (k, (cell, pi)) in moments.cells.iter().zip(pis).enumerate() {
        matrix += stratum_block(cell, pi, center) * moments.share(k);
    }
    VarianceMatrix {
        matrix,
        feasible: true,
    }
}

/// Plug-in estimate of the covariance matrix of the stratified effect
/// estimates, evaluated on `pilot` with the tree's own leaf targets.
pub fn empirical_variance_matrix(
    tree: &StratificationTree,
    pilot: &Sample,
    config: &FitConfig,
) -> Result<VarianceMatrix> {
    let j = check_arms(pilot)?;
    if tree.treated_arms() != j {
        return Err(Error::InvalidArgument(format!(
            "tree targets {} treated arms, pilot has {j}",
            tree.treated_arms()
        )));
    }
    let moments = StratumMoments::compute(tree, pilot);
    Ok(matrix_from_moments(
        &moments,
        &tree.leaf_pis(),
        &center_of(pilot, config),
        config.min_cell_per_arm,
    ))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn e_optimal_objective(v: &VarianceMatrix) -> Result<f64> {
    if !v.feasible {
        return Ok(f64::INFINITY);
    }
    let m = &v.matrix;
    let scale = m.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)]);
    }
    let eig = SymmetricEigen::new(m.clone());
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// λ_max of a stratum's outcome-variance block `σ0²/π0 ιι′ + diag(σa²/πa)`.
fn stratum_lambda(var: &[f64], pi: &[f64]) -> f64 {
    let j = pi.len();
    let pi0 = 1.0 - pi.iter().sum::<f64>();
    let m = DMatrix::from_fn(j, j, |r, c| {
        var[0] / pi0 + if r == c { var[r + 1] / pi[r] } else { 0.0 }
    });
    if j == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Treated-arm shares minimizing the largest eigenvalue of a stratum's
/// outcome-variance block over the simplex with every share (control
/// included) in `[ν, 1 − ν]`. Closed-form Neyman allocation when `J = 1`.
pub fn optimal_shares(var: &[f64], nu: f64) -> Result<Vec<f64>> {
    let j = var.len() - 1;
    if j == 1 {
        return Ok(vec![neyman_allocation(var[1].sqrt(), var[0].sqrt(), nu)]);
    }
    if (j + 1) as f64 * nu > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "nu = {nu} leaves no feasible shares for {} arms",
            j + 1
        )));
    }
    if var.iter().all(|v| *v == 0.0) {
        return Ok(vec![1.0 / (j + 1) as f64; j]);
    }
    let mut pi = vec![1.0 / (j + 1) as f64; j];
    let mut current = stratum_lambda(var, &pi);
    for _ in 0..500 {
        let before = pi.clone();
        for a in 0..j {
            let others: f64 = pi
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, p)| p)
                .sum();
            let lo = nu.max(1.0 - others - (1.0 - nu));
            let hi = (1.0 - nu).min(1.0 - others - nu);
            if hi <= lo {
                continue;
            }
            let mut trial = pi.clone();
            let best = golden_section(
                |x| {
                    trial[a] = x;
                    stratum_lambda(var, &trial)
                },
                lo,
                hi,
                1e-10,
            );
            let mut candidate = pi.clone();
            candidate[a] = best;
            let value = stratum_lambda(var, &candidate);
            if value < current {
                pi = candidate;
                current = value;
            }
        }
        let shift = pi
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if shift < 1e-8 {
            break;
        }
    }
    Ok(pi)
}

fn shares_for(moments: &StratumMoments, nu: f64) -> Vec<Vec<f64>> {
    let arms = moments.cells.first().map(|c| c.len()).unwrap_or(2);
    moments
        .cells
        .iter()
        .map(|cell| {
            if cell.iter().any(|a| a.count == 0) {
                return vec![1.0 / arms as f64; arms - 1];
            }
            let var: Vec<f64> = cell.iter().map(|a| a.var).collect();
            optimal_shares(&var, nu).unwrap_or_else(|_| vec![1.0 / arms as f64; arms - 1])
        })
        .collect()
}

/// Leaf targets from [`optimal_shares`] on each leaf's pilot rows.
pub fn optimize_leaf_proportions_multi(
    tree: StratificationTree,
    pilot: &Sample,
    config: &FitConfig,
) -> StratificationTree {
    let moments = StratumMoments::compute(&tree, pilot);
    tree.with_leaf_pis(shares_for(&moments, config.nu))
}

/// Minimizes the largest eigenvalue of the covariance matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct EOptimalObjective;

impl TreeObjective for EOptimalObjective {
    fn score(
        &self,
        tree: StratificationTree,
        pilot: &Sample,
        config: &FitConfig,
    ) -> (StratificationTree, f64) {
        let moments = StratumMoments::compute(&tree, pilot);
        let tree = tree.with_leaf_pis(shares_for(&moments, config.nu));
        let v = matrix_from_moments(
            &moments,
            &tree.leaf_pis(),
            &center_of(pilot, config),
            config.min_cell_per_arm,
        );
        let value = e_optimal_objective(&v).unwrap_or(f64::INFINITY);
        (tree, value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiEstimate {
    /// Effect of each treated arm against control.
    pub theta: Vec<f64>,
    /// Row-major `J × J` estimate of the covariance of `sqrt(n)(θ̂ − θ)`.
    pub v_hat: Vec<f64>,
    pub v_h: Vec<f64>,
    pub v_y: Vec<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
    pub level: f64,
    pub n: usize,
}

impl MultiEstimate {
    pub fn v_matrix(&self) -> DMatrix<f64> {
        let j = self.theta.len();
        DMatrix::from_row_slice(j, j, &self.v_hat)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Stratified estimates of every treated-arm effect and their joint
/// covariance. Agrees with the scalar estimator when there is one treated arm.
pub fn estimate_ate_multi(
    tree: &StratificationTree,
    wave2: &Sample,
    level: f64,
) -> Result<MultiEstimate> {
    let j = check_arms(wave2)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    wave2.check_space(tree.space())?;
    let moments = StratumMoments::compute(tree, wave2);
    let missing: Vec<usize> = moments
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|a| a.count > 0) && c.iter().any(|a| a.count == 0))
        .map(|(k, _)| k + 1)
        .collect();
    if !missing.is_empty() {
        return Err(Error::EmptyArm { strata: missing });
    }
    let n = wave2.n() as f64;
    let nonempty: Vec<&Vec<ArmMoments>> = moments
        .cells
        .iter()
        .filter(|c| c.iter().any(|a| a.count > 0))
        .collect();
    let beta = |cell: &[ArmMoments], a: usize| cell[a + 1].mean - cell[0].mean;
    let weight = |cell: &[ArmMoments]| cell.iter().map(|a| a.count).sum::<usize>() as f64 / n;
    let theta: Vec<f64> = (0..j)
        .map(|a| nonempty.iter().map(|c| weight(c) * beta(c, a)).sum())
        .collect();
    let mut v_h = DMatrix::<f64>::zeros(j, j);
    let mut v_y = DMatrix::<f64>::zeros(j, j);
    for cell in &nonempty {
        let w = weight(cell);
        let nk = cell.iter().map(|a| a.count).sum::<usize>() as f64;
        for r in 0..j {
            for c in 0..j {
                v_h[(r, c)] += w * ((beta(cell, r) - theta[r]) * (beta(cell, c) - theta[c]));
                let control = cell[0].var * nk / cell[0].count as f64;
                v_y[(r, c)] += if r == c {
                    w * (cell[r + 1].var * nk / cell[r + 1].count as f64 + control)
                } else {
                    w * control
                };
            }
        }
    }
    let v = &v_h + &v_y;
    let z = critical_value(level);
    let se: Vec<f64> = (0..j).map(|a| (v[(a, a)] / n).sqrt()).collect::<Vec<f64>>();
    let ci = theta
        .iter()
        .zip(&se)
        .map(|(t, s)| [t - z * s, t + z * s])
        .collect();
    Ok(MultiEstimate {
        theta,
        v_hat: row_major(&v),
        v_h: row_major(&v_h),
        v_y: row_major(&v_y),
        se,
        ci,
        level,
        n: wave2.n(),
    })
}
