//! Empirical and population variance of the stratified estimator, and
//! Neyman allocation of treatment shares within strata.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::sim::DgpSpec;
use crate::tree::StratificationTree;

/// Plug-in moments of one arm within one stratum (divisor `n_a(k)`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmMoments {
    pub count: usize,
    pub mean: f64,
    pub var: f64,
}

/// Per-stratum, per-arm moments of a sample under a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumMoments {
    /// `cells[k][a]` for 0-based stratum `k` (label `k + 1`) and arm `a`.
    pub cells: Vec<Vec<ArmMoments>>,
    pub total: usize,
}

impl StratumMoments {
    pub fn compute(tree: &StratificationTree, sample: &Sample) -> Self {
        let k = tree.n_leaves();
        let arms = sample.arms();
        let mut count = vec![0usize; k * arms];
        let mut sum = vec![0.0f64; k * arms];
        let mut sumsq = vec![0.0f64; k * arms];
        for i in 0..sample.n() {
            let idx = (tree.leaf_label(sample.x(i)) - 1) * arms + sample.a(i);
            let y = sample.y(i);
            count[idx] += 1;
            sum[idx] += y;
            sumsq[idx] += y * y;
        }
        let cells = (0..k)
            .map(|s| {
                (0..arms)
                    .map(|a| {
                        let idx = s * arms + a;
                        let n = count[idx];
                        if n == 0 {
                            return ArmMoments::default();
                        }
                        let mean = sum[idx] / n as f64;
                        let var = (sumsq[idx] / n as f64 - mean * mean).max(0.0);
                        ArmMoments {
                            count: n,
                            mean,
                            var,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            cells,
            total: sample.n(),
        }
    }

    pub fn stratum_count(&self, k: usize) -> usize {
        self.cells[k].iter().map(|c| c.count).sum()
    }

    pub fn share(&self, k: usize) -> f64 {
        self.stratum_count(k) as f64 / self.total as f64
    }

    /// Whether every stratum has at least `min` rows in every arm.
    pub fn meets_cell_minimum(&self, min: usize) -> bool {
        self.cells.iter().all(|cell| {
            let n: usize = cell.iter().map(|c| c.count).sum();
            (n == 0 && min == 0) || cell.iter().all(|c| c.count >= min.max(1))
        })
    }
}

/// `clamp(σ1 / (σ1 + σ0), ν, 1 − ν)`; a stratum where both are zero gets 0.5.
pub fn neyman_allocation(sigma1: f64, sigma0: f64, nu: f64) -> f64 {
    let total = sigma1 + sigma0;
    if total <= 0.0 {
        return 0.5;
    }
    (sigma1 / total).clamp(nu, 1.0 - nu)
}

fn require_binary(pilot: &Sample) -> Result<()> {
    if pilot.arms() != 2 {
        return Err(Error::InvalidArgument(format!(
            "scalar objective needs exactly two arms, pilot has {}; use the multi-treatment objective",
            pilot.arms()
        )));
    }
    Ok(())
}

/// Per-leaf `[n0, Σy0, Σy0², n1, Σy1, Σy1²]` for a two-arm sample.
fn binary_sums(tree: &StratificationTree, pilot: &Sample) -> Vec<[f64; 6]> {
    let mut acc = vec![[0.0f64; 6]; tree.n_leaves()];
    for i in 0..pilot.n() {
        let cell = &mut acc[tree.leaf_label(pilot.x(i)) - 1];
        let o = 3 * pilot.a(i);
        let y = pilot.y(i);
        cell[o] += 1.0;
        cell[o + 1] += y;
        cell[o + 2] += y * y;
    }
    acc
}

/// Plug-in mean and variance from a count, sum and sum of squares.
#[inline]
pub(crate) fn plug_in(n: f64, sum: f64, sumsq: f64) -> (f64, f64) {
    let mean = sum / n;
    (mean, (sumsq / n - mean * mean).max(0.0))
}

fn binary_value(
    sums: &[[f64; 6]],
    pis: impl Iterator<Item = f64>,
    total: usize,
    center: f64,
    min_cell: usize,
) -> f64 {
    let min = min_cell.max(1) as f64;
    if sums.iter().any(|c| c[0] < min || c[3] < min) {
        return f64::INFINITY;
    }
    let m = total as f64;
    let mut value = 0.0;
    for (c, pi) in sums.iter().zip(pis) {
        let (m0, v0) = plug_in(c[0], c[1], c[2]);
        let (m1, v1) = plug_in(c[3], c[4], c[5]);
        value += ((c[0] + c[3]) / m) * ((m1 - m0 - center).powi(2) + v0 / (1.0 - pi) + v1 / pi);
    }
    value
}

fn neyman_from_sums(c: &[f64; 6], nu: f64) -> f64 {
    if c[0] == 0.0 || c[3] == 0.0 {
        return 0.5;
    }
    let (_, v0) = plug_in(c[0], c[1], c[2]);
    let (_, v1) = plug_in(c[3], c[4], c[5]);
    neyman_allocation(v1.sqrt(), v0.sqrt(), nu)
}

fn center_of(pilot: &Sample, config: &FitConfig) -> f64 {
    config
        .heterogeneity_center
        .as_ref()
        .and_then(|c| c.first().copied())
        .unwrap_or_else(|| pilot.difference_in_means()[0])
}

/// Empirical analogue of the asymptotic variance of the stratified
/// estimator, evaluated on `pilot` with the tree's own leaf targets.
///
/// `+inf` when some stratum has fewer than `config.min_cell_per_arm` pilot
/// rows in either arm (empty strata included).
pub fn empirical_variance(
    tree: &StratificationTree,
    pilot: &Sample,
    config: &FitConfig,
) -> Result<f64> {
    require_binary(pilot)?;
    let sums = binary_sums(tree, pilot);
    let pis = tree.leaf_pis().into_iter().map(|p| p[0]);
    Ok(binary_value(
        &sums,
        pis,
        pilot.n(),
        center_of(pilot, config),
        config.min_cell_per_arm,
    ))
}

/// Replaces every leaf target by the clipped Neyman allocation computed from
/// the pilot rows in that leaf.
pub fn optimize_leaf_proportions(
    tree: StratificationTree,
    pilot: &Sample,
    config: &FitConfig,
) -> StratificationTree {
    if pilot.arms() != 2 {
        return crate::multi::optimize_leaf_proportions_multi(tree, pilot, config);
    }
    VarianceObjective.score(tree, pilot, config).0
}

/// A criterion the tree search minimizes. Implementations set leaf targets
/// for the given partition and return the resulting objective value.
pub trait TreeObjective: Sync {
    fn score(
        &self,
        tree: StratificationTree,
        pilot: &Sample,
        config: &FitConfig,
    ) -> (StratificationTree, f64);
}

/// The scalar variance objective with Neyman-optimal leaf targets.
#[derive(Debug, Clone, Copy, Default)]
pub struct VarianceObjective;

impl TreeObjective for VarianceObjective {
    fn score(
        &self,
        mut tree: StratificationTree,
        pilot: &Sample,
        config: &FitConfig,
    ) -> (StratificationTree, f64) {
        debug_assert_eq!(pilot.arms(), 2);
        let sums = binary_sums(&tree, pilot);
        let pis: Vec<f64> = sums
            .iter()
            .map(|c| neyman_from_sums(c, config.nu))
            .collect();
        let mut it = pis.iter();
        tree.root_mut().for_each_leaf_mut(&mut |pi| {
            pi.clear();
            pi.push(*it.next().expect("one target per leaf"));
        });
        let value = binary_value(
            &sums,
            pis.into_iter(),
            pilot.n(),
            center_of(pilot, config),
            config.min_cell_per_arm,
        );
        (tree, value)
    }
}

/// Monte Carlo evaluation of the population variance `V(T)` using `n_mc`
/// joint draws of `(Y(1), Y(0), X)` from `dgp`.
pub fn population_variance(
    tree: &StratificationTree,
    dgp: &DgpSpec,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc < 1 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if dgp.dim() != tree.space().dim() {
        return Err(Error::InvalidArgument(format!(
            "tree has {} dimensions, data-generating process has {}",
            tree.space().dim(),
            dgp.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = dgp.draw_with(n_mc, &mut rng);
    let k = tree.n_leaves();
    // Per stratum: count, sums of y1, y1^2, y0, y0^2.
    let mut acc = vec![[0.0f64; 5]; k];
    let mut effect_sum = 0.0;
    for i in 0..n_mc {
        let s = tree.leaf_label(draws.x(i)) - 1;
        let (y1, y0) = (draws.y1[i], draws.y0[i]);
        let a = &mut acc[s];
        a[0] += 1.0;
        a[1] += y1;
        a[2] += y1 * y1;
        a[3] += y0;
        a[4] += y0 * y0;
        effect_sum += y1 - y0;
    }
    let theta = effect_sum / n_mc as f64;
    let pis = tree.leaf_pis();
    let mut v = 0.0;
    for (a, pi) in acc.iter().zip(pis) {
        if a[0] == 0.0 {
            continue;
        }
        let n = a[0];
        let (m1, m0) = (a[1] / n, a[3] / n);
        let var1 = (a[2] / n - m1 * m1).max(0.0);
        let var0 = (a[4] / n - m0 * m0).max(0.0);
        let pi = pi[0];
        v += n / n_mc as f64 * ((m1 - m0 - theta).powi(2) + var0 / (1.0 - pi) + var1 / pi);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::space::CovariateSpace;
    use crate::tree::{Cut, Node};

    #[test]
    fn neyman_examples() {
        assert_eq!(neyman_allocation(2.0, 2.0, 0.1), 0.5);
        assert_eq!(neyman_allocation(3.0, 1.0, 0.1), 0.75);
        assert_eq!(neyman_allocation(100.0, 1.0, 0.1), 0.9);
        assert_eq!(neyman_allocation(1.0, 100.0, 0.1), 0.1);
        assert_eq!(neyman_allocation(0.0, 0.0, 0.1), 0.5);
    }

    fn hand_pilot() -> Sample {
        // Eight rows in 1-d; two per arm on each side of 0.5.
        Sample::new(
            vec![1.0, 3.0, 2.0, 6.0, 4.0, 8.0, 5.0, 13.0],
            vec![0, 0, 1, 1, 0, 0, 1, 1],
            vec![
                vec![0.1],
                vec![0.2],
                vec![0.3],
                vec![0.4],
                vec![0.6],
                vec![0.7],
                vec![0.8],
                vec![0.9],
            ],
        )
        .unwrap()
    }

    fn split_at(t: f64, pis: [f64; 2]) -> StratificationTree {
        StratificationTree::new(
            Arc::new(CovariateSpace::unit_cube(1)),
            1,
            Node::split(
                Cut::new(0, t),
                Node::leaf(vec![pis[0]]),
                Node::leaf(vec![pis[1]]),
            ),
        )
        .unwrap()
    }

    #[test]
    fn single_stratum_reduction() {
        let pilot = hand_pilot();
        let tree =
            StratificationTree::single_leaf(Arc::new(CovariateSpace::unit_cube(1)), 0, vec![0.5]);
        let v = empirical_variance(&tree, &pilot, &FitConfig::default()).unwrap();
        // Treated: 2, 6, 5, 13 -> mean 6.5, var 16.25. Control: 1, 3, 4, 8 -> mean 4, var 6.5.
        assert!((v - (2.0 * 16.25 + 2.0 * 6.5)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_depth_one() {
        // Left: control {1, 3} mean 2 var 1; treated {2, 6} mean 4 var 4; effect 2.
        // Right: control {4, 8} mean 6 var 4; treated {5, 13} mean 9 var 16; effect 3.
        // Overall difference in means 6.5 - 4 = 2.5.
        // With pi = (0.5, 0.5):
        //   0.5 * (0.25 + 1/0.5 + 4/0.5) + 0.5 * (0.25 + 4/0.5 + 16/0.5) = 5.125 + 20.125.
        let pilot = hand_pilot();
        let v =
            empirical_variance(&split_at(0.5, [0.5, 0.5]), &pilot, &FitConfig::default()).unwrap();
        assert!((v - 25.25).abs() < 1e-12, "{v}");
        // Neyman targets: left 2/(2+1), right 4/(4+2); both 2/3.
        let opt =
            optimize_leaf_proportions(split_at(0.5, [0.5, 0.5]), &pilot, &FitConfig::default());
        for pi in opt.leaf_pis() {
            assert!((pi[0] - 2.0 / 3.0).abs() < 1e-15);
        }
        let v_opt = empirical_variance(&opt, &pilot, &FitConfig::default()).unwrap();
        // 0.5*(0.25 + 1/(1/3) + 4/(2/3)) + 0.5*(0.25 + 4/(1/3) + 16/(2/3)) = 0.5*9.25 + 0.5*36.25
        assert!((v_opt - 22.75).abs() < 1e-12, "{v_opt}");
        assert!(v_opt <= v);
    }

    #[test]
    fn sparse_stratum_is_infinite() {
        let pilot = hand_pilot();
        // x <= 0.35 holds control {1, 3} and a single treated unit.
        let v =
            empirical_variance(&split_at(0.35, [0.5, 0.5]), &pilot, &FitConfig::default()).unwrap();
        assert!(v.is_infinite());
        // Empty right stratum.
        let v =
            empirical_variance(&split_at(0.95, [0.5, 0.5]), &pilot, &FitConfig::default()).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn optimize_is_idempotent_and_clips() {
        let pilot = Sample::new(
            vec![0.0, 0.2, -10.0, 10.0, 0.0, 1.0, 0.0, 1.0],
            vec![0, 0, 1, 1, 0, 0, 1, 1],
            vec![
                vec![0.1],
                vec![0.2],
                vec![0.3],
                vec![0.4],
                vec![0.6],
                vec![0.7],
                vec![0.8],
                vec![0.9],
            ],
        )
        .unwrap();
        let config = FitConfig::default();
        let once = optimize_leaf_proportions(split_at(0.5, [0.3, 0.3]), &pilot, &config);
        assert_eq!(once.leaf_pis()[0], &[0.9]);
        assert_eq!(once.leaf_pis()[1], &[0.5]);
        let twice = optimize_leaf_proportions(once.clone(), &pilot, &config);
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_leaf_gets_half() {
        let pilot = hand_pilot();
        let opt =
            optimize_leaf_proportions(split_at(0.95, [0.3, 0.3]), &pilot, &FitConfig::default());
        assert_eq!(opt.leaf_pis()[1], &[0.5]);
    }

    #[test]
    fn rejects_multi_arm_pilot() {
        let pilot = Sample::new(
            vec![1.0, 2.0, 3.0],
            vec![0, 1, 2],
            vec![vec![0.1], vec![0.2], vec![0.3]],
        )
        .unwrap();
        let tree =
            StratificationTree::single_leaf(Arc::new(CovariateSpace::unit_cube(1)), 0, vec![0.5]);
        assert!(empirical_variance(&tree, &pilot, &FitConfig::default()).is_err());
    }
}
