//! Treatment assignment of a new wave within the strata of a tree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::search::mix;
use crate::tree::StratificationTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// Stratified block randomization: fixed treated counts per stratum.
    Sbr,
    /// Independent draws with the stratum's targets.
    Simple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub procedure: Procedure,
    pub seed: u64,
    /// 1-based stratum label of each unit.
    pub strata: Vec<usize>,
    pub treatments: Vec<usize>,
    /// Units per stratum (index `k - 1`).
    pub stratum_sizes: Vec<usize>,
    /// `arm_counts[k - 1][a]`.
    pub arm_counts: Vec<Vec<usize>>,
}

impl AssignmentPlan {
    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    fn build(
        procedure: Procedure,
        seed: u64,
        tree: &StratificationTree,
        strata: Vec<usize>,
        treatments: Vec<usize>,
    ) -> Self {
        let k = tree.n_leaves();
        let arms = tree.treated_arms() + 1;
        let mut arm_counts = vec![vec![0; arms]; k];
        for (&s, &a) in strata.iter().zip(&treatments) {
            arm_counts[s - 1][a] += 1;
        }
        let stratum_sizes = arm_counts.iter().map(|c| c.iter().sum()).collect();
        Self {
            procedure,
            seed,
            strata,
            treatments,
            stratum_sizes,
            arm_counts,
        }
    }
}

fn strata_of<X: AsRef<[f64]>>(tree: &StratificationTree, xs: &[X]) -> Result<Vec<usize>> {
    xs.iter().map(|x| tree.stratum_of(x.as_ref())).collect()
}

/// Treated counts under block randomization: `⌊n π_a⌋` for each treated
/// arm in turn, the remainder to control.
pub fn sbr_counts(n: usize, pi: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; pi.len() + 1];
    let mut left = n;
    for (a, p) in pi.iter().enumerate() {
        let c = ((n as f64 * p).floor() as usize).min(left);
        counts[a + 1] = c;
        left -= c;
    }
    counts[0] = left;
    counts
}

/// Within each stratum a uniformly random subset of `⌊n(k) π(k)⌋` units is
/// treated.
pub fn assign_sbr<X: AsRef<[f64]>>(
    tree: &StratificationTree,
    xs: &[X],
    seed: u64,
) -> Result<AssignmentPlan> {
    let strata = strata_of(tree, xs)?;
    let mut members = vec![Vec::new(); tree.n_leaves()];
    for (i, &s) in strata.iter().enumerate() {
        members[s - 1].push(i);
    }
    let pis = tree.leaf_pis();
    let mut treatments = vec![0; xs.len()];
    for (k, units) in members.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5b, k as u64));
        units.shuffle(&mut rng);
        let counts = sbr_counts(units.len(), pis[k]);
        let mut rest = &units[..];
        for (a, &c) in counts.iter().enumerate().skip(1) {
            for &i in &rest[..c] {
                treatments[i] = a;
            }
            rest = &rest[c..];
        }
    }
    Ok(AssignmentPlan::build(
        Procedure::Sbr,
        seed,
        tree,
        strata,
        treatments,
    ))
}

/// Each unit independently gets arm `a` with probability `π_a` of its
/// stratum.
pub fn assign_simple<X: AsRef<[f64]>>(
    tree: &StratificationTree,
    xs: &[X],
    seed: u64,
) -> Result<AssignmentPlan> {
    let strata = strata_of(tree, xs)?;
    let pis = tree.leaf_pis();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x51, 0));
    let treatments = strata
        .iter()
        .map(|&s| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, p) in pis[s - 1].iter().enumerate() {
                acc += p;
                if u < acc {
                    return a + 1;
                }
            }
            0
        })
        .collect();
    Ok(AssignmentPlan::build(
        Procedure::Simple,
        seed,
        tree,
        strata,
        treatments,
    ))
}
