//! The evolutionary tree search.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operators::{vary, SearchSpace};
use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::objective::{TreeObjective, VarianceObjective};
use crate::sample::Sample;
use crate::space::CovariateSpace;
use crate::tree::StratificationTree;

pub const FIT_REPORT_SCHEMA: &str = "strattree.fit_report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub version: String,
    pub tree: StratificationTree,
    #[serde(with = "crate::serde_float")]
    pub objective: f64,
    /// Best objective value after each generation.
    #[serde(with = "crate::serde_float::vec")]
    pub trace: Vec<f64>,
    pub terminated: Termination,
    pub generations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub seed: u64,
    pub config: FitConfig,
}

/// Stream splitting for per-individual generators.
pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn better(a: &(StratificationTree, f64), b: &(StratificationTree, f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.0.structure_cmp(&b.0) == Ordering::Less,
    }
}

/// A child with its objective and, when new, its cache key.
type Scored = (StratificationTree, f64, Option<Vec<u64>>);

/// Mutable state of a running search.
pub struct EaState<'a> {
    pilot: &'a Sample,
    config: &'a FitConfig,
    objective: &'a dyn TreeObjective,
    ss: SearchSpace,
    pub generation: usize,
    pub parents: Vec<(StratificationTree, f64)>,
    pub best: (StratificationTree, f64),
    pub stagnation: usize,
    pub trace: Vec<f64>,
    /// Leaf targets and objective of every distinct partition scored so far.
    cache: HashMap<Vec<u64>, (Vec<Vec<f64>>, f64)>,
}

const CACHE_LIMIT: usize = 200_000;

impl<'a> EaState<'a> {
    pub fn new(
        pilot: &'a Sample,
        space: &Arc<CovariateSpace>,
        config: &'a FitConfig,
        objective: &'a dyn TreeObjective,
    ) -> Result<Self> {
        let ss = search_space(pilot, space, config)?;
        if !ss.has_candidates() {
            return Err(Error::InvalidConfig(
                "no candidate split thresholds on any dimension".into(),
            ));
        }
        let seed = config.ea.seed;
        let parents: Vec<(StratificationTree, f64)> = (0..config.ea.population)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0, i as u64));
                let tree = ss.random_depth_one(&mut rng).expect("candidates exist");
                objective.score(tree, pilot, config)
            })
            .collect();
        let best = parents.iter().fold(parents[0].clone(), |b, p| {
            if better(p, &b) {
                p.clone()
            } else {
                b
            }
        });
        Ok(Self {
            pilot,
            config,
            objective,
            ss,
            generation: 0,
            parents,
            best,
            stagnation: 0,
            trace: Vec::new(),
            cache: HashMap::new(),
        })
    }

    /// One round of variation and pairwise selection.
    pub fn step(&mut self) {
        self.generation += 1;
        let snapshot: Vec<&StratificationTree> = self.parents.iter().map(|p| &p.0).collect();
        let (seed, generation) = (self.config.ea.seed, self.generation as u64);
        let (ss, pilot, config, objective, cache) = (
            &self.ss,
            self.pilot,
            self.config,
            self.objective,
            &self.cache,
        );
        let children: Vec<Option<Scored>> = snapshot
            .par_iter()
            .enumerate()
            .map(|(i, parent)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, generation, i as u64));
                let parent: &StratificationTree = parent;
                let child = vary(parent, &snapshot, ss, &mut rng)?;
                if child.structure_cmp(parent) == Ordering::Equal {
                    return None;
                }
                let key = child.structure_key();
                if let Some((pis, value)) = cache.get(&key) {
                    return Some((child.with_leaf_pis(pis.clone()), *value, None));
                }
                let (tree, value) = objective.score(child, pilot, config);
                Some((tree, value, Some(key)))
            })
            .collect();
        if self.cache.len() > CACHE_LIMIT {
            self.cache.clear();
        }
        let children: Vec<Option<(StratificationTree, f64)>> = children
            .into_iter()
            .map(|c| {
                c.map(|(tree, value, key)| {
                    if let Some(key) = key {
                        let pis = tree.leaf_pis().iter().map(|p| p.to_vec()).collect();
                        self.cache.insert(key, (pis, value));
                    }
                    (tree, value)
                })
            })
            .collect();
        for (parent, child) in self.parents.iter_mut().zip(children) {
            if let Some(child) = child {
                if child.1 < parent.1 {
                    *parent = child;
                }
            }
        }
        for p in &self.parents {
            if better(p, &self.best) {
                self.best = p.clone();
            }
        }
        self.trace.push(self.best.1);
        if self.top_spread_converged() {
            self.stagnation += 1;
        } else {
            self.stagnation = 0;
        }
    }

    fn top_spread_converged(&self) -> bool {
        let mut values: Vec<f64> = self.parents.iter().map(|p| p.1).collect();
        values.sort_by(f64::total_cmp);
        let top = ((values.len() as f64 * 0.05).ceil() as usize).clamp(1, values.len());
        let (lo, hi) = (values[0], values[top - 1]);
        if lo.is_infinite() && hi.is_infinite() {
            return true;
        }
        hi - lo <= self.config.ea.tolerance * lo.abs()
    }

    pub fn converged(&self) -> bool {
        self.stagnation >= self.config.ea.patience
    }
}

pub(crate) fn search_space(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    config: &FitConfig,
) -> Result<SearchSpace> {
    if pilot.d() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: pilot.d(),
        });
    }
    let grid = config.split_grid.candidates(pilot, space)?;
    let arms = pilot.arms();
    Ok(SearchSpace {
        space: space.clone(),
        grid,
        max_depth: config.max_depth,
        placeholder: vec![1.0 / arms as f64; arms - 1],
    })
}

/// Fits a variance-minimizing stratification tree of depth at most
/// `config.max_depth` to `pilot`.
pub fn fit(pilot: &Sample, space: &Arc<CovariateSpace>, config: &FitConfig) -> Result<FitReport> {
    fit_with(pilot, space, config, &VarianceObjective)
}

/// [`fit`] with a caller-supplied objective.
pub fn fit_with(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    config: &FitConfig,
    objective: &dyn TreeObjective,
) -> Result<FitReport> {
    config.validate()?;
    pilot.check_space(space)?;
    let arms = pilot.arms();
    // Fix the heterogeneity centre once instead of per evaluation.
    let resolved;
    let config = if config.heterogeneity_center.is_none() {
        resolved = FitConfig {
            heterogeneity_center: Some(pilot.difference_in_means()),
            ..config.clone()
        };
        &resolved
    } else {
        config
    };
    let trivial = || {
        let leaf = StratificationTree::single_leaf(
            space.clone(),
            config.max_depth,
            vec![1.0 / arms as f64; arms - 1],
        );
        objective.score(leaf, pilot, config)
    };
    let report =
        |(tree, value): (StratificationTree, f64), trace, terminated, generations, warning| {
            FitReport {
                schema: FIT_REPORT_SCHEMA.into(),
                version: crate::VERSION.into(),
                tree,
                objective: value,
                trace,
                terminated,
                generations,
                warning,
                seed: config.ea.seed,
                config: config.clone(),
            }
        };

    let ss = search_space(pilot, space, config)?;
    if config.max_depth == 0 || !ss.has_candidates() {
        let best = trivial();
        let warning = (config.max_depth > 0)
            .then(|| "no candidate split thresholds; returning the depth-0 tree".into());
        return Ok(report(
            best.clone(),
            vec![best.1],
            Termination::Converged,
            0,
            warning,
        ));
    }

    let mut state = EaState::new(pilot, space, config, objective)?;
    let mut terminated = Termination::MaxIterations;
    while state.generation < config.ea.max_iterations {
        state.step();
        if state.converged() {
            terminated = Termination::Converged;
            break;
        }
    }
    let generations = state.generation;
    let trace = std::mem::take(&mut state.trace);
    if state.best.1.is_infinite() {
        let warning = Some(
            "every candidate tree has an infinite objective; returning the depth-0 tree".into(),
        );
        return Ok(report(trivial(), trace, terminated, generations, warning));
    }
    Ok(report(state.best, trace, terminated, generations, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SplitGrid;
    use crate::tree::Node;
    use rand::Rng;

    fn step_pilot(m: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut a = Vec::new();
        let mut x = Vec::new();
        for i in 0..m {
            let xi: f64 = rng.random();
            let ai = i % 2;
            let noise: f64 = rng.random::<f64>() - 0.5;
            let effect = if xi > 0.5 { 4.0 } else { 0.0 };
            y.push(ai as f64 * effect + noise * if xi > 0.5 { 3.0 } else { 0.3 });
            a.push(ai);
            x.push(vec![xi]);
        }
        Sample::new(y, a, x).unwrap()
    }

    fn small_config(depth: usize, seed: u64) -> FitConfig {
        let mut c = FitConfig::with_depth(depth);
        c.ea.population = 60;
        c.ea.seed = seed;
        c.split_grid = SplitGrid::Explicit(vec![vec![0.2, 0.35, 0.5, 0.65, 0.8]]);
        c
    }

    #[test]
    fn finds_the_step() {
        let pilot = step_pilot(200, 1);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let r = fit(&pilot, &space, &small_config(1, 3)).unwrap();
        match r.tree.root() {
            Node::Split { cut, .. } => assert_eq!(cut.threshold, 0.5),
            _ => panic!("expected a split"),
        }
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.trace.len(), r.generations);
    }

    #[test]
    fn deterministic_under_seed() {
        let pilot = step_pilot(120, 2);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let a = fit(&pilot, &space, &small_config(2, 7)).unwrap();
        let b = fit(&pilot, &space, &small_config(2, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn depth_zero_is_direct() {
        let pilot = step_pilot(50, 3);
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let r = fit(&pilot, &space, &small_config(0, 0)).unwrap();
        assert_eq!(r.tree.depth(), 0);
        assert_eq!(r.generations, 0);
        let v = crate::objective::empirical_variance(&r.tree, &pilot, &small_config(0, 0)).unwrap();
        assert_eq!(r.objective, v);
    }

    #[test]
    fn tiny_pilot_falls_back_to_depth_zero() {
        // Every split leaves some stratum with fewer than two rows per arm,
        // so pruning back to the root is the only finite outcome.
        let pilot = Sample::new(
            vec![1.0, 2.0, 3.0, 5.0],
            vec![0, 1, 0, 1],
            vec![vec![0.1], vec![0.2], vec![0.7], vec![0.8]],
        )
        .unwrap();
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let mut c = small_config(1, 0);
        c.ea.max_iterations = 30;
        let r = fit(&pilot, &space, &c).unwrap();
        assert_eq!(r.tree.depth(), 0);
        assert!(r.objective.is_finite());
        assert!(r.warning.is_none());
    }

    #[test]
    fn all_infinite_returns_depth_zero_with_warning() {
        let pilot = Sample::new(
            vec![1.0, 2.0, 3.0],
            vec![0, 1, 0],
            vec![vec![0.1], vec![0.2], vec![0.7]],
        )
        .unwrap();
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let mut c = small_config(1, 0);
        c.ea.max_iterations = 30;
        let r = fit(&pilot, &space, &c).unwrap();
        assert_eq!(r.tree.depth(), 0);
        assert!(r.objective.is_infinite());
        assert!(r.warning.is_some());
    }

    #[test]
    fn mixer_spreads_streams() {
        assert_ne!(mix(0, 0, 1), mix(0, 1, 0));
        assert_ne!(mix(1, 0, 0), mix(0, 0, 0));
    }
}
