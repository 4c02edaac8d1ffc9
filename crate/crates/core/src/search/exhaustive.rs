//! Brute-force enumeration of every tree over a small grid.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::config::{FitConfig, SplitGrid};
use crate::error::{Error, Result};
use crate::objective::{TreeObjective, VarianceObjective};
use crate::sample::Sample;
use crate::space::CovariateSpace;
use crate::tree::{Cell, Cut, Node, StratificationTree};

pub const DEFAULT_BUDGET: u128 = 10_000_000;

fn admissible(grid: &[Vec<f64>], cell: &Cell) -> Vec<Cut> {
    grid.iter()
        .enumerate()
        .flat_map(|(j, g)| g.iter().map(move |&t| Cut::new(j, t)))
        .filter(|c| cell.admits(c))
        .collect()
}

/// Number of trees of depth at most `budget` rooted in `cell`.
fn count(grid: &[Vec<f64>], cell: &Cell, budget: usize) -> u128 {
    if budget == 0 {
        return 1;
    }
    let mut total: u128 = 1;
    for cut in admissible(grid, cell) {
        let (l, r) = cell.children(&cut);
        let n = count(grid, &l, budget - 1).saturating_mul(count(grid, &r, budget - 1));
        total = total.saturating_add(n);
    }
    total
}

fn for_each_tree(
    grid: &[Vec<f64>],
    cell: &Cell,
    budget: usize,
    leaf: &Node,
    f: &mut dyn FnMut(Node),
) {
    f(leaf.clone());
    if budget == 0 {
        return;
    }
    for cut in admissible(grid, cell) {
        let (l, r) = cell.children(&cut);
        for_each_tree(grid, &l, budget - 1, leaf, &mut |left| {
            for_each_tree(grid, &r, budget - 1, leaf, &mut |right| {
                f(Node::split(cut, left.clone(), right))
            });
        });
    }
}

/// Number of trees `exhaustive_search` would evaluate.
pub fn tree_count(space: &CovariateSpace, grid: &[Vec<f64>], max_depth: usize) -> u128 {
    count(grid, &Cell::whole(space), max_depth)
}

/// Evaluates every tree of depth at most `max_depth` whose cuts come from
/// `grid` and returns the minimizer of the objective with optimized leaf
/// targets. Ties go to the smallest canonical tree.
pub fn exhaustive_search(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    max_depth: usize,
    grid: &[Vec<f64>],
    config: &FitConfig,
) -> Result<(StratificationTree, f64)> {
    exhaustive_search_with(
        pilot,
        space,
        max_depth,
        grid,
        config,
        DEFAULT_BUDGET,
        &VarianceObjective,
    )
}

pub fn exhaustive_search_with(
    pilot: &Sample,
    space: &Arc<CovariateSpace>,
    max_depth: usize,
    grid: &[Vec<f64>],
    config: &FitConfig,
    budget: u128,
    objective: &dyn TreeObjective,
) -> Result<(StratificationTree, f64)> {
    if grid.len() != space.dim() {
        return Err(Error::InvalidArgument(format!(
            "grid has {} dimensions, space has {}",
            grid.len(),
            space.dim()
        )));
    }
    pilot.check_space(space)?;
    // Normalize the grid the same way the search does.
    let grid = SplitGrid::Explicit(grid.to_vec()).candidates(pilot, space)?;
    let total = tree_count(space, &grid, max_depth);
    if total > budget {
        return Err(Error::BudgetExceeded {
            count: total,
            budget,
        });
    }
    let config = FitConfig {
        max_depth,
        ..config.clone()
    };
    let arms = pilot.arms();
    let leaf = Node::leaf(vec![1.0 / arms as f64; arms - 1]);
    let mut best: Option<(StratificationTree, f64)> = None;
    for_each_tree(&grid, &Cell::whole(space), max_depth, &leaf, &mut |root| {
        let tree =
            StratificationTree::from_parts(space.clone(), max_depth, root).canonical_labels();
        let (tree, value) = objective.score(tree, pilot, &config);
        let replace = match &best {
            None => true,
            Some((bt, bv)) => match value.total_cmp(bv) {
                Ordering::Less => true,
                Ordering::Equal => tree.structure_cmp(bt) == Ordering::Less,
                Ordering::Greater => false,
            },
        };
        if replace {
            best = Some((tree, value));
        }
    });
    Ok(best.expect("the depth-0 tree is always enumerated"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let space = CovariateSpace::unit_cube(1);
        let grid = vec![vec![0.25, 0.5, 0.75]];
        assert_eq!(tree_count(&space, &grid, 0), 1);
        assert_eq!(tree_count(&space, &grid, 1), 4);
        // Depth 2, by root cut:
        // 0.25: left admits nothing (1), right admits {0.5, 0.75} (3).
        // 0.5: left admits {0.25} (2), right admits {0.75} (2).
        // 0.75: left admits {0.25, 0.5} (3), right admits nothing (1).
        assert_eq!(tree_count(&space, &grid, 2), 1 + 3 + 4 + 3);
    }

    #[test]
    fn enumeration_matches_count() {
        let space = CovariateSpace::unit_cube(2);
        let grid = vec![vec![0.3, 0.6], vec![0.5]];
        let mut seen = 0u128;
        for_each_tree(
            &grid,
            &Cell::whole(&space),
            2,
            &Node::leaf(vec![0.5]),
            &mut |_| seen += 1,
        );
        assert_eq!(seen, tree_count(&space, &grid, 2));
    }

    #[test]
    fn budget_is_enforced() {
        let space = Arc::new(CovariateSpace::unit_cube(1));
        let pilot = Sample::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0, 1, 0, 1],
            vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]],
        )
        .unwrap();
        let grid = vec![(1..100).map(|i| i as f64 / 100.0).collect::<Vec<_>>()];
        let err = exhaustive_search_with(
            &pilot,
            &space,
            3,
            &grid,
            &FitConfig::default(),
            1000,
            &VarianceObjective,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { budget: 1000, .. }));
    }
}
