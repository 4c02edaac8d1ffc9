//! Benchmark trees for the simulation study.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::space::CovariateSpace;
use crate::tree::{Cell, Cut, Node, StratificationTree};

/// Ad-hoc stratification: at each of `depth` rounds draw a dimension
/// uniformly and split every current stratum at the midpoint of its interval
/// on that dimension. All targets are 0.5.
pub fn make_adhoc_tree(space: Arc<CovariateSpace>, depth: usize, seed: u64) -> StratificationTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims: Vec<usize> = (0..depth)
        .map(|_| rng.random_range(0..space.dim()))
        .collect();
    fn grow(cell: Cell, dims: &[usize]) -> Node {
        match dims.split_first() {
            None => Node::leaf(vec![0.5]),
            Some((&j, rest)) => {
                let cut = Cut::new(j, 0.5 * (cell.lower[j] + cell.upper[j]));
                let (l, r) = cell.children(&cut);
                Node::split(cut, grow(l, rest), grow(r, rest))
            }
        }
    }
    let root = grow(Cell::whole(&space), &dims);
    StratificationTree::new(space, depth, root).expect("midpoint cuts are always admissible")
}

fn split(dim: usize, t: f64, left: Node, right: Node) -> Node {
    Node::split(Cut::new(dim - 1, t), left, right)
}

fn leaves(dim: usize, t: f64, pis: [f64; 2]) -> Node {
    split(dim, t, Node::leaf(vec![pis[0]]), Node::leaf(vec![pis[1]]))
}

/// The reference variance-optimal depth-3 tree for preset model `model`,
/// used as the infeasible benchmark.
pub fn infeasible_tree(model: u8) -> Result<StratificationTree> {
    let (d, root) = match model {
        1 => (
            2,
            split(
                2,
                0.4,
                split(
                    1,
                    0.48,
                    leaves(1, 0.4, [0.17, 0.19]),
                    leaves(1, 0.59, [0.22, 0.54]),
                ),
                split(
                    1,
                    0.4,
                    leaves(2, 0.55, [0.19, 0.39]),
                    leaves(1, 0.56, [0.36, 0.49]),
                ),
            ),
        ),
        2 => (
            10,
            split(
                1,
                0.49,
                split(
                    1,
                    0.4,
                    leaves(2, 0.43, [0.17, 0.19]),
                    leaves(1, 0.44, [0.19, 0.19]),
                ),
                split(
                    1,
                    0.6,
                    leaves(1, 0.53, [0.18, 0.21]),
                    leaves(1, 0.76, [0.53, 0.6]),
                ),
            ),
        ),
        3 => (
            10,
            split(
                1,
                0.4,
                split(
                    2,
                    0.4,
                    leaves(3, 0.4, [0.39, 0.44]),
                    leaves(3, 0.4, [0.43, 0.48]),
                ),
                split(
                    2,
                    0.4,
                    leaves(3, 0.4, [0.43, 0.47]),
                    leaves(3, 0.4, [0.48, 0.49]),
                ),
            ),
        ),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no infeasible tree for model {model}"
            )))
        }
    };
    StratificationTree::new(Arc::new(CovariateSpace::unit_cube(d)), 3, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adhoc_depth_one_cuts_at_half() {
        let t = make_adhoc_tree(Arc::new(CovariateSpace::unit_cube(2)), 1, 5);
        match t.root() {
            Node::Split { cut, .. } => assert_eq!(cut.threshold, 0.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn adhoc_depth_three_has_eight_half_leaves() {
        for seed in 0..20 {
            let t = make_adhoc_tree(Arc::new(CovariateSpace::unit_cube(2)), 3, seed);
            assert_eq!(t.n_leaves(), 8);
            assert!(t.leaf_pis().iter().all(|p| p == &[0.5]));
            for cell in t.leaf_cells() {
                let vol: f64 = cell
                    .lower
                    .iter()
                    .zip(&cell.upper)
                    .map(|(l, u)| u - l)
                    .product();
                assert!((vol - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adhoc_nested_midpoints() {
        // In 1-d every round reuses x1, so the cuts land on the quarter points.
        let t = make_adhoc_tree(Arc::new(CovariateSpace::unit_cube(1)), 2, 0);
        let cuts: Vec<f64> = t.leaf_cells().iter().map(|c| c.upper[0]).collect();
        assert_eq!(cuts, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn infeasible_fixtures() {
        let one = infeasible_tree(1).unwrap();
        match one.root() {
            Node::Split { cut, .. } => assert_eq!((cut.dim, cut.threshold), (1, 0.4)),
            _ => panic!(),
        }
        assert_eq!(one.leaf_pis()[0], &[0.17]);
        assert_eq!(one.n_leaves(), 8);
        let two = infeasible_tree(2).unwrap();
        match two.root() {
            Node::Split { cut, .. } => assert_eq!((cut.dim, cut.threshold), (0, 0.49)),
            _ => panic!(),
        }
        let three = infeasible_tree(3).unwrap();
        let pis: Vec<f64> = three.leaf_pis().iter().map(|p| p[0]).collect();
        assert_eq!(pis, vec![0.39, 0.44, 0.43, 0.48, 0.43, 0.47, 0.48, 0.49]);
        assert!(infeasible_tree(4).is_err());
    }
}
