//! Population generation and the five variation operators.

use std::sync::Arc;

use rand::Rng;

use crate::space::CovariateSpace;
use crate::tree::{Cell, Cut, Node, StratificationTree};

/// What the operators need to know about the search problem.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub space: Arc<CovariateSpace>,
    /// Sorted candidate thresholds per dimension.
    pub grid: Vec<Vec<f64>>,
    pub max_depth: usize,
    /// Targets given to freshly created leaves before re-optimization.
    pub placeholder: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Split,
    Prune,
    MinorMutation,
    MajorMutation,
    Crossover,
}

const OPERATORS: [Operator; 5] = [
    Operator::Split,
    Operator::Prune,
    Operator::MinorMutation,
    Operator::MajorMutation,
    Operator::Crossover,
];

const ATTEMPTS: usize = 3;

impl SearchSpace {
    /// Grid thresholds strictly inside `(lo, hi)` on dimension `j`.
    fn candidates_between(&self, j: usize, lo: f64, hi: f64) -> &[f64] {
        let g = &self.grid[j];
        let start = g.partition_point(|t| *t <= lo);
        let end = g.partition_point(|t| *t < hi);
        &g[start..end.max(start)]
    }

    fn leaf(&self) -> Node {
        Node::leaf(self.placeholder.clone())
    }

    /// A uniformly random dimension with at least one admissible threshold
    /// in `cell`, and a uniformly random such threshold.
    fn random_cut<R: Rng + ?Sized>(&self, cell: &Cell, rng: &mut R) -> Option<Cut> {
        let dims: Vec<usize> = (0..self.grid.len())
            .filter(|&j| {
                !self
                    .candidates_between(j, cell.lower[j], cell.upper[j])
                    .is_empty()
            })
            .collect();
        if dims.is_empty() {
            return None;
        }
        let j = dims[rng.random_range(0..dims.len())];
        let c = self.candidates_between(j, cell.lower[j], cell.upper[j]);
        Some(Cut::new(j, c[rng.random_range(0..c.len())]))
    }

    pub fn has_candidates(&self) -> bool {
        self.grid.iter().any(|g| !g.is_empty())
    }

    pub(crate) fn finish(&self, root: Node) -> StratificationTree {
        StratificationTree::from_parts(self.space.clone(), self.max_depth, root).canonical_labels()
    }

    pub fn random_depth_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<StratificationTree> {
        let cut = self.random_cut(&Cell::whole(&self.space), rng)?;
        Some(self.finish(Node::split(cut, self.leaf(), self.leaf())))
    }
}

fn cell_at(space: &CovariateSpace, root: &Node, path: &[bool]) -> Cell {
    let mut cell = Cell::whole(space);
    let mut node = root;
    for &go_right in path {
        let Node::Split { cut, left, right } = node else {
            break;
        };
        let (l, r) = cell.children(cut);
        if go_right {
            cell = r;
            node = right;
        } else {
            cell = l;
            node = left;
        }
    }
    cell
}

/// Descends at random until a leaf is reached.
fn walk_to_leaf<R: Rng + ?Sized>(root: &Node, rng: &mut R) -> Vec<bool> {
    let mut path = Vec::new();
    let mut node = root;
    while let Node::Split { left, right, .. } = node {
        let go_right = rng.random_bool(0.5);
        path.push(go_right);
        node = if go_right { right } else { left };
    }
    path
}

/// Descends at random until a node whose children are both leaves.
fn walk_to_prunable<R: Rng + ?Sized>(root: &Node, rng: &mut R) -> Option<Vec<bool>> {
    let mut path = Vec::new();
    let mut node = root;
    loop {
        let Node::Split { left, right, .. } = node else {
            return None;
        };
        let go_right = match (left.is_leaf(), right.is_leaf()) {
            (true, true) => return Some(path),
            (true, false) => true,
            (false, true) => false,
            (false, false) => rng.random_bool(0.5),
        };
        path.push(go_right);
        node = if go_right { right } else { left };
    }
}

/// Takes a uniform number of random steps in `0..height` through internal
/// nodes and returns the internal node reached.
fn walk_to_internal<R: Rng + ?Sized>(root: &Node, rng: &mut R) -> Option<Vec<bool>> {
    let height = root.height();
    if height == 0 {
        return None;
    }
    let steps = rng.random_range(0..height);
    let mut path = Vec::new();
    let mut node = root;
    for _ in 0..steps {
        let Node::Split { left, right, .. } = node else {
            unreachable!()
        };
        let go_right = match (left.is_leaf(), right.is_leaf()) {
            (true, true) => break,
            (true, false) => true,
            (false, true) => false,
            (false, false) => rng.random_bool(0.5),
        };
        path.push(go_right);
        node = if go_right { right } else { left };
    }
    Some(path)
}

/// Takes a uniform number of random steps in `0..=height`, stopping early at
/// a leaf.
fn walk_any<R: Rng + ?Sized>(root: &Node, rng: &mut R) -> Vec<bool> {
    let steps = rng.random_range(0..=root.height());
    let mut path = Vec::new();
    let mut node = root;
    for _ in 0..steps {
        let Node::Split { left, right, .. } = node else {
            break;
        };
        let go_right = rng.random_bool(0.5);
        path.push(go_right);
        node = if go_right { right } else { left };
    }
    path
}

/// Replaces by a leaf every subtree whose cut is not admissible in its cell
/// or that lies below the depth limit.
fn repair(node: Node, cell: &Cell, budget: usize, ss: &SearchSpace) -> Node {
    match node {
        Node::Leaf { .. } => node,
        Node::Split { cut, left, right } => {
            if budget == 0 || !cell.admits(&cut) {
                return ss.leaf();
            }
            let (l, r) = cell.children(&cut);
            Node::split(
                cut,
                repair(*left, &l, budget - 1, ss),
                repair(*right, &r, budget - 1, ss),
            )
        }
    }
}

fn is_valid(node: &Node, cell: &Cell) -> bool {
    match node {
        Node::Leaf { .. } => true,
        Node::Split { cut, left, right } => {
            if !cell.admits(cut) {
                return false;
            }
            let (l, r) = cell.children(cut);
            is_valid(left, &l) && is_valid(right, &r)
        }
    }
}

/// Range of thresholds on `dim` that keeps every descendant cut on `dim`
/// admissible: above all cuts in the left subtree, below all in the right.
fn descendant_bounds(node: &Node, dim: usize, lo: &mut f64, hi: &mut f64, side_left: bool) {
    if let Node::Split { cut, left, right } = node {
        if cut.dim == dim {
            if side_left {
                *lo = lo.max(cut.threshold);
            } else {
                *hi = hi.min(cut.threshold);
            }
        }
        descendant_bounds(left, dim, lo, hi, side_left);
        descendant_bounds(right, dim, lo, hi, side_left);
    }
}

pub(crate) fn split<R: Rng + ?Sized>(root: &Node, ss: &SearchSpace, rng: &mut R) -> Option<Node> {
    for _ in 0..ATTEMPTS {
        let path = walk_to_leaf(root, rng);
        if path.len() >= ss.max_depth {
            continue;
        }
        let cell = cell_at(&ss.space, root, &path);
        let Some(cut) = ss.random_cut(&cell, rng) else {
            continue;
        };
        let mut out = root.clone();
        *out.at_mut(&path).expect("path from walk") = Node::split(cut, ss.leaf(), ss.leaf());
        return Some(out);
    }
    minor_mutation(root, ss, rng)
}

pub(crate) fn prune<R: Rng + ?Sized>(root: &Node, ss: &SearchSpace, rng: &mut R) -> Option<Node> {
    let path = walk_to_prunable(root, rng)?;
    let mut out = root.clone();
    *out.at_mut(&path).expect("path from walk") = ss.leaf();
    Some(out)
}

pub(crate) fn minor_mutation<R: Rng + ?Sized>(
    root: &Node,
    ss: &SearchSpace,
    rng: &mut R,
) -> Option<Node> {
    let path = walk_to_internal(root, rng)?;
    let cell = cell_at(&ss.space, root, &path);
    let Some(Node::Split { cut, left, right }) = root.at(&path) else {
        unreachable!()
    };
    let (mut lo, mut hi) = (cell.lower[cut.dim], cell.upper[cut.dim]);
    descendant_bounds(left, cut.dim, &mut lo, &mut hi, true);
    descendant_bounds(right, cut.dim, &mut lo, &mut hi, false);
    let options: Vec<f64> = ss
        .candidates_between(cut.dim, lo, hi)
        .iter()
        .copied()
        .filter(|t| *t != cut.threshold)
        .collect();
    if options.is_empty() {
        return None;
    }
    let threshold = options[rng.random_range(0..options.len())];
    let mut out = root.clone();
    if let Some(Node::Split { cut, .. }) = out.at_mut(&path) {
        cut.threshold = threshold;
    }
    Some(out)
}

pub(crate) fn major_mutation<R: Rng + ?Sized>(
    root: &Node,
    ss: &SearchSpace,
    rng: &mut R,
) -> Option<Node> {
    for attempt in 0..ATTEMPTS {
        let path = walk_to_internal(root, rng)?;
        let cell = cell_at(&ss.space, root, &path);
        let cut = ss.random_cut(&cell, rng)?;
        let mut out = root.clone();
        let node = out.at_mut(&path).expect("path from walk");
        let Node::Split { cut: old, .. } = node else {
            unreachable!()
        };
        *old = cut;
        if is_valid(node, &cell) {
            return Some(out);
        }
        if attempt + 1 == ATTEMPTS {
            let taken = std::mem::replace(node, ss.leaf());
            *node = repair(taken, &cell, ss.max_depth - path.len(), ss);
            return Some(out);
        }
    }
    None
}

pub(crate) fn crossover<R: Rng + ?Sized>(
    root: &Node,
    other: &Node,
    ss: &SearchSpace,
    rng: &mut R,
) -> Option<Node> {
    let target = walk_any(root, rng);
    let donor = walk_any(other, rng);
    let graft = other.at(&donor).expect("path from walk").clone();
    let mut out = root.clone();
    *out.at_mut(&target).expect("path from walk") = graft;
    Some(repair(out, &Cell::whole(&ss.space), ss.max_depth, ss))
}

/// Applies one uniformly chosen operator. `None` means the operator left
/// the tree unchanged.
pub fn vary<R: Rng + ?Sized>(
    parent: &StratificationTree,
    population: &[&StratificationTree],
    ss: &SearchSpace,
    rng: &mut R,
) -> Option<StratificationTree> {
    let op = OPERATORS[rng.random_range(0..OPERATORS.len())];
    apply(op, parent, population, ss, rng)
}

pub fn apply<R: Rng + ?Sized>(
    op: Operator,
    parent: &StratificationTree,
    population: &[&StratificationTree],
    ss: &SearchSpace,
    rng: &mut R,
) -> Option<StratificationTree> {
    let root = parent.root();
    let out = match op {
        Operator::Split => split(root, ss, rng),
        Operator::Prune => prune(root, ss, rng),
        Operator::MinorMutation => minor_mutation(root, ss, rng),
        Operator::MajorMutation => major_mutation(root, ss, rng),
        Operator::Crossover => {
            if population.is_empty() {
                return None;
            }
            let other = population[rng.random_range(0..population.len())];
            crossover(root, other.root(), ss, rng)
        }
    }?;
    Some(ss.finish(out))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ss(d: usize, grid: Vec<Vec<f64>>, max_depth: usize) -> SearchSpace {
        SearchSpace {
            space: Arc::new(CovariateSpace::unit_cube(d)),
            grid,
            max_depth,
            placeholder: vec![0.5],
        }
    }

    fn check_valid(t: &StratificationTree, s: &SearchSpace) {
        assert!(t.depth() <= s.max_depth);
        assert!(is_valid(t.root(), &Cell::whole(&s.space)));
        let labels: Vec<usize> = (0..t.n_leaves()).collect();
        assert_eq!(labels.len(), t.leaf_cells().len());
        assert_eq!(t.clone().canonical_labels(), *t);
    }

    #[test]
    fn split_on_depth_zero_gives_depth_one() {
        let s = ss(1, vec![vec![0.3, 0.6]], 2);
        let t = s.finish(Node::leaf(vec![0.5]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = apply(Operator::Split, &t, &[], &s, &mut rng).unwrap();
        assert_eq!(out.depth(), 1);
    }

    #[test]
    fn prune_depth_one_gives_depth_zero() {
        let s = ss(1, vec![vec![0.3, 0.6]], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = s.random_depth_one(&mut rng).unwrap();
        let out = apply(Operator::Prune, &t, &[], &s, &mut rng).unwrap();
        assert_eq!(out.depth(), 0);
        assert!(apply(Operator::Prune, &out, &[], &s, &mut rng).is_none());
    }

    #[test]
    fn generated_cuts_come_from_grid() {
        let s = ss(1, vec![vec![0.2, 0.5, 0.8]], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t = s.random_depth_one(&mut rng).unwrap();
            let Node::Split { cut, .. } = t.root() else {
                panic!()
            };
            assert!(s.grid[0].contains(&cut.threshold));
        }
    }

    #[test]
    fn minor_mutation_keeps_shape() {
        let s = ss(
            2,
            vec![vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]; 2],
            3,
        );
        let root = Node::split(
            Cut::new(0, 0.5),
            Node::split(
                Cut::new(1, 0.3),
                Node::leaf(vec![0.5]),
                Node::leaf(vec![0.5]),
            ),
            Node::split(
                Cut::new(0, 0.8),
                Node::leaf(vec![0.5]),
                Node::leaf(vec![0.5]),
            ),
        );
        let t = s.finish(root);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let out = apply(Operator::MinorMutation, &t, &[], &s, &mut rng).unwrap();
            check_valid(&out, &s);
            assert_eq!(out.root().n_internal(), 3);
            let dims = |n: &Node| {
                let mut v = Vec::new();
                fn go(n: &Node, v: &mut Vec<usize>) {
                    if let Node::Split { cut, left, right } = n {
                        v.push(cut.dim);
                        go(left, v);
                        go(right, v);
                    }
                }
                go(n, &mut v);
                v.sort();
                v
            };
            assert_eq!(dims(out.root()), dims(t.root()));
            let changed = t
                .leaf_cells()
                .iter()
                .zip(out.leaf_cells())
                .filter(|(a, b)| **a != *b)
                .count();
            assert!(changed >= 1);
        }
    }

    #[test]
    fn random_operators_keep_trees_valid() {
        let s = ss(2, vec![vec![0.15, 0.35, 0.5, 0.65, 0.85]; 2], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pop: Vec<StratificationTree> = (0..20)
            .map(|_| s.random_depth_one(&mut rng).unwrap())
            .collect();
        for _ in 0..200 {
            let snapshot = pop.clone();
            let refs: Vec<&StratificationTree> = snapshot.iter().collect();
            for t in pop.iter_mut() {
                if let Some(child) = vary(t, &refs, &s, &mut rng) {
                    check_valid(&child, &s);
                    *t = child;
                }
            }
        }
    }
}
