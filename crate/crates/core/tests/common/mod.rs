#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use strattree::{Cell, CovariateSpace, Cut, Node, Sample, StratificationTree};

/// Random tree of depth at most `depth` with cuts strictly inside each
/// cell and targets in `[0.1, 0.9]`.
pub fn random_tree<R: Rng>(
    rng: &mut R,
    d: usize,
    depth: usize,
    split_prob: f64,
) -> StratificationTree {
    let space = Arc::new(CovariateSpace::unit_cube(d));
    fn grow<R: Rng>(rng: &mut R, cell: Cell, left: usize, p: f64) -> Node {
        if left > 0 && rng.random_bool(p) {
            let j = rng.random_range(0..cell.lower.len());
            let (lo, hi) = (cell.lower[j], cell.upper[j]);
            let t = lo + (hi - lo) * rng.random_range(0.05..0.95);
            let cut = Cut::new(j, t);
            if cell.admits(&cut) {
                let (l, r) = cell.children(&cut);
                return Node::split(cut, grow(rng, l, left - 1, p), grow(rng, r, left - 1, p));
            }
        }
        Node::leaf(vec![rng.random_range(0.1..0.9)])
    }
    let root = grow(rng, Cell::whole(&space), depth, split_prob);
    StratificationTree::new(space, depth, root).expect("random tree is valid")
}

pub fn uniform_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Two-arm sample with alternating arms and a heterogeneous effect.
pub fn two_arm_sample<R: Rng>(rng: &mut R, n: usize, d: usize) -> Sample {
    let x = uniform_rows(rng, n, d);
    let a: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let y = x
        .iter()
        .zip(&a)
        .map(|(xi, &ai)| {
            let noise: f64 = rng.random_range(-1.0..1.0);
            let effect = if xi[0] > 0.5 { 2.0 } else { -0.5 };
            xi.iter().sum::<f64>() + ai as f64 * effect + noise * (1.0 + xi[0])
        })
        .collect();
    Sample::new(y, a, x).expect("valid sample")
}
