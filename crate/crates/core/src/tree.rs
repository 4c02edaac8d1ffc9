//! Stratification trees: recursive axis-aligned partitions of the covariate
//! space with per-leaf treatment assignment targets.
//!
//! A cut `(j, γ)` sends `x` to the left child iff `x_j <= γ`. Leaves are
//! labelled `1..=K` from left to right. Every public constructor returns the
//! canonical representative of the partition (see [`StratificationTree::canonical_labels`]).

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;
use crate::space::CovariateSpace;

pub const TREE_SCHEMA: &str = "strattree.tree/v1";

/// An axis-aligned cut on a 0-based dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cut {
    pub dim: usize,
    pub threshold: f64,
}

impl Cut {
    pub fn new(dim: usize, threshold: f64) -> Self {
        Self { dim, threshold }
    }

    /// Lexicographic order on `(dim, threshold)`.
    pub fn lex_cmp(&self, other: &Cut) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then(self.threshold.total_cmp(&other.threshold))
    }

    fn same(&self, other: &Cut) -> bool {
        self.lex_cmp(other) == Ordering::Equal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// A stratum. `pi[a - 1]` is the target share of treatment `a`; the
    /// control share is `1 - sum(pi)`.
    Leaf { label: usize, pi: Vec<f64> },
    Split {
        cut: Cut,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn leaf(pi: Vec<f64>) -> Self {
        Node::Leaf { label: 0, pi }
    }

    pub fn split(cut: Cut, left: Node, right: Node) -> Self {
        Node::Split {
            cut,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn n_internal(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.n_internal() + right.n_internal(),
        }
    }

    /// Node reached by following `path` (`false` = left, `true` = right).
    pub fn at(&self, path: &[bool]) -> Option<&Node> {
        let mut node = self;
        for &go_right in path {
            node = match node {
                Node::Leaf { .. } => return None,
                Node::Split { left, right, .. } => {
                    if go_right {
                        right
                    } else {
                        left
                    }
                }
            };
        }
        Some(node)
    }

    pub fn at_mut(&mut self, path: &[bool]) -> Option<&mut Node> {
        let mut node = self;
        for &go_right in path {
            node = match node {
                Node::Leaf { .. } => return None,
                Node::Split { left, right, .. } => {
                    if go_right {
                        right
                    } else {
                        left
                    }
                }
            };
        }
        Some(node)
    }

    fn relabel(&mut self, next: &mut usize) {
        match self {
            Node::Leaf { label, .. } => {
                *next += 1;
                *label = *next;
            }
            Node::Split { left, right, .. } => {
                left.relabel(next);
                right.relabel(next);
            }
        }
    }

    fn collect_pis<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        match self {
            Node::Leaf { pi, .. } => out.push(pi),
            Node::Split { left, right, .. } => {
                left.collect_pis(out);
                right.collect_pis(out);
            }
        }
    }

    fn set_pis(&mut self, pis: &mut impl Iterator<Item = Vec<f64>>) {
        match self {
            Node::Leaf { pi, .. } => {
                if let Some(p) = pis.next() {
                    *pi = p;
                }
            }
            Node::Split { left, right, .. } => {
                left.set_pis(pis);
                right.set_pis(pis);
            }
        }
    }

    /// Lexicographic comparison of pre-order shape encodings.
    pub fn structure_cmp(&self, other: &Node) -> Ordering {
        match (self, other) {
            (Node::Leaf { .. }, Node::Leaf { .. }) => Ordering::Equal,
            (Node::Leaf { .. }, Node::Split { .. }) => Ordering::Less,
            (Node::Split { .. }, Node::Leaf { .. }) => Ordering::Greater,
            (
                Node::Split {
                    cut: a,
                    left: al,
                    right: ar,
                },
                Node::Split {
                    cut: b,
                    left: bl,
                    right: br,
                },
            ) => a
                .lex_cmp(b)
                .then_with(|| al.structure_cmp(bl))
                .then_with(|| ar.structure_cmp(br)),
        }
    }

    pub(crate) fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut Vec<f64>)) {
        match self {
            Node::Leaf { pi, .. } => f(pi),
            Node::Split { left, right, .. } => {
                left.for_each_leaf_mut(f);
                right.for_each_leaf_mut(f);
            }
        }
    }

    fn push_key(&self, key: &mut Vec<u64>) {
        match self {
            Node::Leaf { .. } => key.push(0),
            Node::Split { cut, left, right } => {
                key.extend([1 + cut.dim as u64, cut.threshold.to_bits()]);
                left.push_key(key);
                right.push_key(key);
            }
        }
    }
}

/// A box `lower_j < x_j <= upper_j` (closed below on the space boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Cell {
    pub fn whole(space: &CovariateSpace) -> Self {
        let (lower, upper) = (0..space.dim()).map(|j| space.bounds(j)).unzip();
        Self { lower, upper }
    }

    /// Whether `cut` falls strictly inside this cell, so both children are
    /// nonempty.
    pub fn admits(&self, cut: &Cut) -> bool {
        cut.dim < self.lower.len()
            && cut.threshold > self.lower[cut.dim]
            && cut.threshold < self.upper[cut.dim]
    }

    pub fn children(&self, cut: &Cut) -> (Cell, Cell) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[cut.dim] = cut.threshold;
        right.lower[cut.dim] = cut.threshold;
        (left, right)
    }

    pub fn contains_cell(&self, other: &Cell) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&other.upper).all(|(a, b)| b <= a)
    }
}

/// A tree partition of the covariate space paired with per-stratum
/// assignment targets.
#[derive(Debug, Clone, PartialEq)]
pub struct StratificationTree {
    root: Node,
    max_depth: usize,
    space: Arc<CovariateSpace>,
}

impl StratificationTree {
    /// Validates `root` against `space` and the depth limit and returns the
    /// canonical representative.
    pub fn new(space: Arc<CovariateSpace>, max_depth: usize, root: Node) -> Result<Self> {
        validate_node(&root, &Cell::whole(&space), max_depth, None)?;
        Ok(Self {
            root,
            max_depth,
            space,
        }
        .canonical_labels())
    }

    /// The depth-0 tree: one stratum covering the whole space.
    pub fn single_leaf(space: Arc<CovariateSpace>, max_depth: usize, pi: Vec<f64>) -> Self {
        Self {
            root: Node::Leaf { label: 1, pi },
            max_depth,
            space,
        }
    }

    /// Builds a tree without canonicalizing; callers must canonicalize.
    pub(crate) fn from_parts(space: Arc<CovariateSpace>, max_depth: usize, root: Node) -> Self {
        Self {
            root,
            max_depth,
            space,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub(crate) fn root_mut(&mut self) -> &mut Node {
        &mut self.root
    }

    pub fn into_root(self) -> Node {
        self.root
    }

    /// Depth limit `L` of the class this tree belongs to.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Result<Self> {
        if self.depth() > max_depth {
            return Err(Error::InvalidTree(format!(
                "tree has depth {} which exceeds {max_depth}",
                self.depth()
            )));
        }
        self.max_depth = max_depth;
        Ok(self.canonical_labels())
    }

    /// Realized depth of the partition.
    pub fn depth(&self) -> usize {
        self.root.height()
    }

    pub fn space(&self) -> &Arc<CovariateSpace> {
        &self.space
    }

    pub fn n_leaves(&self) -> usize {
        self.root.n_leaves()
    }

    /// Number of treated arms `J` (length of each leaf's target vector).
    pub fn treated_arms(&self) -> usize {
        self.leaf_pis().first().map(|p| p.len()).unwrap_or(1)
    }

    /// Leaf targets in label order.
    pub fn leaf_pis(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.n_leaves());
        self.root.collect_pis(&mut out);
        out
    }

    /// Replaces leaf targets, in label order.
    pub fn with_leaf_pis(mut self, pis: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(pis.len(), self.n_leaves());
        self.root.set_pis(&mut pis.into_iter());
        self
    }

    /// Stratum label of `x`, checking it against the covariate space.
    pub fn stratum_of(&self, x: &[f64]) -> Result<usize> {
        self.space.check(x)?;
        Ok(self.leaf_label(x))
    }

    /// Stratum label of `x` without bounds checks.
    #[inline]
    pub fn leaf_label(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label, .. } => return *label,
                Node::Split { cut, left, right } => {
                    node = if x[cut.dim] <= cut.threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Stratum label of every row of `sample`, checking bounds.
    pub fn strata(&self, sample: &Sample) -> Result<Vec<usize>> {
        (0..sample.n())
            .map(|i| self.stratum_of(sample.x(i)))
            .collect()
    }

    /// Cells of the leaves in label order.
    pub fn leaf_cells(&self) -> Vec<Cell> {
        fn walk(node: &Node, cell: Cell, out: &mut Vec<Cell>) {
            match node {
                Node::Leaf { .. } => out.push(cell),
                Node::Split { cut, left, right } => {
                    let (l, r) = cell.children(cut);
                    walk(left, l, out);
                    walk(right, r, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, Cell::whole(&self.space), &mut out);
        out
    }

    /// Relabels leaves left to right and picks the canonical representation
    /// of the partition.
    ///
    /// When two representations induce the same partition, the one whose
    /// root cut is lexicographically smaller wins; ties recurse into the
    /// left subtree first. Two rewrites generate the equivalences: swapping
    /// a root cut with a cut shared by both children, and rotating nested
    /// cuts on the same dimension (only when the depth limit allows).
    pub fn canonical_labels(mut self) -> Self {
        normalize(&mut self.root, self.max_depth);
        let mut next = 0;
        self.root.relabel(&mut next);
        self
    }

    /// Total order on tree shapes (pre-order cuts, leaves before splits).
    pub fn structure_cmp(&self, other: &Self) -> Ordering {
        self.root.structure_cmp(&other.root)
    }

    /// A hashable fingerprint of the partition shape.
    pub fn structure_key(&self) -> Vec<u64> {
        let mut key = Vec::with_capacity(4 * self.n_leaves());
        self.root.push_key(&mut key);
        key
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn validate_node(
    node: &Node,
    cell: &Cell,
    budget: usize,
    arms: Option<usize>,
) -> Result<Option<usize>> {
    match node {
        Node::Leaf { pi, .. } => {
            if pi.is_empty() {
                return Err(Error::InvalidTree("leaf has no assignment targets".into()));
            }
            if let Some(j) = arms {
                if j != pi.len() {
                    return Err(Error::InvalidTree(
                        "leaves disagree on the number of arms".into(),
                    ));
                }
            }
            let total: f64 = pi.iter().sum();
            if pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || !(total < 1.0) {
                return Err(Error::InvalidTree(format!(
                    "leaf targets {pi:?} must lie in (0, 1) and leave a positive control share"
                )));
            }
            Ok(Some(pi.len()))
        }
        Node::Split { cut, left, right } => {
            if budget == 0 {
                return Err(Error::InvalidTree("tree exceeds its depth limit".into()));
            }
            if cut.dim >= cell.lower.len() {
                return Err(Error::InvalidTree(format!(
                    "cut on x{} but the space has {} dimensions",
                    cut.dim + 1,
                    cell.lower.len()
                )));
            }
            if !cell.admits(cut) {
                return Err(Error::InvalidTree(format!(
                    "cut x{} <= {} is not strictly inside its cell ({}, {}]",
                    cut.dim + 1,
                    cut.threshold,
                    cell.lower[cut.dim],
                    cell.upper[cut.dim]
                )));
            }
            let (l, r) = cell.children(cut);
            let arms = validate_node(left, &l, budget - 1, arms)?;
            validate_node(right, &r, budget - 1, arms)
        }
    }
}

fn normalize(node: &mut Node, budget: usize) {
    let child_budget = budget.saturating_sub(1);
    let Node::Split { left, right, .. } = node else {
        return;
    };
    normalize(left, child_budget);
    normalize(right, child_budget);
    while needs_rewrite(node, budget) {
        let taken = std::mem::replace(node, Node::leaf(Vec::new()));
        *node = rewrite(taken, budget).0;
        if let Node::Split { left, right, .. } = node {
            normalize(left, child_budget);
            normalize(right, child_budget);
        }
    }
}

fn needs_rewrite(node: &Node, budget: usize) -> bool {
    let Node::Split { cut, left, right } = node else {
        return false;
    };
    let swap = matches!((&**left, &**right), (Node::Split { cut: lc, .. }, Node::Split { cut: rc, .. })
        if lc.same(rc) && lc.dim != cut.dim && lc.lex_cmp(cut) == Ordering::Less);
    let rotate = match &**left {
        Node::Split {
            cut: lc,
            left: a,
            right: b,
        } if lc.dim == cut.dim => a.height().max(1 + b.height().max(right.height())) < budget,
        _ => false,
    };
    swap || rotate
}

/// Applies the equivalence rewrite yielding the smallest root cut, if it
/// beats the current root cut.
fn rewrite(node: Node, budget: usize) -> (Node, bool) {
    let Node::Split { cut, left, right } = node else {
        return (node, false);
    };

    let swap = match (&*left, &*right) {
        (Node::Split { cut: lc, .. }, Node::Split { cut: rc, .. })
            if lc.same(rc) && lc.dim != cut.dim && lc.lex_cmp(&cut) == Ordering::Less =>
        {
            Some(*lc)
        }
        _ => None,
    };
    let rotate = match &*left {
        Node::Split {
            cut: lc,
            left: a,
            right: b,
        } if lc.dim == cut.dim => {
            let height = 1 + a.height().max(1 + b.height().max(right.height()));
            (height <= budget).then_some(*lc)
        }
        _ => None,
    };

    let use_swap = match (swap, rotate) {
        (Some(s), Some(r)) => s.lex_cmp(&r) != Ordering::Greater,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (None, None) => return (Node::Split { cut, left, right }, false),
    };

    if use_swap {
        let (
            Node::Split {
                cut: inner,
                left: a,
                right: b,
            },
            Node::Split {
                left: c, right: d, ..
            },
        ) = (*left, *right)
        else {
            unreachable!()
        };
        let new = Node::Split {
            cut: inner,
            left: Box::new(Node::Split {
                cut,
                left: a,
                right: c,
            }),
            right: Box::new(Node::Split {
                cut,
                left: b,
                right: d,
            }),
        };
        (new, true)
    } else {
        let Node::Split {
            cut: inner,
            left: a,
            right: b,
        } = *left
        else {
            unreachable!()
        };
        let new = Node::Split {
            cut: inner,
            left: a,
            right: Box::new(Node::Split {
                cut,
                left: b,
                right,
            }),
        };
        (new, true)
    }
}

/// Empirical symmetric-difference distance between two partitions:
/// `(1/n) Σ_i Σ_k |1{S1(X_i)=k} − 1{S2(X_i)=k}|` over the reference rows.
pub fn tree_distance(
    t1: &StratificationTree,
    t2: &StratificationTree,
    reference: &[Vec<f64>],
) -> Result<f64> {
    if t1.n_leaves() != t2.n_leaves() {
        return Err(Error::InvalidArgument(format!(
            "trees have {} and {} leaves",
            t1.n_leaves(),
            t2.n_leaves()
        )));
    }
    if t1.space().dim() != t2.space().dim() {
        return Err(Error::InvalidArgument(
            "trees live on different covariate spaces".into(),
        ));
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("reference sample is empty".into()));
    }
    let mut differing = 0usize;
    for x in reference {
        if t1.stratum_of(x)? != t2.stratum_of(x)? {
            differing += 1;
        }
    }
    Ok(2.0 * differing as f64 / reference.len() as f64)
}

/// [`tree_distance`] with the covariates of a [`Sample`] as reference.
pub fn tree_distance_on(
    t1: &StratificationTree,
    t2: &StratificationTree,
    reference: &Sample,
) -> Result<f64> {
    let rows: Vec<Vec<f64>> = (0..reference.n())
        .map(|i| reference.x(i).to_vec())
        .collect();
    tree_distance(t1, t2, &rows)
}

impl fmt::Display for StratificationTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(node: &Node, indent: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let pad = "  ".repeat(indent);
            match node {
                Node::Leaf { label, pi } => {
                    let pi: Vec<String> = pi.iter().map(|p| format!("{p:.3}")).collect();
                    writeln!(f, "{pad}stratum {label}: pi = [{}]", pi.join(", "))
                }
                Node::Split { cut, left, right } => {
                    writeln!(f, "{pad}x{} <= {}", cut.dim + 1, cut.threshold)?;
                    walk(left, indent + 1, f)?;
                    writeln!(f, "{pad}x{} > {}", cut.dim + 1, cut.threshold)?;
                    walk(right, indent + 1, f)
                }
            }
        }
        walk(&self.root, 0, f)
    }
}

// JSON layout. Dimensions are 1-based on the wire to match the `x1..xd`
// column names.

#[derive(Serialize, Deserialize)]
struct CutJson {
    dim: usize,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeJson {
    Split {
        cut: CutJson,
        left: Box<NodeJson>,
        right: Box<NodeJson>,
    },
    Leaf {
        leaf: usize,
        pi: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    #[serde(default = "default_schema")]
    schema: String,
    depth: usize,
    space: CovariateSpace,
    root: NodeJson,
}

fn default_schema() -> String {
    TREE_SCHEMA.to_string()
}

impl From<&Node> for NodeJson {
    fn from(node: &Node) -> Self {
        match node {
            Node::Leaf { label, pi } => NodeJson::Leaf {
                leaf: *label,
                pi: pi.clone(),
            },
            Node::Split { cut, left, right } => NodeJson::Split {
                cut: CutJson {
                    dim: cut.dim + 1,
                    threshold: cut.threshold,
                },
                left: Box::new((&**left).into()),
                right: Box::new((&**right).into()),
            },
        }
    }
}

impl NodeJson {
    fn into_node(self) -> Result<Node> {
        Ok(match self {
            NodeJson::Leaf { leaf, pi } => Node::Leaf { label: leaf, pi },
            NodeJson::Split { cut, left, right } => {
                if cut.dim == 0 {
                    return Err(Error::InvalidTree("cut dimensions are 1-based".into()));
                }
                Node::split(
                    Cut::new(cut.dim - 1, cut.threshold),
                    left.into_node()?,
                    right.into_node()?,
                )
            }
        })
    }
}

impl Serialize for StratificationTree {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        TreeJson {
            schema: TREE_SCHEMA.to_string(),
            depth: self.max_depth,
            space: (*self.space).clone(),
            root: (&self.root).into(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StratificationTree {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let raw = TreeJson::deserialize(deserializer)?;
        if raw.schema != TREE_SCHEMA {
            return Err(serde::de::Error::custom(format!(
                "unsupported tree schema {:?}",
                raw.schema
            )));
        }
        let root = raw.root.into_node().map_err(serde::de::Error::custom)?;
        StratificationTree::new(Arc::new(raw.space), raw.depth, root)
            .map_err(serde::de::Error::custom)
    }
}

impl StratificationTree {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidTree(e.to_string()))
    }
}
