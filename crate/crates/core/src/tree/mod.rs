//! Leaf-wise regression trees over binned features.

mod histogram;
mod split;

pub use histogram::{build_histogram, BinStats, FeatureHistogram, NodeStats};
pub use split::{
    categorical_random_split, categorical_split, children_score, extra_random_split,
    find_best_split, improves, leaf_score, split_gain, uses_one_vs_other, variance_gain,
    SplitCandidate, SplitRule, GAIN_TIE_TOLERANCE,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::booster::{GradientPair, Params};
use crate::dataset::BinnedDataset;

/// Leaf outputs are clamped to this magnitude.
pub const MAX_LEAF_VALUE: f64 = 1e4;

/// Newton step `-G/H`, clamped; `0` for an empty or gradient-free leaf.
pub fn leaf_value(sum_grad: f64, sum_hess: f64) -> f64 {
    let v = -sum_grad / sum_hess;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-MAX_LEAF_VALUE, MAX_LEAF_VALUE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        /// Bin index that marks missing values for this feature.
        missing_bin: u32,
        rule: SplitRule,
        gain: f64,
        n_left: usize,
        n_right: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// A single tree stored as nested nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
    pub num_leaves_used: usize,
}

impl Tree {
    pub fn single_leaf(value: f64, count: usize) -> Self {
        Tree {
            root: Node::Leaf { value, count },
            num_leaves_used: 1,
        }
    }

    /// Output for one row, given a lookup from feature index to bin.
    pub fn predict_bins(&self, bin_of: impl Fn(usize) -> u32) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    missing_bin,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    node = if rule.goes_left(bin_of(*feature), *missing_bin) {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn is_single_leaf(&self) -> bool {
        matches!(self.root, Node::Leaf { .. })
    }

    /// All internal nodes, pre-order.
    pub fn splits(&self) -> Vec<&Node> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if let Node::Split { left, right, .. } = node {
                out.push(node);
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                Node::Leaf { value, count } => out.push((*value, *count)),
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn depth(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }
}

/// Best split of a node over `features`; ties go to the lowest feature index.
pub fn best_split_for_node<R: Rng + ?Sized>(
    bds: &BinnedDataset,
    grads: &[GradientPair],
    node: &NodeStats,
    features: &[usize],
    params: &Params,
    rng: &mut R,
) -> Option<SplitCandidate> {
    if node.n() < 2 * params.min_data_in_leaf {
        return None;
    }
    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        let hist = build_histogram(bds, f, node, grads);
        let categorical = bds.features[f].mapper.is_categorical();
        let candidate = match (categorical, params.extra_trees) {
            (false, false) => find_best_split(&hist, f, node, params),
            (false, true) => extra_random_split(&hist, f, node, params, rng),
            (true, false) => categorical_split(&hist, f, node, params),
            (true, true) => categorical_random_split(&hist, f, node, params, rng),
        };
        if let Some(c) = candidate {
            if best.as_ref().is_none_or(|b| improves(c.gain, b.gain)) {
                best = Some(c);
            }
        }
    }
    best
}

enum ArenaNode {
    Leaf(NodeStats),
    Split {
        candidate: SplitCandidate,
        left: usize,
        right: usize,
    },
}

/// Grows one tree best-first: the frontier leaf with the largest gain is
/// split until `num_leaves` leaves exist or no leaf can be split.
pub fn grow_tree<R: Rng + ?Sized>(
    bds: &BinnedDataset,
    grads: &[GradientPair],
    rows: &[usize],
    features: &[usize],
    params: &Params,
    rng: &mut R,
) -> Tree {
    let root = NodeStats::new(rows.to_vec(), grads);
    let mut arena = vec![ArenaNode::Leaf(root)];
    // (arena index, pending split) for splittable leaves.
    let mut frontier: Vec<(usize, SplitCandidate)> = Vec::new();
    if let ArenaNode::Leaf(stats) = &arena[0] {
        if let Some(c) = best_split_for_node(bds, grads, stats, features, params, rng) {
            frontier.push((0, c));
        }
    }
    let mut num_leaves = 1;

    while num_leaves < params.num_leaves {
        let Some(pos) = frontier
            .iter()
            .enumerate()
            .fold(None::<usize>, |best, (i, (_, c))| match best {
                Some(b) if frontier[b].1.gain >= c.gain => Some(b),
                _ => Some(i),
            })
        else {
            break;
        };
        let (id, candidate) = frontier.remove(pos);
        let ArenaNode::Leaf(stats) = std::mem::replace(
            &mut arena[id],
            ArenaNode::Split {
                candidate: candidate.clone(),
                left: 0,
                right: 0,
            },
        ) else {
            unreachable!("frontier only holds leaves")
        };

        let feature = &bds.features[candidate.feature];
        let missing_bin = feature.mapper.missing_bin();
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = stats
            .rows
            .iter()
            .partition(|&&r| candidate.rule.goes_left(feature.bins[r], missing_bin));
        debug_assert_eq!(left_rows.len(), candidate.n_left());

        let mut children = [0usize; 2];
        for (slot, child_rows) in [left_rows, right_rows].into_iter().enumerate() {
            let child = NodeStats::new(child_rows, grads);
            let split = best_split_for_node(bds, grads, &child, features, params, rng);
            let child_id = arena.len();
            arena.push(ArenaNode::Leaf(child));
            if let Some(c) = split {
                frontier.push((child_id, c));
            }
            children[slot] = child_id;
        }
        if let ArenaNode::Split { left, right, .. } = &mut arena[id] {
            *left = children[0];
            *right = children[1];
        }
        num_leaves += 1;
    }

    Tree {
        root: nest(&arena, 0, bds),
        num_leaves_used: num_leaves,
    }
}

fn nest(arena: &[ArenaNode], id: usize, bds: &BinnedDataset) -> Node {
    match &arena[id] {
        ArenaNode::Leaf(stats) => Node::Leaf {
            value: leaf_value(stats.sum_grad, stats.sum_hess),
            count: stats.n(),
        },
        ArenaNode::Split {
            candidate,
            left,
            right,
        } => Node::Split {
            feature: candidate.feature,
            missing_bin: bds.features[candidate.feature].mapper.missing_bin(),
            rule: candidate.rule.clone(),
            gain: candidate.gain,
            n_left: candidate.n_left(),
            n_right: candidate.n_right(),
            left: Box::new(nest(arena, *left, bds)),
            right: Box::new(nest(arena, *right, bds)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{bin_features, Dataset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(grads: &[f64]) -> Vec<GradientPair> {
        grads
            .iter()
            .map(|&g| GradientPair { grad: g, hess: 1.0 })
            .collect()
    }

    fn six_rows() -> BinnedDataset {
        let ds = Dataset::from_numeric(
            vec![("x".into(), (1..=6).map(f64::from).collect())],
            vec![0.0; 6],
        )
        .unwrap();
        bin_features(&ds, 255, 1)
    }

    fn greedy(min_data_in_leaf: usize, num_leaves: usize) -> Params {
        Params {
            min_data_in_leaf,
            num_leaves,
            extra_trees: false,
            ..Params::default()
        }
    }

    #[test]
    fn closed_gate_gives_single_leaf() {
        let bds = six_rows();
        let grads = unit(&[1., 1., 1., -1., -1., 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = grow_tree(
            &bds,
            &grads,
            &[0, 1, 2, 3, 4, 5],
            &[0],
            &greedy(20, 31),
            &mut rng,
        );
        assert!(tree.is_single_leaf());
        let g: f64 = grads.iter().map(|g| g.grad).sum();
        assert_eq!(tree.leaves(), vec![(-g / 6.0, 6)]);
    }

    #[test]
    fn hand_instance_grows_a_stump() {
        let bds = six_rows();
        let grads = unit(&[1., 1., 1., -1., -1., -1.]);
        let rows: Vec<usize> = (0..6).collect();
        for num_leaves in [2, 4] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let tree = grow_tree(&bds, &grads, &rows, &[0], &greedy(1, num_leaves), &mut rng);
            assert_eq!(tree.depth(), 1);
            assert_eq!(tree.num_leaves_used, 2);
            assert_eq!(tree.leaves(), vec![(-1.0, 3), (1.0, 3)]);
        }
    }

    #[test]
    fn leaf_budget_is_respected() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols = (0..3)
            .map(|j| {
                (
                    format!("x{j}"),
                    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
                )
            })
            .collect();
        let ds = Dataset::from_numeric(cols, vec![0.0; n]).unwrap();
        let bds = bin_features(&ds, 16, 3);
        let grads: Vec<GradientPair> = (0..n)
            .map(|_| GradientPair {
                grad: rng.random_range(-1.0..1.0),
                hess: 1.0,
            })
            .collect();
        let rows: Vec<usize> = (0..n).collect();
        let params = crate::fsl::fsl_preset();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = grow_tree(&bds, &grads, &rows, &[0, 1, 2], &params, &mut rng);
            assert!(tree.num_leaves_used <= 4);
            assert_eq!(tree.leaves().len(), tree.num_leaves_used);
            for s in tree.splits() {
                if let Node::Split {
                    n_left, n_right, ..
                } = s
                {
                    assert!(*n_left >= 1 && *n_right >= 1);
                }
            }
        }
    }

    #[test]
    fn leaf_values_are_clamped() {
        assert_eq!(leaf_value(-1.0, 0.0), MAX_LEAF_VALUE);
        assert_eq!(leaf_value(1.0, 1e-12), -MAX_LEAF_VALUE);
        assert_eq!(leaf_value(0.0, 0.0), 0.0);
        assert_eq!(leaf_value(2.0, 4.0), -0.5);
    }
}
