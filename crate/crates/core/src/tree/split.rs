//! Split search over a single feature histogram.
//!
//! Candidate boundaries are enumerated with the cumulative left-to-right scan
//! LightGBM uses: a boundary is skipped while the left child holds fewer than
//! `min_data_in_leaf` rows, and the scan stops as soon as the right child
//! would hold fewer than `min_data_in_leaf` rows. Only boundaries that change
//! the row partition are considered.
//!
//! Gains use the second-order form
//! `G_L^2/H_L + G_R^2/H_R - (G_L+G_R)^2/(H_L+H_R)`. The count-normalised
//! variance form `(G_L^2/n_L + G_R^2/n_R) / n` is exposed as
//! [`variance_gain`]; with unit hessians the children term of the former is
//! exactly `n` times the latter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::histogram::{BinStats, FeatureHistogram, NodeStats};
use crate::booster::Params;

/// How a split routes bins to the left child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    /// Value bins `<= threshold_bin` go left; the missing bin follows
    /// `default_left`.
    Threshold {
        threshold_bin: u32,
        default_left: bool,
    },
    /// The listed category bins go left; every other bin, the missing bin
    /// included, goes right.
    Categories { left_bins: Vec<u32> },
}

impl SplitRule {
    pub fn goes_left(&self, bin: u32, missing_bin: u32) -> bool {
        match self {
            SplitRule::Threshold {
                threshold_bin,
                default_left,
            } => {
                if bin == missing_bin {
                    *default_left
                } else {
                    bin <= *threshold_bin
                }
            }
            SplitRule::Categories { left_bins } => {
                bin != missing_bin && left_bins.binary_search(&bin).is_ok()
            }
        }
    }

    pub fn default_left(&self) -> bool {
        match self {
            SplitRule::Threshold { default_left, .. } => *default_left,
            SplitRule::Categories { .. } => false,
        }
    }
}

/// A scored, admissible split of one node on one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    pub gain: f64,
    pub left: BinStats,
    pub right: BinStats,
}

impl SplitCandidate {
    pub fn n_left(&self) -> usize {
        self.left.count
    }

    pub fn n_right(&self) -> usize {
        self.right.count
    }

    pub fn default_left(&self) -> bool {
        self.rule.default_left()
    }
}

/// `G^2 / H`, the optimal-leaf score of a side.
pub fn leaf_score(sum_grad: f64, sum_hess: f64) -> f64 {
    sum_grad * sum_grad / sum_hess
}

/// Children score `G_L^2/(H_L+l2) + G_R^2/(H_R+l2)`.
pub fn children_score(left: &BinStats, right: &BinStats, l2: f64) -> f64 {
    leaf_score(left.sum_grad, left.sum_hess + l2) + leaf_score(right.sum_grad, right.sum_hess + l2)
}

/// Second-order gain: children score minus the score of the unsplit parent.
pub fn split_gain(left: &BinStats, right: &BinStats, l2: f64) -> f64 {
    let parent = leaf_score(
        left.sum_grad + right.sum_grad,
        left.sum_hess + right.sum_hess + l2,
    );
    children_score(left, right, l2) - parent
}

/// Count-normalised variance gain
/// `V = (1/n) * ((sum_left g)^2 / n_left + (sum_right g)^2 / n_right)`.
pub fn variance_gain(left: &BinStats, right: &BinStats) -> f64 {
    let n = (left.count + right.count) as f64;
    (left.sum_grad * left.sum_grad / left.count as f64
        + right.sum_grad * right.sum_grad / right.count as f64)
        / n
}

#[derive(Debug, Clone)]
struct Scored {
    rule: SplitRule,
    left: BinStats,
    right: BinStats,
    gain: f64,
}

fn finite_positive(gain: f64) -> bool {
    gain.is_finite() && gain > 0.0
}

/// Admissible threshold boundaries in tie-break order: boundary ascending,
/// missing-right before missing-left.
fn threshold_candidates(hist: &FeatureHistogram, min_data_in_leaf: usize) -> Vec<Scored> {
    let total = hist.total();
    let directions: &[bool] = if hist.missing.count > 0 {
        &[false, true]
    } else {
        &[false]
    };
    let mut out = Vec::new();
    for &default_left in directions {
        let mut left = if default_left {
            hist.missing
        } else {
            BinStats::default()
        };
        for (b, stats) in hist.bins.iter().enumerate() {
            left.merge(stats);
            // An empty bin repeats the previous partition, except at the first
            // boundary where missing rows alone may form the left child.
            if stats.count == 0 && (b > 0 || left.count == 0) {
                continue;
            }
            if left.count < min_data_in_leaf {
                continue;
            }
            let right_count = total.count - left.count;
            if right_count < min_data_in_leaf {
                break;
            }
            let right = total.minus(&left);
            out.push(Scored {
                rule: SplitRule::Threshold {
                    threshold_bin: b as u32,
                    default_left,
                },
                left,
                right,
                gain: split_gain(&left, &right, 0.0),
            });
        }
    }
    out.sort_by_key(|s| match s.rule {
        SplitRule::Threshold {
            threshold_bin,
            default_left,
        } => (threshold_bin, default_left),
        SplitRule::Categories { .. } => unreachable!(),
    });
    out
}

/// Relative margin below which two gains count as tied. Equal partitions
/// reached through different summation orders differ only by rounding.
pub const GAIN_TIE_TOLERANCE: f64 = 1e-12;

/// Whether `gain` beats `incumbent` by more than rounding noise.
pub fn improves(gain: f64, incumbent: f64) -> bool {
    gain - incumbent > GAIN_TIE_TOLERANCE * gain.abs().max(incumbent.abs())
}

/// First maximal finite gain in enumeration order.
fn best_of(candidates: impl IntoIterator<Item = Scored>) -> Option<Scored> {
    let mut best: Option<Scored> = None;
    for c in candidates {
        if !c.gain.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| improves(c.gain, b.gain)) {
            best = Some(c);
        }
    }
    best
}

fn finish(feature: usize, scored: Option<Scored>) -> Option<SplitCandidate> {
    scored
        .filter(|s| finite_positive(s.gain))
        .map(|s| SplitCandidate {
            feature,
            rule: s.rule,
            gain: s.gain,
            left: s.left,
            right: s.right,
        })
}

/// Best admissible threshold split of a numeric feature, or `None` when no
/// boundary passes the `min_data_in_leaf` gate or the best gain is not
/// strictly positive.
pub fn find_best_split(
    hist: &FeatureHistogram,
    feature: usize,
    node: &NodeStats,
    params: &Params,
) -> Option<SplitCandidate> {
    debug_assert_eq!(hist.total().count, node.n());
    finish(
        feature,
        best_of(threshold_candidates(hist, params.min_data_in_leaf)),
    )
}

/// Extremely randomized variant: one admissible boundary drawn uniformly at
/// random, then scored. When the node has missing rows the better of the two
/// missing directions at that boundary is kept.
pub fn extra_random_split<R: Rng + ?Sized>(
    hist: &FeatureHistogram,
    feature: usize,
    node: &NodeStats,
    params: &Params,
    rng: &mut R,
) -> Option<SplitCandidate> {
    debug_assert_eq!(hist.total().count, node.n());
    let candidates = threshold_candidates(hist, params.min_data_in_leaf);
    let mut boundaries: Vec<u32> = candidates
        .iter()
        .map(|c| match c.rule {
            SplitRule::Threshold { threshold_bin, .. } => threshold_bin,
            SplitRule::Categories { .. } => unreachable!(),
        })
        .collect();
    boundaries.dedup();
    if boundaries.is_empty() {
        return None;
    }
    let chosen = boundaries[rng.random_range(0..boundaries.len())];
    let at_chosen = candidates.into_iter().filter(
        |c| matches!(c.rule, SplitRule::Threshold { threshold_bin, .. } if threshold_bin == chosen),
    );
    finish(feature, best_of(at_chosen))
}

/// Admissible categorical splits in tie-break order.
///
/// With at most `max_cat_to_onehot` categories present, each category is
/// tried alone on the left (one-vs-other). Otherwise categories holding at
/// least `min_data_per_group` rows are ordered by
/// `sum_grad / (sum_hess + cat_smooth)` and prefixes of that ordering are
/// scanned with `cat_l2` added to every hessian denominator.
fn categorical_candidates(hist: &FeatureHistogram, params: &Params) -> Vec<Scored> {
    let total = hist.total();
    let min_leaf = params.min_data_in_leaf;
    let present: Vec<usize> = (0..hist.bins.len())
        .filter(|&b| hist.bins[b].count > 0)
        .collect();
    let mut out = Vec::new();

    if present.len() <= params.max_cat_to_onehot {
        for &b in &present {
            let left = hist.bins[b];
            let right = total.minus(&left);
            if left.count < min_leaf || right.count < min_leaf {
                continue;
            }
            out.push(Scored {
                rule: SplitRule::Categories {
                    left_bins: vec![b as u32],
                },
                left,
                right,
                gain: split_gain(&left, &right, 0.0),
            });
        }
        return out;
    }

    let mut used: Vec<usize> = present
        .into_iter()
        .filter(|&b| hist.bins[b].count >= params.min_data_per_group)
        .collect();
    let ctr = |b: usize| hist.bins[b].sum_grad / (hist.bins[b].sum_hess + params.cat_smooth);
    used.sort_by(|&a, &b| ctr(a).total_cmp(&ctr(b)).then(a.cmp(&b)));

    let mut left = BinStats::default();
    for i in 0..used.len() {
        left.merge(&hist.bins[used[i]]);
        if left.count < min_leaf {
            continue;
        }
        let right = total.minus(&left);
        if right.count < min_leaf {
            break;
        }
        let mut left_bins: Vec<u32> = used[..=i].iter().map(|&b| b as u32).collect();
        left_bins.sort_unstable();
        out.push(Scored {
            rule: SplitRule::Categories { left_bins },
            left,
            right,
            gain: split_gain(&left, &right, params.cat_l2),
        });
    }
    out
}

/// Best admissible categorical split.
pub fn categorical_split(
    hist: &FeatureHistogram,
    feature: usize,
    node: &NodeStats,
    params: &Params,
) -> Option<SplitCandidate> {
    debug_assert_eq!(hist.total().count, node.n());
    finish(feature, best_of(categorical_candidates(hist, params)))
}

/// Categorical split with one admissible candidate drawn uniformly at random.
pub fn categorical_random_split<R: Rng + ?Sized>(
    hist: &FeatureHistogram,
    feature: usize,
    node: &NodeStats,
    params: &Params,
    rng: &mut R,
) -> Option<SplitCandidate> {
    debug_assert_eq!(hist.total().count, node.n());
    let mut candidates = categorical_candidates(hist, params);
    if candidates.is_empty() {
        return None;
    }
    let pick = rng.random_range(0..candidates.len());
    finish(feature, Some(candidates.swap_remove(pick)))
}

/// Which candidates `categorical_split` would scan, exposed for tests and
/// diagnostics: `true` when the one-vs-other path is taken.
pub fn uses_one_vs_other(hist: &FeatureHistogram, params: &Params) -> bool {
    hist.bins.iter().filter(|b| b.count > 0).count() <= params.max_cat_to_onehot
}
