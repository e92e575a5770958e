//! Shared oracles for the integration tests.

#![allow(dead_code)]

use rand::Rng;

use fewboost::booster::GradientPair;
use fewboost::dataset::{BinMapper, BinnedDataset, BinnedFeature};

/// A random node to split: binned features, gradients, the node's rows and
/// the `min_data_in_leaf` in force.
pub struct SplitInstance {
    pub bds: BinnedDataset,
    pub grads: Vec<GradientPair>,
    pub rows: Vec<usize>,
    pub min_leaf: usize,
}

/// Up to `max_rows` rows, `max_features` numeric features with up to
/// `max_bins` value bins each; half the features have about 20% missing.
pub fn random_split_instance(
    rng: &mut impl Rng,
    max_rows: usize,
    max_features: usize,
    max_bins: usize,
) -> SplitInstance {
    let n = rng.random_range(2..=max_rows);
    let n_features = rng.random_range(1..=max_features);
    let min_leaf = [1, 2, 5][rng.random_range(0..3)];
    let features: Vec<BinnedFeature> = (0..n_features)
        .map(|j| {
            let nb: usize = rng.random_range(1..=max_bins);
            let p_missing = if rng.random_bool(0.5) { 0.0 } else { 0.2 };
            let bins = (0..n)
                .map(|_| {
                    if rng.random_bool(p_missing) {
                        nb as u32
                    } else {
                        rng.random_range(0..nb as u32)
                    }
                })
                .collect();
            BinnedFeature {
                name: format!("f{j}"),
                mapper: BinMapper::Numeric {
                    edges: (1..nb).map(|e| e as f64).collect(),
                },
                bins,
            }
        })
        .collect();
    let bds = BinnedDataset {
        features,
        target: vec![0.0; n],
        max_bin: max_bins,
        min_data_in_bin: 1,
    };
    let grads = (0..n)
        .map(|_| GradientPair {
            grad: rng.random_range(-1.0..1.0),
            hess: rng.random_range(0.1..2.0),
        })
        .collect();
    let rows = (0..n).filter(|_| rng.random_bool(0.8)).collect();
    SplitInstance {
        bds,
        grads,
        rows,
        min_leaf,
    }
}

/// Exhaustive search over every (feature, threshold, missing direction) by
/// partitioning rows directly. Ties keep the first candidate in the order
/// feature, threshold, missing-right then missing-left.
pub fn brute_force_split(
    bds: &BinnedDataset,
    grads: &[GradientPair],
    rows: &[usize],
    min_leaf: usize,
) -> Option<(usize, u32, bool, f64)> {
    let mut best: Option<(usize, u32, bool, f64)> = None;
    for (f, feat) in bds.features.iter().enumerate() {
        let missing = feat.mapper.missing_bin();
        for t in 0..feat.mapper.num_value_bins() as u32 {
            for default_left in [false, true] {
                let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
                let (mut gr, mut hr, mut nr) = (0.0, 0.0, 0usize);
                for &r in rows {
                    let b = feat.bins[r];
                    let left = if b == missing { default_left } else { b <= t };
                    if left {
                        gl += grads[r].grad;
                        hl += grads[r].hess;
                        nl += 1;
                    } else {
                        gr += grads[r].grad;
                        hr += grads[r].hess;
                        nr += 1;
                    }
                }
                if nl < min_leaf || nr < min_leaf || nl == 0 || nr == 0 {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - (gl + gr) * (gl + gr) / (hl + hr);
                if gain.is_finite() && gain > 0.0 && best.is_none_or(|b| gain > b.3) {
                    best = Some((f, t, default_left, gain));
                }
            }
        }
    }
    best
}
