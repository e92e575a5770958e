//! Property tests for split search and tree growth.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_split, random_split_instance, SplitInstance};
use fewboost::booster::{train, GradientPair, Objective, Params};
use fewboost::dataset::{bin_features, BinMapper, BinnedDataset, BinnedFeature};
use fewboost::synth::{binary_classification, mixed_classification};
use fewboost::tree::{
    best_split_for_node, build_histogram, children_score, find_best_split, split_gain,
    variance_gain, BinStats, FeatureHistogram, Node, NodeStats, SplitRule,
};

/// Routes `rows` through `node`, checking every split's stored counts
/// against the rows that actually reach each side.
fn audit(node: &Node, bds: &BinnedDataset, rows: &[usize], min_leaf: usize) -> Result<(), String> {
    match node {
        Node::Leaf { count, .. } => {
            if *count != rows.len() {
                return Err(format!("leaf count {count} but {} rows arrive", rows.len()));
            }
            Ok(())
        }
        Node::Split {
            feature,
            missing_bin,
            rule,
            n_left,
            n_right,
            left,
            right,
            ..
        } => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&i| rule.goes_left(bds.features[*feature].bins[i], *missing_bin));
            if l.len() != *n_left || r.len() != *n_right {
                return Err(format!(
                    "stored ({n_left}, {n_right}) vs routed ({}, {})",
                    l.len(),
                    r.len()
                ));
            }
            if l.len().min(r.len()) < min_leaf {
                return Err(format!(
                    "child of size {} under min_data_in_leaf {min_leaf}",
                    l.len().min(r.len())
                ));
            }
            audit(left, bds, &l, min_leaf)?;
            audit(right, bds, &r, min_leaf)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gate_soundness(
        seed in any::<u64>(),
        n in 8usize..120,
        min_leaf in 1usize..12,
        extra in any::<bool>(),
        mixed in any::<bool>(),
    ) {
        let ds = if mixed { mixed_classification(n, seed) } else { binary_classification(n, 4, 2, seed) };
        prop_assume!(ds.target().contains(&1.0) && ds.target().contains(&0.0));
        let params = Params {
            min_data_in_leaf: min_leaf,
            extra_trees: extra,
            num_leaves: 6,
            n_rounds: 8,
            min_data_per_group: 1,
            max_cat_to_onehot: 2,
            seed,
            ..Params::default()
        };
        let bds = bin_features(&ds, params.max_bin, params.min_data_in_bin);
        let model = train(&bds, &params).unwrap();
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        for tree in &model.trees {
            prop_assert!(tree.leaves().len() <= params.num_leaves);
            if let Err(e) = audit(&tree.root, &bds, &rows, min_leaf) {
                prop_assert!(false, "{}", e);
            }
        }
    }

    #[test]
    fn gate_completeness(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let SplitInstance { bds, grads, rows, min_leaf } = random_split_instance(&mut rng, 40, 1, 12);
        let node = NodeStats::new(rows.clone(), &grads);
        let hist = build_histogram(&bds, 0, &node, &grads);
        let params = Params { min_data_in_leaf: min_leaf, ..Params::default() };
        let found = find_best_split(&hist, 0, &node, &params).is_some();

        // Any value-bin threshold and missing direction leaving both sides
        // with at least `min_leaf` rows.
        let feat = &bds.features[0];
        let missing = feat.mapper.missing_bin();
        let admissible = (0..feat.mapper.num_value_bins() as u32).any(|t| {
            [false, true].iter().any(|&dl| {
                let left = rows
                    .iter()
                    .filter(|&&r| {
                        let b = feat.bins[r];
                        if b == missing { dl } else { b <= t }
                    })
                    .count();
                left >= min_leaf && rows.len() - left >= min_leaf
            })
        });
        // Random gradients make every admissible split's gain positive.
        prop_assert_eq!(found, admissible);
    }

    #[test]
    fn unit_hessian_gain_forms_agree(seed in any::<u64>(), n_bins in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = FeatureHistogram::zeros(n_bins);
        for b in &mut hist.bins {
            for _ in 0..rng.random_range(1..5) {
                b.add(GradientPair { grad: rng.random_range(-1.0..1.0), hess: 1.0 });
            }
        }
        let total = hist.total();
        let n = total.count as f64;
        let mut hess_form = Vec::new();
        let mut var_form = Vec::new();
        let mut left = BinStats::default();
        for b in &hist.bins[..n_bins - 1] {
            left.merge(b);
            let right = total.minus(&left);
            let children = children_score(&left, &right, 0.0);
            let v = variance_gain(&left, &right);
            prop_assert!((children - n * v).abs() <= 1e-9 * children.abs().max(1.0));
            hess_form.push(split_gain(&left, &right, 0.0));
            var_form.push(v);
        }
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] + 1e-12 { i } else { b });
        prop_assert_eq!(argmax(&hess_form), argmax(&var_form));
    }

    #[test]
    fn gain_is_never_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| BinStats {
            sum_grad: rng.random_range(-5.0..5.0),
            sum_hess: rng.random_range(0.01..5.0),
            count: 1,
        };
        let (l, r) = (mk(&mut rng), mk(&mut rng));
        let scale = l.sum_grad.powi(2) / l.sum_hess + r.sum_grad.powi(2) / r.sum_hess;
        prop_assert!(split_gain(&l, &r, 0.0) >= -1e-12 * scale.max(1.0));

        let SplitInstance { bds, grads, rows, min_leaf } = random_split_instance(&mut rng, 64, 5, 16);
        let node = NodeStats::new(rows, &grads);
        let params = Params { min_data_in_leaf: min_leaf, ..Params::default() };
        let features: Vec<usize> = (0..bds.n_features()).collect();
        if let Some(c) = best_split_for_node(&bds, &grads, &node, &features, &params, &mut rng) {
            prop_assert!(c.gain > 0.0);
        }
    }

    #[test]
    fn oracle_equivalence(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let SplitInstance { bds, grads, rows, min_leaf } = random_split_instance(&mut rng, 64, 5, 16);
        let node = NodeStats::new(rows.clone(), &grads);
        let params = Params { min_data_in_leaf: min_leaf, ..Params::default() };
        let features: Vec<usize> = (0..bds.n_features()).collect();
        let got = best_split_for_node(&bds, &grads, &node, &features, &params, &mut rng)
            .map(|c| (c.feature, c.rule, c.gain));
        let want = brute_force_split(&bds, &grads, &rows, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some((f, rule, gain)), Some((wf, t, dl, wgain))) => {
                prop_assert_eq!(f, wf);
                prop_assert_eq!(rule, SplitRule::Threshold { threshold_bin: t, default_left: dl });
                prop_assert!((gain - wgain).abs() <= 1e-9);
            }
            (g, w) => prop_assert!(false, "got {:?}, brute force {:?}", g, w),
        }
    }

    #[test]
    fn monotone_relabel_keeps_partition(seed in any::<u64>(), gaps in prop::collection::vec(0u32..3, 16)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let SplitInstance { bds, grads, rows, min_leaf } = random_split_instance(&mut rng, 64, 5, 16);
        let params = Params { min_data_in_leaf: min_leaf, ..Params::default() };

        // Strictly increasing map: bin b -> b + sum of the first b+1 gaps.
        let relabeled = BinnedDataset {
            features: bds
                .features
                .iter()
                .map(|f| {
                    let nb = f.mapper.num_value_bins();
                    let map: Vec<u32> = (0..nb).map(|b| b as u32 + gaps[..=b].iter().sum::<u32>()).collect();
                    let new_nb = map.last().map_or(0, |m| *m as usize + 1);
                    BinnedFeature {
                        name: f.name.clone(),
                        mapper: BinMapper::Numeric { edges: (1..new_nb).map(|e| e as f64).collect() },
                        bins: f
                            .bins
                            .iter()
                            .map(|&b| if b as usize == nb { new_nb as u32 } else { map[b as usize] })
                            .collect(),
                    }
                })
                .collect(),
            ..bds.clone()
        };

        let side = |ds: &BinnedDataset| {
            let node = NodeStats::new(rows.clone(), &grads);
            let features: Vec<usize> = (0..ds.n_features()).collect();
            best_split_for_node(ds, &grads, &node, &features, &params, &mut ChaCha8Rng::seed_from_u64(0)).map(|c| {
                let f = &ds.features[c.feature];
                let missing = f.mapper.missing_bin();
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.iter().copied().partition(|&r| c.rule.goes_left(f.bins[r], missing));
                // Sides may swap when empty bins expose the mirrored rule.
                (c.feature, if left.first() < right.first() { left } else { right })
            })
        };
        prop_assert_eq!(side(&bds), side(&relabeled));
    }

    #[test]
    fn mse_training_is_deterministic(seed in any::<u64>(), extra in any::<bool>()) {
        let ds = binary_classification(60, 4, 2, seed);
        let params = Params {
            objective: Objective::Mse,
            extra_trees: extra,
            min_data_in_leaf: 2,
            bagging_fraction: 0.7,
            bagging_freq: 2,
            feature_fraction: 0.5,
            n_rounds: 10,
            seed,
            ..Params::default()
        };
        let bds = bin_features(&ds, params.max_bin, params.min_data_in_bin);
        let a = train(&bds, &params).unwrap();
        let b = train(&bds, &params).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for (i, log) in a.rounds.iter().enumerate() {
            prop_assert_eq!(log.rows_used, 42, "round {}", i);
        }
    }
}
