use serde::{Deserialize, Serialize};

use crate::booster::GradientPair;
use crate::dataset::BinnedDataset;

/// Gradient statistics accumulated over a set of rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub sum_grad: f64,
    pub sum_hess: f64,
    pub count: usize,
}

impl BinStats {
    pub fn add(&mut self, g: GradientPair) {
        self.sum_grad += g.grad;
        self.sum_hess += g.hess;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &BinStats) {
        self.sum_grad += other.sum_grad;
        self.sum_hess += other.sum_hess;
        self.count += other.count;
    }

    pub fn minus(&self, other: &BinStats) -> BinStats {
        BinStats {
            sum_grad: self.sum_grad - other.sum_grad,
            sum_hess: self.sum_hess - other.sum_hess,
            count: self.count - other.count,
        }
    }
}

/// Per-bin statistics of one feature at one node. The missing bin is kept
/// apart from the ordered value bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHistogram {
    pub bins: Vec<BinStats>,
    pub missing: BinStats,
}

impl FeatureHistogram {
    pub fn zeros(num_value_bins: usize) -> Self {
        FeatureHistogram {
            bins: vec![BinStats::default(); num_value_bins],
            missing: BinStats::default(),
        }
    }

    pub fn total(&self) -> BinStats {
        let mut t = BinStats::default();
        for b in &self.bins {
            t.merge(b);
        }
        t.merge(&self.missing);
        t
    }
}

/// Rows reaching a node together with their gradient sums.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub rows: Vec<usize>,
    pub sum_grad: f64,
    pub sum_hess: f64,
}

impl NodeStats {
    pub fn new(rows: Vec<usize>, grads: &[GradientPair]) -> Self {
        let (sum_grad, sum_hess) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + grads[r].grad, h + grads[r].hess)
        });
        NodeStats {
            rows,
            sum_grad,
            sum_hess,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Accumulates gradient, hessian and count per bin over the node's rows.
pub fn build_histogram(
    bds: &BinnedDataset,
    feature: usize,
    node: &NodeStats,
    grads: &[GradientPair],
) -> FeatureHistogram {
    let f = &bds.features[feature];
    let missing_bin = f.mapper.missing_bin();
    let mut hist = FeatureHistogram::zeros(f.mapper.num_value_bins());
    for &r in &node.rows {
        let b = f.bins[r];
        if b == missing_bin {
            hist.missing.add(grads[r]);
        } else {
            hist.bins[b as usize].add(grads[r]);
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{bin_features, Dataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gp(grad: f64, hess: f64) -> GradientPair {
        GradientPair { grad, hess }
    }

    #[test]
    fn single_row_lands_in_its_bin() {
        let values: Vec<f64> = (0..6).map(f64::from).collect();
        let ds = Dataset::from_numeric(vec![("x".into(), values)], vec![0.0; 6]).unwrap();
        let bds = bin_features(&ds, 255, 1);
        let grads = vec![gp(0.0, 0.0); 6];
        let mut grads = grads;
        grads[3] = gp(0.5, 1.0);
        let node = NodeStats::new(vec![3], &grads);
        let hist = build_histogram(&bds, 0, &node, &grads);
        for (b, stats) in hist.bins.iter().enumerate() {
            if b == 3 {
                assert_eq!(
                    *stats,
                    BinStats {
                        sum_grad: 0.5,
                        sum_hess: 1.0,
                        count: 1
                    }
                );
            } else {
                assert_eq!(*stats, BinStats::default());
            }
        }
        assert_eq!(hist.missing, BinStats::default());
    }

    #[test]
    fn histogram_sums_match_node_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    f64::NAN
                } else {
                    rng.random_range(0..20) as f64
                }
            })
            .collect();
        let ds = Dataset::from_numeric(vec![("x".into(), values)], vec![0.0; n]).unwrap();
        let bds = bin_features(&ds, 8, 3);
        let grads: Vec<GradientPair> = (0..n)
            .map(|_| gp(rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let node = NodeStats::new((0..n).collect(), &grads);
        let hist = build_histogram(&bds, 0, &node, &grads);
        let total = hist.total();
        // Direct summation in row order.
        let direct_g: f64 = grads.iter().map(|g| g.grad).sum();
        let direct_h: f64 = grads.iter().map(|g| g.hess).sum();
        assert_eq!(total.count, n);
        assert!((total.sum_grad - direct_g).abs() < 1e-12);
        assert!((total.sum_hess - direct_h).abs() < 1e-12);
        assert!((node.sum_grad - direct_g).abs() < 1e-12);
    }
}
