//! Synthetic data generators used by the benchmark and stacking suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::dataset::{ColumnData, Dataset, FeatureColumn};

/// Weight of each informative feature in [`binary_classification`].
pub const INFORMATIVE_WEIGHT: f64 = 1.5;

/// Binary labels from a noisy linear score: features are standard normal,
/// `y = 1[w * (x_0 + ... + x_{m-1}) + e > 0]` with `e ~ N(0, 1)` and
/// `m = n_informative`. Remaining features are pure noise.
pub fn binary_classification(
    n_rows: usize,
    n_features: usize,
    n_informative: usize,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut columns = vec![Vec::new(); n_features];
    let mut target = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut latent = normal.sample(&mut rng);
        for (j, col) in columns.iter_mut().enumerate() {
            let x = normal.sample(&mut rng);
            if j < n_informative {
                latent += INFORMATIVE_WEIGHT * x;
            }
            col.push(x);
        }
        target.push(f64::from(u8::from(latent > 0.0)));
    }
    Dataset::from_numeric(
        columns
            .into_iter()
            .enumerate()
            .map(|(j, c)| (format!("x{j}"), c))
            .collect(),
        target,
    )
    .expect("columns share the target length")
}

/// Clinical-style binary table with numeric and categorical columns and a
/// few missing cells, shaped like the public heart-disease data.
pub fn mixed_classification(n_rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let chest = ["ASY", "NAP", "ATA", "TA"];
    let slope = ["Flat", "Up", "Down"];
    let chest_effect = [1.2, -0.4, -0.9, 0.1];
    let slope_effect = [1.0, -1.0, 0.3];

    let (mut age, mut max_hr, mut oldpeak) = (Vec::new(), Vec::new(), Vec::new());
    let (mut cp, mut st) = (Vec::new(), Vec::new());
    let mut target = Vec::new();
    for _ in 0..n_rows {
        let a: f64 = normal.sample(&mut rng);
        let hr: f64 = normal.sample(&mut rng);
        let op: f64 = normal.sample(&mut rng);
        let c = rng.random_range(0..chest.len());
        let s = rng.random_range(0..slope.len());
        let latent = 0.5 * a - 0.8 * hr
            + 0.6 * op
            + chest_effect[c]
            + slope_effect[s]
            + normal.sample(&mut rng);
        age.push((54.0 + 9.0 * a).round());
        max_hr.push(if rng.random_bool(0.03) {
            f64::NAN
        } else {
            (137.0 + 25.0 * hr).round()
        });
        oldpeak.push(((0.9 + op).max(0.0) * 10.0).round() / 10.0);
        cp.push(Some(c as u32));
        st.push(if rng.random_bool(0.03) {
            None
        } else {
            Some(s as u32)
        });
        target.push(f64::from(u8::from(latent > 0.0)));
    }
    let levels = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
    let columns = vec![
        FeatureColumn {
            name: "Age".into(),
            data: ColumnData::Numeric(age),
        },
        FeatureColumn {
            name: "ChestPainType".into(),
            data: ColumnData::Categorical {
                codes: cp,
                levels: levels(&chest),
            },
        },
        FeatureColumn {
            name: "MaxHR".into(),
            data: ColumnData::Numeric(max_hr),
        },
        FeatureColumn {
            name: "Oldpeak".into(),
            data: ColumnData::Numeric(oldpeak),
        },
        FeatureColumn {
            name: "ST_Slope".into(),
            data: ColumnData::Categorical {
                codes: st,
                levels: levels(&slope),
            },
        },
    ];
    Dataset::new(columns, "HeartDisease", target).expect("consistent columns")
}

/// Layout of [`stock_regression`] tables.
pub const N_RELATIVE: usize = 8;
pub const N_STATIC: usize = 8;
pub const N_SECTORS: usize = 6;
/// Dead zone of the buy/hold/sell labelling.
pub const ACTION_BAND: f64 = 0.05;

/// Stock-performance style regression table: relative-change features
/// `dI1..dI8`, static indicator features `I1..I8`, a categorical `Group`
/// sector and a heavy-tailed continuous `Perform` target. Relative features
/// carry most of the signal.
pub fn stock_regression(n_rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let tails = StudentT::new(3.0).expect("valid dof");
    let sector_effect = [0.04, -0.03, 0.0, 0.02, -0.05, 0.01];

    let mut rel = vec![Vec::new(); N_RELATIVE];
    let mut stat = vec![Vec::new(); N_STATIC];
    let mut group = Vec::with_capacity(n_rows);
    let mut perform = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let d: Vec<f64> = (0..N_RELATIVE).map(|_| normal.sample(&mut rng)).collect();
        // Static levels are loosely tied to their relative changes.
        let s: Vec<f64> = (0..N_STATIC)
            .map(|j| 0.5 * d[j] + normal.sample(&mut rng))
            .collect();
        let g = rng.random_range(0..N_SECTORS);
        let signal = 0.06 * d[0] + 0.04 * d[1] - 0.03 * d[2]
            + 0.03 * (d[3] * d[4]).tanh()
            + 0.02 * s[0]
            + sector_effect[g];
        let noise = 0.05 * tails.sample(&mut rng);
        for (col, v) in rel.iter_mut().zip(&d) {
            col.push(*v);
        }
        for (col, v) in stat.iter_mut().zip(&s) {
            col.push(*v);
        }
        group.push(Some(g as u32));
        perform.push(signal + noise);
    }

    let mut columns: Vec<FeatureColumn> = Vec::new();
    for (j, col) in rel.into_iter().enumerate() {
        columns.push(FeatureColumn {
            name: format!("dI{}", j + 1),
            data: ColumnData::Numeric(col),
        });
    }
    for (j, col) in stat.into_iter().enumerate() {
        columns.push(FeatureColumn {
            name: format!("I{}", j + 1),
            data: ColumnData::Numeric(col),
        });
    }
    columns.push(FeatureColumn {
        name: "Group".into(),
        data: ColumnData::Categorical {
            codes: group,
            levels: (0..N_SECTORS).map(|g| format!("sector{g}")).collect(),
        },
    });
    Dataset::new(columns, "Perform", perform).expect("consistent columns")
}

/// Buy (+1) / hold (0) / sell (-1) labels from continuous performance.
pub fn actions_from_perform(perform: &[f64]) -> Vec<i8> {
    perform
        .iter()
        .map(|&p| {
            if p < -ACTION_BAND {
                -1
            } else if p > ACTION_BAND {
                1
            } else {
                0
            }
        })
        .collect()
}
